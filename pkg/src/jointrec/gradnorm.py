"""Adaptive two-task loss balancing on shared parameters, plus the combined
model/weight update step.

Per step, each task's gradient norm on the shared parameters is compared
against the mean norm scaled by the task's relative training rate r_i^gamma;
the weights descend the summed absolute mismatch (with the mean norm and
rates treated as constants) and are renormalized to sum to the task count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Parameters, Tensor

log = logging.getLogger(__name__)

TASKS = ("ssl", "ltr")
WEIGHT_FLOOR = 1e-4
INIT_LOSS_FLOOR = 1e-8


class NonFiniteLossError(RuntimeError):
    """A training step produced NaN/Inf; carries the offending loss values."""


@dataclass
class TaskWeights:
    """Balancer state: one positive weight per task, kept at sum == 2."""

    gamma: float = 1.0
    lr_w: float = 0.025
    warmup_steps: int = 1   # >1 averages the first k losses into L(0)
    enabled: bool = True
    w: dict[str, float] = field(default_factory=lambda: {t: 1.0 for t in TASKS})
    initial_losses: dict[str, float] | None = None
    _warm_acc: dict[str, list] = field(default_factory=dict, repr=False)

    def as_tuple(self):
        return tuple(self.w[t] for t in TASKS)

    def _record_initial(self, losses: dict[str, float]):
        for t in TASKS:
            self._warm_acc.setdefault(t, []).append(losses[t])
        if len(self._warm_acc[TASKS[0]]) >= self.warmup_steps:
            init = {}
            for t in TASKS:
                v = float(np.mean(self._warm_acc[t]))
                if v <= 0:
                    log.warning("initial loss for %s is %g; clamping to %g",
                                t, v, INIT_LOSS_FLOOR)
                    v = INIT_LOSS_FLOOR
                init[t] = v
            self.initial_losses = init

    def relative_rates(self, losses: dict[str, float]) -> dict[str, float]:
        """r_i = (L_i / L_i(0)) normalized to mean 1 across tasks."""
        init = self.initial_losses
        ratios = {t: losses[t] / init[t] for t in TASKS}
        m = float(np.mean(list(ratios.values())))
        if m <= 0:
            return {t: 1.0 for t in TASKS}
        return {t: ratios[t] / m for t in TASKS}

    def update(self, grad_norms: dict[str, float], losses: dict[str, float]):
        """One weight step from this batch's task gradient norms and losses.

        grad_norms are the *weighted* norms G_i = ||grad(w_i L_i)||; the
        mean norm and the rates are detached, so dG_i/dw_i = G_i / w_i and
        the descent direction is sign(G_i - mean * r_i^gamma) * G_i / w_i.
        """
        if self.initial_losses is None:
            self._record_initial(losses)
            if self.initial_losses is None:
                return  # still warming up
        if not self.enabled:
            return
        rates = self.relative_rates(losses)
        mean_norm = float(np.mean([grad_norms[t] for t in TASKS]))
        for t in TASKS:
            gap = grad_norms[t] - mean_norm * rates[t] ** self.gamma
            meta_grad = np.sign(gap) * grad_norms[t] / self.w[t]
            self.w[t] = self.w[t] - self.lr_w * meta_grad
        self.renormalize()

    def renormalize(self):
        for t in TASKS:
            self.w[t] = max(self.w[t], WEIGHT_FLOOR)
        total = sum(self.w.values())
        for t in TASKS:
            self.w[t] *= len(TASKS) / total

    def meta_loss(self, grad_norms: dict[str, float],
                  losses: dict[str, float]) -> float:
        rates = self.relative_rates(losses)
        mean_norm = float(np.mean([grad_norms[t] for t in TASKS]))
        return sum(abs(grad_norms[t] - mean_norm * rates[t] ** self.gamma)
                   for t in TASKS)


def shared_grad_norm(params: Parameters, table_name: str, source_rows,
                     weight: float = 1.0) -> float:
    """L2 norm of the embedding-table gradient restricted to source rows.

    The caller backpropagates the *unweighted* task loss first; linearity
    gives ||grad(w L)|| = w ||grad L||.
    """
    grad = params[table_name].grad
    rows = np.asarray(source_rows, dtype=np.int64)
    return float(weight * np.sqrt(np.sum(grad[rows] ** 2)))


def dual_update(params: Parameters, weights: TaskWeights, loss_ssl: Tensor,
                loss_ltr: Tensor, source_rows, lr: float,
                table_name: str = "gnn.embed",
                trainable_prefix: str = "") -> dict:
    """One combined step: model parameters descend the weighted total loss,
    task weights descend the balancing objective, then renormalize.

    Returns step diagnostics (losses, per-task shared-gradient norms, the
    weights used for the parameter step).
    """
    ssl_val, ltr_val = loss_ssl.item(), loss_ltr.item()
    if not (np.isfinite(ssl_val) and np.isfinite(ltr_val)):
        raise NonFiniteLossError(
            f"non-finite batch losses: ssl={ssl_val}, ltr={ltr_val}")
    w_ssl, w_ltr = weights.w["ssl"], weights.w["ltr"]

    # one backward per task; the weighted-total gradient follows by linearity
    params.zero_grads()
    loss_ssl.backward()
    g_ssl = params.snapshot_grads()
    norm_ssl = (shared_grad_norm(params, table_name, source_rows, w_ssl)
                if table_name in params else 0.0)

    params.zero_grads()
    loss_ltr.backward()
    norm_ltr = (shared_grad_norm(params, table_name, source_rows, w_ltr)
                if table_name in params else 0.0)
    for name, t in params.items():
        t.grad = w_ltr * t.grad + w_ssl * g_ssl[name]

    params.sgd_step(lr, prefix=trainable_prefix)
    weights.update({"ssl": norm_ssl, "ltr": norm_ltr},
                   {"ssl": ssl_val, "ltr": ltr_val})
    return {
        "loss_ssl": ssl_val,
        "loss_ltr": ltr_val,
        "grad_norm_ssl": norm_ssl,
        "grad_norm_ltr": norm_ltr,
        "w_ssl": w_ssl,
        "w_ltr": w_ltr,
    }
