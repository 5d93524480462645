"""Server-side aggregation: weighted FedAvg and golden-section fine-tuned aggregation (FTA).

FTA scales the sample-weighted mean client delta by a fine ratio ``sigma``
chosen by golden-section search on the validation loss::

    new_head = global_head + sigma * sum_k (n_k / N) * (local_head_k - global_head)

``sigma = 1`` is plain FedAvg.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ParamVector, pv_axpy, pv_sub, pv_weighted_mean
from .errors import ArgumentError, DimensionError, NumericError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LocalUpdate:
    client_id: int
    head: ParamVector
    n_k: int

    def __post_init__(self):
        if self.n_k < 1:
            raise ArgumentError(f"client {self.client_id}: sample count must be >= 1, got {self.n_k}")


@dataclass(frozen=True)
class GssConfig:
    x_lower: float = 0.0
    x_upper: float = 2.0
    tol: float = 0.01
    max_iter: int = 50
    reuse_probes: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.x_lower) and math.isfinite(self.x_upper)):
            raise ArgumentError("GSS bounds must be finite")
        if not self.x_lower < self.x_upper:
            raise ArgumentError(f"x_lower ({self.x_lower}) must be below x_upper ({self.x_upper})")
        if not 0 < self.tol < self.x_upper - self.x_lower:
            raise ArgumentError(f"tol must lie in (0, x_upper - x_lower), got {self.tol}")
        if self.max_iter < 1:
            raise ArgumentError(f"max_iter must be positive, got {self.max_iter}")


@dataclass
class GssTrace:
    """Result of one golden-section run.

    ``brackets[i]`` is the interval before iteration ``i``; the last entry is
    the final interval, so ``len(brackets) == iterations + 1``.
    """

    x: float
    iterations: int
    brackets: list[tuple[float, float]] = field(default_factory=list)
    evaluations: list[tuple[float, float]] = field(default_factory=list)


def _evaluate(objective: Callable[[float], float], x: float, trace: GssTrace) -> float:
    fx = float(objective(x))
    if not math.isfinite(fx):
        raise NumericError(f"objective is not finite at x={x!r}: {fx}", x=x)
    trace.evaluations.append((x, fx))
    return fx


def gss_minimize(objective: Callable[[float], float], cfg: GssConfig | None = None) -> GssTrace:
    """Golden-section search for a minimum of ``objective`` on ``[x_lower, x_upper]``.

    Each iteration probes ``x1 = hi - phi*(hi - lo)`` and ``x2 = lo + phi*(hi - lo)``;
    if ``f(x1) < f(x2)`` the upper bound moves to ``x2``, otherwise (ties
    included) the lower bound moves to ``x1``. Stops once the bracket is no
    wider than ``tol`` or after ``max_iter`` iterations and returns the
    bracket midpoint.

    By default both probes are evaluated every iteration. With
    ``reuse_probes`` the surviving interior probe and its value are carried
    over, halving the evaluation count.
    """
    cfg = cfg or GssConfig()
    lo, hi = float(cfg.x_lower), float(cfg.x_upper)
    trace = GssTrace(x=math.nan, iterations=0, brackets=[(lo, hi)])
    carried: tuple[str, float, float] | None = None  # (which probe, x, f)

    while hi - lo > cfg.tol and trace.iterations < cfg.max_iter:
        width = hi - lo
        x1 = hi - GOLDEN * width
        x2 = lo + GOLDEN * width
        if carried is not None and carried[0] == "x1":
            x1, f1 = carried[1], carried[2]
            f2 = _evaluate(objective, x2, trace)
        elif carried is not None and carried[0] == "x2":
            x2, f2 = carried[1], carried[2]
            f1 = _evaluate(objective, x1, trace)
        else:
            f1 = _evaluate(objective, x1, trace)
            f2 = _evaluate(objective, x2, trace)

        if f1 < f2:
            hi = x2
            carried = ("x2", x1, f1) if cfg.reuse_probes else None
        else:
            lo = x1
            carried = ("x1", x2, f2) if cfg.reuse_probes else None
        trace.iterations += 1
        trace.brackets.append((lo, hi))

    trace.x = (lo + hi) / 2.0
    return trace


@dataclass
class AggregationResult:
    new_head: ParamVector
    sigma: float
    evaluations: list[tuple[float, float]] = field(default_factory=list)
    iterations: int = 0


def _sorted_updates(global_head: ParamVector, updates: Sequence[LocalUpdate]) -> list[LocalUpdate]:
    if not updates:
        raise ArgumentError("no local updates to aggregate")
    for u in updates:
        if len(u.head) != len(global_head):
            raise DimensionError(
                f"client {u.client_id}: head has {len(u.head)} entries, global head has {len(global_head)}"
            )
    return sorted(updates, key=lambda u: u.client_id)


def fedavg_aggregate(global_head: ParamVector, updates: Sequence[LocalUpdate]) -> ParamVector:
    """Sample-count-weighted mean of the local heads (summed in client-id order)."""
    ordered = _sorted_updates(global_head, updates)
    return pv_weighted_mean([u.head for u in ordered], [u.n_k for u in ordered])


def aggregate_delta(global_head: ParamVector, updates: Sequence[LocalUpdate]) -> ParamVector:
    """``sum_k (n_k / N) * (local_head_k - global_head)``."""
    ordered = _sorted_updates(global_head, updates)
    return pv_weighted_mean([pv_sub(u.head, global_head) for u in ordered], [u.n_k for u in ordered])


def apply_fine_ratio(global_head: ParamVector, delta: ParamVector, sigma: float) -> ParamVector:
    return pv_axpy(sigma, delta, global_head)


def fta_aggregate(
    global_head: ParamVector,
    updates: Sequence[LocalUpdate],
    evaluate_loss: Callable[[ParamVector], float],
    cfg: GssConfig | None = None,
) -> AggregationResult:
    """Fine-tuned aggregation: golden-section search over the fine ratio.

    ``evaluate_loss`` maps a candidate global head to its validation loss.
    """
    cfg = cfg or GssConfig()
    delta = aggregate_delta(global_head, updates)

    def objective(sigma: float) -> float:
        return evaluate_loss(apply_fine_ratio(global_head, delta, sigma))

    trace = gss_minimize(objective, cfg)
    return AggregationResult(
        new_head=apply_fine_ratio(global_head, delta, trace.x),
        sigma=trace.x,
        evaluations=list(trace.evaluations),
        iterations=trace.iterations,
    )


def expected_iterations(width: float, tol: float) -> int:
    """Iterations golden-section search needs to shrink ``width`` to ``tol``."""
    return max(0, math.ceil(math.log(tol / width) / math.log(GOLDEN)))


def is_unimodal(values: Sequence[float] | np.ndarray) -> bool:
    """True when ``values`` is non-increasing up to its argmin and non-decreasing after."""
    v = np.asarray(values, dtype=np.float64)
    i = int(np.argmin(v))
    return bool(np.all(np.diff(v[: i + 1]) <= 0) and np.all(np.diff(v[i:]) >= 0))
