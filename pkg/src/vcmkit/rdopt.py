"""Rate-distortion tooling: curves, Bjontegaard deltas, budget allocation.

Budget allocation maximizes the weighted sum of per-task qualities subject
to a total rate bound, picking one operating point per task. The search is
a per-task dynamic program over Pareto-pruned (rate, objective) tables,
which is exact: pruning only removes states that can never beat a kept one.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.integrate import trapezoid

from .errors import (
    ContractError,
    DegenerateCurveError,
    IncomparableCurvesError,
    InfeasibleBudgetError,
    ValidationError,
)

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class RdPoint:
    rate_kbps: float
    quality: float

    def __post_init__(self):
        if not (np.isfinite(self.rate_kbps) and self.rate_kbps > 0):
            raise ValidationError(f"rate must be positive and finite, got {self.rate_kbps}")
        if not np.isfinite(self.quality):
            raise ValidationError(f"quality must be finite, got {self.quality}")


@dataclass(frozen=True)
class RdCurve:
    points: tuple[RdPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) < 2:
            raise ValidationError(f"curve needs at least 2 points, got {len(pts)}")
        rates = [p.rate_kbps for p in pts]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValidationError("curve rates must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_kbps for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    weight: float
    curve: RdCurve
    level: int = 0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValidationError(f"weight must be in [0,1], got {self.weight}")
        if self.level < 0:
            raise ValidationError(f"level must be non-negative, got {self.level}")


@dataclass(frozen=True)
class ResourceReport:
    s_f0: float
    s_pred: float
    s_model: float
    s_theta: float
    total: float
    budget: float
    chosen: tuple[tuple[int, str, float], ...]  # (level, predictor/task id, cost)

    @property
    def feasible(self) -> bool:
        return self.total <= self.budget


def build_rd_curve(
    evaluate: Callable[[object], tuple[float, float]], grid: Sequence[object]
) -> RdCurve:
    """Sweep the grid and keep the Pareto frontier, sorted by rate."""
    if not grid:
        raise ContractError("parameter grid is empty")
    pts = []
    for param in grid:
        rate, quality = evaluate(param)
        pts.append(RdPoint(float(rate), float(quality)))
    pts.sort(key=lambda p: (p.rate_kbps, -p.quality))
    frontier: list[RdPoint] = []
    for p in pts:
        if frontier and p.rate_kbps == frontier[-1].rate_kbps:
            continue  # same rate, lower or equal quality
        if frontier and p.quality <= frontier[-1].quality:
            continue  # dominated: pays more rate for no quality gain
        frontier.append(p)
    if len(frontier) < 2:
        raise DegenerateCurveError(
            f"sweep collapsed to {len(frontier)} frontier point(s)"
        )
    return RdCurve(tuple(frontier))


def bd_rate(reference: RdCurve, test: RdCurve) -> float:
    """Average rate difference (percent) of test vs reference at equal quality."""
    for name, curve in (("reference", reference), ("test", test)):
        if len(curve.points) < 3:
            raise ContractError(f"{name} curve needs >= 3 points for bd-rate")
        q = curve.qualities
        if any(b <= a for a, b in zip(q, q[1:])):
            raise ContractError(f"{name} curve quality must increase with rate")
    lo = max(reference.qualities.min(), test.qualities.min())
    hi = min(reference.qualities.max(), test.qualities.max())
    if hi <= lo:
        raise IncomparableCurvesError(
            f"no quality overlap: [{reference.qualities.min()}, {reference.qualities.max()}] "
            f"vs [{test.qualities.min()}, {test.qualities.max()}]"
        )
    ref_interp = PchipInterpolator(reference.qualities, np.log(reference.rates))
    test_interp = PchipInterpolator(test.qualities, np.log(test.rates))
    qs = np.linspace(lo, hi, 1025)
    mean_diff = trapezoid(test_interp(qs) - ref_interp(qs), qs) / (hi - lo)
    return 100.0 * math.expm1(mean_diff)


@dataclass(frozen=True)
class Allocation:
    selected: tuple[tuple[str, RdPoint], ...]
    objective: float
    report: ResourceReport


def _check_weights(tasks: Sequence[TaskSpec]) -> None:
    total = 0.0
    for t in tasks:
        total += t.weight
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ContractError(f"task weights must sum to 1, got {total!r}")


def allocate_budget(
    tasks: Sequence[TaskSpec],
    s_t: float,
    overheads: tuple[float, float] = (0.0, 0.0),
) -> Allocation:
    """Pick one curve point per task maximizing the weighted quality sum.

    Ties resolve to the lower total rate, then to the lexicographically
    smallest point-index tuple.
    """
    if not tasks:
        raise ContractError("no tasks to allocate")
    _check_weights(tasks)
    s_model, s_theta = overheads
    rate_budget = s_t - s_model - s_theta

    min_total = 0.0
    for t in tasks:
        min_total += t.curve.points[0].rate_kbps  # lowest rate (sorted)
    if min_total > rate_budget:
        raise InfeasibleBudgetError(min_total + s_model + s_theta - s_t)

    # states: (rate_sum, objective, choice indices), Pareto-pruned per task
    states: list[tuple[float, float, tuple[int, ...]]] = [(0.0, 0.0, ())]
    for task in tasks:
        grown = []
        for rate, value, picks in states:
            for idx, point in enumerate(task.curve.points):
                r = rate + point.rate_kbps
                if r <= rate_budget:
                    grown.append((r, value + task.weight * point.quality, picks + (idx,)))
        grown.sort(key=lambda s: (s[0], -s[1], s[2]))
        pruned = []
        best = -math.inf
        for s in grown:
            if s[1] > best:
                pruned.append(s)
                best = s[1]
        states = pruned

    rate, value, picks = min(states, key=lambda s: (-s[1], s[0], s[2]))
    selected = tuple(
        (task.task_id, task.curve.points[idx]) for task, idx in zip(tasks, picks)
    )
    entries = [
        (task.level, [(task.task_id, task.curve.points[idx].rate_kbps)])
        for task, idx in zip(tasks, picks)
    ]
    report = resource_report(entries, s_model, s_theta, s_t)
    return Allocation(selected=selected, objective=value, report=report)


def resource_report(
    entries: Sequence[tuple[int, Sequence[tuple[str, float]]]],
    s_model: float,
    s_theta: float,
    budget: float,
) -> ResourceReport:
    """Fill the constraint terms; multi-option levels take their cheapest predictor."""
    chosen = []
    s_f0 = 0.0
    s_pred = 0.0
    for level, options in entries:
        if not options:
            raise ContractError(f"level {level} has no cost options")
        label, cost = min(options, key=lambda o: o[1])
        chosen.append((level, label, cost))
        if level == 0:
            s_f0 += cost
        else:
            s_pred += cost
    total = s_f0 + s_pred + s_model + s_theta
    return ResourceReport(
        s_f0=s_f0,
        s_pred=s_pred,
        s_model=s_model,
        s_theta=s_theta,
        total=total,
        budget=budget,
        chosen=tuple(chosen),
    )


def write_rd_csv(curve: RdCurve, f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["rate_kbps", "quality"])
    for p in curve.points:
        w.writerow([repr(p.rate_kbps), repr(p.quality)])


def read_rd_csv(f) -> RdCurve:
    rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != ["rate_kbps", "quality"]:
        raise ValidationError("rd csv must start with a 'rate_kbps,quality' header")
    pts = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValidationError(f"rd csv line {i} has {len(row)} fields, expected 2")
        try:
            pts.append(RdPoint(float(row[0]), float(row[1])))
        except ValueError as e:
            raise ValidationError(f"rd csv line {i}: {e}") from e
    return RdCurve(tuple(pts))
