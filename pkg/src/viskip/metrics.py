"""Trajectory instrumentation: relative error, duality gap, iterate averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStartError, DimensionError, InfeasiblePointError
from .problems import MatrixGame

FEASIBILITY_TOL = 1e-9


def relative_error(x_k, x_0, x_star) -> float:
    """|x_k - x*|^2 / |x_0 - x*|^2."""
    x_k = np.asarray(x_k, dtype=np.float64)
    x_0 = np.asarray(x_0, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    denom = float(np.sum((x_0 - x_star) ** 2))
    if denom == 0.0:
        raise DegenerateStartError("x0 equals the solution; relative error undefined")
    return float(np.sum((x_k - x_star) ** 2)) / denom


def _check_simplex(v: np.ndarray, name: str):
    if np.min(v) < -FEASIBILITY_TOL or abs(float(np.sum(v)) - 1.0) > FEASIBILITY_TOL:
        raise InfeasiblePointError(f"{name} is not on the simplex (tolerance {FEASIBILITY_TOL})")


def duality_gap(game, x_hat, y_hat) -> float:
    """max_y f(x_hat, y) - min_x f(x, y_hat) over the simplices, for the mean payoff.

    ``game`` may be a MatrixGame (its payoff matrices are averaged) or a
    single payoff matrix.
    """
    if isinstance(game, MatrixGame):
        payoff = game.payoffs.mean(axis=0)
    else:
        payoff = np.asarray(game, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if payoff.shape != (x_hat.size, y_hat.size):
        raise DimensionError("payoff shape does not match the strategy dimensions")
    _check_simplex(x_hat, "x_hat")
    _check_simplex(y_hat, "y_hat")
    return float(np.max(payoff.T @ x_hat) - np.min(payoff @ y_hat))


class RunningAverage:
    """Incremental prefix mean with O(1) updates."""

    def __init__(self):
        self.count = 0
        self.mean = None

    def update(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if self.mean is None:
            self.mean = value.copy()
        else:
            self.mean += (value - self.mean) / (self.count + 1)
        self.count += 1
        return self.mean


def running_average(iterates) -> list[np.ndarray]:
    """Prefix means of a nonempty iterate sequence."""
    avg = RunningAverage()
    out = [avg.update(x).copy() for x in iterates]
    if not out:
        raise DimensionError("cannot average an empty iterate sequence")
    return out


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of one simulated round; None marks a metric that was not computed."""

    round: int
    communications: int
    relative_error: float | None = None
    lyapunov: float | None = None
    duality_gap: float | None = None
    wall_time_ns: int = 0

    def __post_init__(self):
        if all(v is None for v in (self.relative_error, self.lyapunov, self.duality_gap)):
            raise DimensionError("a round record needs at least one metric")


@dataclass
class Trajectory:
    """Ordered per-round records plus the fingerprint of the run that made them."""

    config_fingerprint: str
    seed: int
    records: list[RoundRecord] = field(default_factory=list)

    def append(self, record: RoundRecord):
        if self.records:
            last = self.records[-1]
            if record.round <= last.round:
                raise DimensionError("rounds must be strictly increasing")
            if record.communications < last.communications:
                raise DimensionError("communications must be nondecreasing")
        self.records.append(record)

    def final(self) -> RoundRecord:
        return self.records[-1]

    def first_reaching(self, target: float):
        """First record with relative error at or below target, else None."""
        for rec in self.records:
            if rec.relative_error is not None and rec.relative_error <= target:
                return rec
        return None
