"""Empirical stability classification of simulated traces.

Verdicts are heuristics over a finite path: a least-squares growth slope of
||q||_1 over the final part of the trace, visits to a bounded set, and the
running mean of a potential f. Every threshold is stored in the report so a
verdict can be recomputed from the report alone.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .conditions import NecessityStats
from .errors import DomainError
from .queueing import SimTrace

MIN_TRACE = 1000
DEFAULT_WINDOW_FRACTION = 0.5
UNSTABLE_FACTOR = 10.0
SIGNIFICANCE = 3.0


def ols_slope(y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of y against its index, with the i.i.d.-residual standard error."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 3:
        raise DomainError("slope needs at least 3 points")
    x = np.arange(n, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    stderr = float(np.sqrt((resid @ resid) / (n - 2) / sxx))
    return slope, stderr


def _f_values(trace: SimTrace, potential) -> np.ndarray:
    if potential is None:
        return trace.q.sum(axis=1)
    return np.asarray(potential.f(trace.q), dtype=float)


def f_running_mean(trace: SimTrace, potential=None) -> np.ndarray:
    """(1/n) * sum_{k<n} f(q(k)) for n = 1..N; f defaults to ||q||_1."""
    f = _f_values(trace, potential)
    return np.cumsum(f) / np.arange(1, f.shape[0] + 1)


def occupation_count(trace: SimTrace, B: float, start: int = 0) -> int:
    """Number of slots n >= start with ||q(n)||_1 <= B."""
    return int(np.count_nonzero(trace.q[start:].sum(axis=1) <= B))


def decide(slope: float, stderr: float, late_visits: int, slope_tol: float) -> str:
    if slope <= slope_tol and late_visits > 0:
        return "stable"
    if slope >= UNSTABLE_FACTOR * slope_tol and abs(slope) > SIGNIFICANCE * stderr:
        return "unstable"
    return "inconclusive"


@dataclass
class StabilityReport:
    slope: float
    slope_stderr: float
    window_fraction: float
    f_running_mean_end: float
    f_running_mean_half: float
    f_kind: str
    occupation_bound: float
    occupation_count: int
    occupation_count_final_quarter: int
    slope_tol: float
    verdict: str
    n_slots: int
    necessity: dict | None = None
    label: str = "empirical single-path"

    def recompute_verdict(self) -> str:
        return decide(self.slope, self.slope_stderr, self.occupation_count_final_quarter, self.slope_tol)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def classify(trace: SimTrace, potential=None, B: float = 50.0, slope_tol: float = 1e-3,
             window_fraction: float = DEFAULT_WINDOW_FRACTION,
             necessity: NecessityStats | None = None) -> StabilityReport:
    """Growth slope, occupation counts and running-mean summary, plus a verdict.

    stable: slope <= slope_tol and at least one visit to {||q||_1 <= B} in the final quarter.
    unstable: slope >= 10 * slope_tol and |slope| > 3 * stderr.
    Anything else is inconclusive.
    """
    N = trace.horizon
    if N < MIN_TRACE:
        raise DomainError(f"trace has {N} slots; classification needs at least {MIN_TRACE}")
    if not 0 < window_fraction <= 1:
        raise DomainError("window_fraction must lie in (0, 1]")
    norm1 = trace.q.sum(axis=1)
    start = N - max(3, int(round(window_fraction * N)))
    slope, stderr = ols_slope(norm1[start:])
    rm = f_running_mean(trace, potential)
    late = occupation_count(trace, B, start=N - N // 4)
    return StabilityReport(
        slope=slope,
        slope_stderr=stderr,
        window_fraction=window_fraction,
        f_running_mean_end=float(rm[-1]),
        f_running_mean_half=float(rm[N // 2 - 1]),
        f_kind="l1" if potential is None else potential.kind,
        occupation_bound=float(B),
        occupation_count=occupation_count(trace, B),
        occupation_count_final_quarter=late,
        slope_tol=float(slope_tol),
        verdict=decide(slope, stderr, late, slope_tol),
        n_slots=N,
        necessity=None if necessity is None else necessity.to_dict(),
    )


def plot_data_csv(trace: SimTrace, potential=None) -> str:
    """Columns n, ||q||_1, running mean of f."""
    rm = f_running_mean(trace, potential)
    norm1 = trace.q.sum(axis=1)
    buf = io.StringIO()
    buf.write("n,q_l1,f_running_mean\n")
    for n in range(trace.horizon):
        buf.write(f"{n},{norm1[n]:.17g},{rm[n]:.17g}\n")
    return buf.getvalue()
