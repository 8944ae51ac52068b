"""Sampled checks of the weight-continuity and weight-decay conditions, and trace statistics.

The two conditions quantify over all large queue states, so they are probed
by sampling on norm shells {||q||_1 = B}. Reports give deviation envelopes and
the witnesses that attain them; pass/fail thresholds are the caller's.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .queueing import SimTrace

PERTURBATION_NORMS = ("linf", "l1", "l2")


@dataclass(frozen=True)
class ConditionProbe:
    """Sampling plan: shells ||q||_1 = B, perturbations of size < C1, bounded-queue threshold C2."""

    norm_levels: tuple[float, ...]
    samples_per_level: int = 2000
    C1: float = 10.0
    C2: float = 10.0
    seed: int = 0
    perturbation_norm: str = "linf"

    def __post_init__(self):
        levels = tuple(float(b) for b in self.norm_levels)
        if not levels or any(b <= 0 for b in levels):
            raise ConfigError("norm levels must be positive")
        if any(b2 <= b1 for b1, b2 in zip(levels, levels[1:])):
            raise ConfigError("norm levels must be strictly increasing")
        if self.samples_per_level < 1:
            raise ConfigError("samples_per_level must be >= 1")
        if not (self.C1 > 0 and self.C2 > 0):
            raise ConfigError("C1 and C2 must be positive")
        if self.perturbation_norm not in PERTURBATION_NORMS:
            raise ConfigError(f"perturbation_norm must be one of {PERTURBATION_NORMS}")
        object.__setattr__(self, "norm_levels", levels)

    def level_rngs(self, tag: int) -> list[np.random.Generator]:
        # tag separates the two conditions so they never share draws
        ss = np.random.SeedSequence([self.seed, tag])
        return [np.random.Generator(np.random.Philox(c)) for c in ss.spawn(len(self.norm_levels))]


def sample_shell(rng: np.random.Generator, B: float, M: int, n: int) -> np.ndarray:
    """n points uniform on {q >= 0, ||q||_1 = B}."""
    return rng.dirichlet(np.ones(M), size=n) * B


def sample_perturbation(rng: np.random.Generator, radius: float, M: int, n: int, norm: str) -> np.ndarray:
    """n points uniform in the open ball of the given norm."""
    if norm == "linf":
        return rng.uniform(-radius, radius, size=(n, M))
    if norm == "l2":
        g = rng.standard_normal((n, M))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * radius * rng.random((n, 1)) ** (1.0 / M)
    # l1: uniform on the cross-polytope via random signs on a scaled simplex point
    e = rng.exponential(size=(n, M + 1))
    pts = e[:, :M] / e.sum(axis=1, keepdims=True)
    return pts * rng.choice([-1.0, 1.0], size=(n, M)) * radius


def _batch_weights(policy, q: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(policy.weights(q), dtype=float)
        if out.shape == q.shape:
            return out
    except Exception:
        pass
    return np.array([policy.weights(row) for row in q])


def deviation(policy, q, dq) -> tuple[float, int]:
    """max_i |mu_i(max(q + dq, 0)) - mu_i(q)| and the maximising user."""
    q = np.asarray(q, dtype=float)
    d = np.abs(policy.weights(np.maximum(q + np.asarray(dq, dtype=float), 0.0)) - policy.weights(q))
    i = int(np.argmax(d))
    return float(d[i]), i


@dataclass(frozen=True)
class Witness:
    q: list[float]
    dq: list[float] | None
    user: int
    value: float


@dataclass(frozen=True)
class LevelResult:
    B: float
    delta: float
    witness: Witness


def check_condition1(policy, probe: ConditionProbe, M: int) -> list[LevelResult]:
    """Per shell, the largest weight change under a bounded queue perturbation."""
    out = []
    for B, rng in zip(probe.norm_levels, probe.level_rngs(1)):
        n = probe.samples_per_level
        q = sample_shell(rng, B, M, n)
        dq = sample_perturbation(rng, probe.C1, M, n, probe.perturbation_norm)
        d = np.abs(_batch_weights(policy, np.maximum(q + dq, 0.0)) - _batch_weights(policy, q))
        k, i = np.unravel_index(int(np.argmax(d)), d.shape)
        # re-evaluate singly so the witness reproduces bitwise through deviation()
        value, user = deviation(policy, q[k], dq[k])
        out.append(LevelResult(B, value, Witness(q[k].tolist(), dq[k].tolist(), user, value)))
    return out


def check_condition2(policy, probe: ConditionProbe, M: int) -> list[LevelResult]:
    """Per shell, the largest weight held by a user whose queue is below C2."""
    out = []
    for B, rng in zip(probe.norm_levels, probe.level_rngs(2)):
        n = probe.samples_per_level
        users = rng.integers(0, M, size=n)
        small = rng.uniform(0.0, min(probe.C2, B), size=n)
        # the other users share the rest of the shell so that ||q||_1 stays B
        rest = sample_shell(rng, 1.0, M - 1, n) * (B - small)[:, None] if M > 1 else np.zeros((n, 0))
        q = np.empty((n, M))
        for k in range(n):
            q[k] = np.insert(rest[k], users[k], small[k])
        w = _batch_weights(policy, q)[np.arange(n), users]
        k = int(np.argmax(w))
        value = float(policy.weights(q[k])[users[k]])
        out.append(LevelResult(B, value, Witness(q[k].tolist(), None, int(users[k]), value)))
    return out


@dataclass
class ConditionReport:
    policy: str
    levels: list[dict]
    verdicts: dict
    label: str = "empirical"

    def to_dict(self) -> dict:
        return {"policy": self.policy, "label": self.label, "levels": self.levels, "verdicts": self.verdicts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def condition_report(policy, probe: ConditionProbe, M: int, eps1: float, eps2: float) -> ConditionReport:
    """Both conditions on every shell; verdicts judge the largest shell against eps1, eps2."""
    c1 = check_condition1(policy, probe, M)
    c2 = check_condition2(policy, probe, M)
    levels = [
        {
            "B": a.B,
            "delta1": a.delta,
            "delta2": b.delta,
            "witnesses": {"condition1": asdict(a.witness), "condition2": asdict(b.witness)},
        }
        for a, b in zip(c1, c2)
    ]
    verdicts = {
        "condition1": "pass" if c1[-1].delta <= eps1 else "fail",
        "condition2": "pass" if c2[-1].delta <= eps2 else "fail",
        "eps1": eps1,
        "eps2": eps2,
        "judged_at_B": probe.norm_levels[-1],
    }
    name = getattr(policy, "name", type(policy).__name__)
    return ConditionReport(name, levels, verdicts)


@dataclass(frozen=True)
class NecessityStats:
    """Slot fractions of large weight jumps and of weight held by short queues.

    ``jump_fraction`` counts n in [0, N-2] with ||mu(n+1) - mu(n)|| >= eps over N - 1
    transitions. ``stuck_weight_fraction[i]`` counts slots with q_i < C2 and
    mu_i >= eps over all N slots.
    """

    eps: float
    C2: float
    norm: str
    jump_fraction: float
    stuck_weight_fraction: tuple[float, ...]
    n_slots: int
    label: str = field(default="empirical")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stuck_weight_fraction"] = list(self.stuck_weight_fraction)
        return d


_ORD = {"l1": 1, "l2": 2, "linf": np.inf}


def necessity_stats(trace: SimTrace, eps: float, C2: float, norm: str = "l1") -> NecessityStats:
    """Exact counts over the weights recorded in the trace."""
    N = trace.horizon
    if N < 2:
        raise DomainError("necessity statistics need a trace of at least 2 slots")
    if norm not in _ORD:
        raise ConfigError(f"norm must be one of {tuple(_ORD)}")
    jumps = np.linalg.norm(np.diff(trace.mu, axis=0), ord=_ORD[norm], axis=1) >= eps
    stuck = (trace.mu >= eps) & (trace.q < C2)
    return NecessityStats(
        eps=float(eps),
        C2=float(C2),
        norm=norm,
        jump_fraction=int(jumps.sum()) / (N - 1),
        stuck_weight_fraction=tuple(int(c) / N for c in stuck.sum(axis=0)),
        n_slots=N,
    )
