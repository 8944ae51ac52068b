"""Queue evolution, arrival sampling, imperfect observation and trace simulation.

Slot length and packet size are both 1, so rates and queue contents share
units (bits). Within a slot the scheduler sees q(n), serves r(n), then the
arrivals a(n) land: q(n+1) = max(0, q(n) + a(n) - r(n)).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, PolicyError
from .rate_region import ChannelModel

RNG_ALGORITHM = "numpy-Philox4x64-10;SeedSequence.spawn[channel,arrivals]"
MEAN_TOL = 1e-12
DEFAULT_MAX_DELAY = 100


def make_streams(seed: int, n: int = 2) -> list[np.random.Generator]:
    """Independent Philox generators derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass(frozen=True)
class ArrivalDist:
    """Per-user arrival law with finite support.

    Constant and scaled-Bernoulli laws are stored as two-point (or one-point)
    discrete laws so every kind consumes exactly one uniform per draw.
    """

    kind: str
    values: tuple[float, ...]
    probs: tuple[float, ...]

    @classmethod
    def constant(cls, value: float) -> "ArrivalDist":
        return cls("constant", (float(value),), (1.0,))

    @classmethod
    def bernoulli(cls, size: float, p: float) -> "ArrivalDist":
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"Bernoulli probability {p} outside [0, 1]")
        if size <= 0:
            raise ConfigError("Bernoulli arrival size must be positive")
        return cls("bernoulli", (0.0, float(size)), (1.0 - p, float(p)))

    @classmethod
    def discrete(cls, values, probs) -> "ArrivalDist":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if len(values) != len(probs) or not values:
            raise ConfigError("discrete arrivals need matching nonempty values and probs")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError("discrete arrival probabilities must be >= 0 and sum to 1")
        return cls("discrete", values, probs)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def draw(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        return np.asarray(self.values)[np.minimum(idx, len(self.values) - 1)]


@dataclass(frozen=True)
class ArrivalModel:
    dists: tuple[ArrivalDist, ...]
    bound: float = np.inf
    means: tuple[float, ...] | None = None

    def __post_init__(self):
        dists = tuple(self.dists)
        object.__setattr__(self, "dists", dists)
        for i, d in enumerate(dists):
            if min(d.values) < 0 or max(d.values) > self.bound:
                raise ConfigError(
                    f"user {i}: arrival support {d.values} not within [0, {self.bound}]"
                )
        if self.means is not None:
            if len(self.means) != len(dists):
                raise ConfigError("declared means do not match the user count")
            for i, (m, d) in enumerate(zip(self.means, dists)):
                if abs(m - d.mean) > MEAN_TOL:
                    raise ConfigError(
                        f"user {i}: declared mean {m!r} differs from distribution mean {d.mean!r}"
                    )

    @property
    def M(self) -> int:
        return len(self.dists)

    @property
    def rho(self) -> np.ndarray:
        return np.array([d.mean for d in self.dists])

    @classmethod
    def constant(cls, rho, bound=np.inf):
        return cls(tuple(ArrivalDist.constant(x) for x in rho), bound)

    @classmethod
    def bernoulli(cls, rho, size: float, bound=None):
        bound = size if bound is None else bound
        return cls(tuple(ArrivalDist.bernoulli(size, x / size) for x in rho), bound)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.M,) if size is None else (size, self.M)
        u = rng.random(shape)
        out = np.empty(shape)
        for i, d in enumerate(self.dists):
            out[..., i] = d.draw(u[..., i])
        return out


def sample_arrivals(am: ArrivalModel, rng: np.random.Generator) -> np.ndarray:
    """One i.i.d. arrival vector; advances ``rng`` by exactly M uniforms."""
    return am.sample(rng)


@dataclass(frozen=True)
class ObservationModel:
    delay_slots: int = 0
    quantization_step: float = 0.0
    max_delay: int = DEFAULT_MAX_DELAY

    def __post_init__(self):
        if int(self.delay_slots) != self.delay_slots or self.delay_slots < 0:
            raise ConfigError("delay_slots must be a nonnegative integer")
        if self.delay_slots > self.max_delay:
            raise ConfigError(f"delay_slots {self.delay_slots} exceeds maximum {self.max_delay}")
        if not self.quantization_step >= 0:
            raise ConfigError("quantization_step must be >= 0")

    @property
    def exact(self) -> bool:
        return self.delay_slots == 0 and self.quantization_step == 0


def quantize(q: np.ndarray, step: float) -> np.ndarray:
    if step == 0:
        return np.array(q, dtype=float)
    return np.floor(np.asarray(q, dtype=float) / step) * step


def observe(history, om: ObservationModel, n: int) -> np.ndarray:
    """Queue state seen by the scheduler in slot n: q(n - delay), floored to the quantiser grid.

    ``history[k]`` is q(k); slots before the start clamp to q(0).
    """
    k = max(0, n - om.delay_slots)
    return quantize(history[k], om.quantization_step)


def step(q, r, a) -> tuple[np.ndarray, np.ndarray]:
    """One slot of the queue recursion; returns (q_next, idle residual z)."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    x = q + a - r
    z = np.where(x < 0, r - q - a, 0.0)
    return np.maximum(x, 0.0), z


@dataclass
class SimTrace:
    """Per-slot sample path. Row n holds q(n) and what happened during slot n."""

    q: np.ndarray
    qbar: np.ndarray
    mu: np.ndarray
    state: np.ndarray
    r: np.ndarray
    a: np.ndarray
    z: np.ndarray
    q_final: np.ndarray
    seed: int | None = None
    scenario_hash: str = ""
    rng_algorithm: str = RNG_ALGORITHM
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    @property
    def M(self) -> int:
        return self.q.shape[1]

    def __len__(self):
        return self.horizon

    def q_path(self) -> np.ndarray:
        """q(0), ..., q(N) including the state after the last slot."""
        return np.vstack([self.q, self.q_final[None, :]])

    def replay(self) -> np.ndarray:
        """Recompute q(1..N) from q(0), r and a."""
        out = np.empty_like(self.q)
        q = self.q[0]
        for n in range(self.horizon):
            q, _ = step(q, self.r[n], self.a[n])
            out[n] = q
        return out

    def replay_consistent(self) -> bool:
        nxt = np.vstack([self.q[1:], self.q_final[None, :]])
        return bool(np.array_equal(self.replay(), nxt))

    def header(self) -> list[str]:
        M = self.M
        cols = ["n"]
        for name in ("q", "qbar", "mu"):
            cols += [f"{name}_{i + 1}" for i in range(M)]
        cols.append("state")
        for name in ("r", "a", "z"):
            cols += [f"{name}_{i + 1}" for i in range(M)]
        return cols

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_string(), newline="")

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        fmt = "%.17g"
        for n in range(self.horizon):
            parts = [str(n)]
            parts += [fmt % v for v in self.q[n]]
            parts += [fmt % v for v in self.qbar[n]]
            parts += [fmt % v for v in self.mu[n]]
            parts.append(str(int(self.state[n])))
            parts += [fmt % v for v in self.r[n]]
            parts += [fmt % v for v in self.a[n]]
            parts += [fmt % v for v in self.z[n]]
            buf.write(",".join(parts) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, **meta) -> "SimTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        M = sum(1 for c in header if c.startswith("q_"))
        data = np.array(body, dtype=float)
        cut = np.cumsum([1, M, M, M, 1, M, M, M])
        _, q, qbar, mu, st, r, a, z, _ = np.split(data, cut, axis=1)
        q_final, _ = step(q[-1], r[-1], a[-1])
        return cls(q, qbar, mu, st[:, 0].astype(int), r, a, z, q_final, **meta)


def simulate(
    cm: ChannelModel,
    am: ArrivalModel,
    policy,
    om: ObservationModel | None = None,
    horizon: int = 1000,
    seed: int = 0,
    q0=None,
    scenario_hash: str = "",
) -> SimTrace:
    """Run the queueing chain for ``horizon`` slots under ``policy``.

    Channel states and arrivals come from two Philox substreams of ``seed``
    and are drawn in bulk up front, so the trace is a pure function of the
    arguments.
    """
    om = ObservationModel() if om is None else om
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    M = cm.M
    if am.M != M:
        raise ConfigError(f"arrival model has {am.M} users, channel model has {M}")
    q = np.zeros(M) if q0 is None else np.asarray(q0, dtype=float).copy()
    if q.shape != (M,) or np.any(q < 0):
        raise ConfigError("initial queue state must be a nonnegative length-M vector")

    ch_rng, ar_rng = make_streams(seed)
    states = ch_rng.choice(cm.n_states, size=horizon, p=cm.probabilities)
    arrivals = am.sample(ar_rng, size=horizon)
    verts = [reg.vertices for reg in cm.regions]

    Q = np.empty((horizon, M))
    QB = np.empty((horizon, M))
    MU = np.empty((horizon, M))
    R = np.empty((horizon, M))
    delay = om.delay_slots
    qstep = om.quantization_step
    weights = policy.weights

    for n in range(horizon):
        Q[n] = q
        qb = Q[n - delay] if n >= delay else Q[0]
        if qstep:
            qb = np.floor(qb / qstep) * qstep
        QB[n] = qb
        try:
            mu = weights(qb)
        except PolicyError as exc:
            raise PolicyError(f"slot {n}: {exc}", slot=n, best_residual=exc.best_residual) from exc
        s = float(mu.sum())
        if not (abs(s - 1.0) <= 1e-9 and float(mu.min()) >= 0.0):
            raise PolicyError(f"policy returned invalid weights {mu} at slot {n}", slot=n)
        MU[n] = mu
        V = verts[states[n]]
        r = V[(V @ mu).argmax()]
        R[n] = r
        q = np.maximum(q + arrivals[n] - r, 0.0)

    # same float ops as step(), vectorised after the fact
    Z = np.maximum(R - Q - arrivals, 0.0)
    return SimTrace(
        q=Q, qbar=QB, mu=MU, state=states.astype(int), r=R, a=arrivals, z=Z,
        q_final=q, seed=seed, scenario_hash=scenario_hash,
    )
