"""Scheduling policies as maps from an observed queue state to normalized weights.

A policy never sees the channel draw: the simulator turns its weights into a
rate vector by maximising the weighted rate over whatever region the channel
offers in that slot. Closed-form policies accept a batch of queue states with
shape ``(..., M)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PolicyError
from .rate_region import ChannelModel, smoothed_boundary_point_2d

POLICY_NAMES = ("mwm", "exp_rule", "eryilmaz", "qps", "isps", "exp_counterexample", "constant")


def normalize(raw: np.ndarray) -> np.ndarray:
    """Divide by the l1 norm along the last axis; all-zero rows become uniform."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        total = raw.sum()
        return raw / total if total > 0 else np.full(raw.shape[0], 1.0 / raw.shape[0])
    total = raw.sum(axis=-1, keepdims=True)
    M = raw.shape[-1]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, raw / safe, 1.0 / M)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mwm_weights(q) -> np.ndarray:
    """Weights proportional to queue length."""
    return normalize(q)


@dataclass(frozen=True)
class ExpRuleParams:
    gamma: tuple[float, ...]
    alpha: tuple[float, ...]
    beta: float = 1.0
    eta: float = 0.5

    def __post_init__(self):
        g = tuple(float(x) for x in np.atleast_1d(self.gamma))
        a = tuple(float(x) for x in np.atleast_1d(self.alpha))
        if len(g) != len(a):
            raise ConfigError("exp_rule gamma and alpha must have the same length")
        if min(g) <= 0 or min(a) <= 0:
            raise ConfigError("exp_rule gamma and alpha must be positive")
        if not self.beta > 0:
            raise ConfigError("exp_rule beta must be positive")
        if not 0 < self.eta < 1:
            raise ConfigError("exp_rule eta must lie in (0, 1)")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def uniform(cls, M: int, beta: float = 1.0, eta: float = 0.5) -> "ExpRuleParams":
        return cls((1.0,) * M, (1.0,) * M, beta, eta)


def exp_rule_weights(q, p: ExpRuleParams) -> np.ndarray:
    """Exponential rule, evaluated as a softmax of log(gamma) + alpha*q / (beta + mean(alpha*q)**eta)."""
    q = np.asarray(q, dtype=float)
    alpha = np.asarray(p.alpha)
    aq = alpha * q
    denom = p.beta + np.mean(aq, axis=-1, keepdims=True) ** p.eta
    return _softmax(np.log(np.asarray(p.gamma)) + aq / denom)


ERYILMAZ_FAMILIES = ("log1p", "power", "linear", "affine")


@dataclass(frozen=True)
class EryilmazEntry:
    """One member of the closed catalog of nondecreasing, continuous, unbounded weight functions.

    ``log1p``: log(1 + q). ``power``: q**exponent with exponent in (0, 1].
    ``linear``: q. ``affine``: slope*q + offset with slope > 0, offset >= 0.
    """

    family: str
    exponent: float = 1.0
    slope: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in ERYILMAZ_FAMILIES:
            raise ConfigError(
                f"unknown weight function family {self.family!r}; choose from {ERYILMAZ_FAMILIES}"
            )
        if self.family == "power" and not 0 < self.exponent <= 1:
            raise ConfigError("power exponent must lie in (0, 1]")
        if self.family == "affine" and not (self.slope > 0 and self.offset >= 0):
            raise ConfigError("affine weight needs slope > 0 and offset >= 0")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.family == "log1p":
            return np.log1p(x)
        if self.family == "power":
            return np.power(x, self.exponent)
        if self.family == "linear":
            return np.array(x, dtype=float)
        return self.slope * x + self.offset


@dataclass(frozen=True)
class EryilmazSpec:
    """Per-user weight functions; a single entry is shared by every user."""

    entries: tuple[EryilmazEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ConfigError("eryilmaz spec needs at least one entry")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def uniform(cls, family: str, **params) -> "EryilmazSpec":
        return cls((EryilmazEntry(family, **params),))

    def raw(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if len(self.entries) == 1:
            return self.entries[0](q)
        if len(self.entries) != q.shape[-1]:
            raise ConfigError(f"eryilmaz spec has {len(self.entries)} entries for {q.shape[-1]} users")
        return np.stack([e(q[..., i]) for i, e in enumerate(self.entries)], axis=-1)


def eryilmaz_weights(q, spec: EryilmazSpec) -> np.ndarray:
    return normalize(spec.raw(q))


def exp_counterexample_weights(q) -> np.ndarray:
    """Weights proportional to exp(q_i), via max subtraction."""
    return _softmax(np.asarray(q, dtype=float))


# ---------------------------------------------------------------- QPS

QPS_DEFAULT_TOL = 1e-3
QPS_MAX_ITER = 500
QPS_DAMPING = 0.5
QPS_JITTERS = 64
QPS_JITTER_SCALE = 1e-9
_QPS_JITTER_SEED = 7321


def qps_residual(r: np.ndarray, q: np.ndarray) -> float:
    """Relative distance between r and its projection onto the ray through q."""
    nr = float(np.linalg.norm(r))
    if nr == 0.0:
        return math.inf
    x = float(q @ r) / float(q @ q)
    return float(np.linalg.norm(r - x * q)) / nr


@dataclass(frozen=True)
class QPSResult:
    mu: np.ndarray
    rate: np.ndarray
    residual: float
    iterations: int


def _qps_2d(q: np.ndarray, cm: ChannelModel, tol: float) -> QPSResult:
    # mu = (t, 1 - t); s(t) = q1*r2 - q2*r1 is nonincreasing in t
    def s(t):
        r = smoothed_boundary_point_2d(cm, t)
        return q[0] * r[1] - q[1] * r[0]

    def boundary(pred, lo, hi):
        # pred is true on [lo, x) and false on (x, hi]
        it = 0
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                return 0.5 * (lo + hi), it
            it += 1
            if pred(mid):
                lo = mid
            else:
                hi = mid

    it_a = it_b = 0
    if s(0.0) > 0:
        a, it_a = boundary(lambda t: s(t) > 0, 0.0, 1.0)
    else:
        a = 0.0
    if s(1.0) < 0:
        b, it_b = boundary(lambda t: not s(t) < 0, 0.0, 1.0)
    else:
        b = 1.0
    t = 0.5 * (a + b)
    mu = np.array([t, 1.0 - t])
    r = smoothed_boundary_point_2d(cm, t)
    return QPSResult(mu, r, qps_residual(r, q), it_a + it_b)


def _jitter_table(M: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(_QPS_JITTER_SEED))
    return rng.uniform(-QPS_JITTER_SCALE, QPS_JITTER_SCALE, size=(QPS_JITTERS, M))


def _jittered_rate(cm: ChannelModel, mu: np.ndarray, jit: np.ndarray) -> np.ndarray:
    mus = np.clip(mu + jit, 0.0, None)
    out = np.zeros(cm.M)
    for p, reg in zip(cm.probabilities, cm.regions):
        picks = np.argmax(mus @ reg.vertices.T, axis=1)
        out += p * reg.vertices[picks].mean(axis=0)
    return out


def _qps_nd(q: np.ndarray, cm: ChannelModel, tol: float) -> QPSResult:
    jit = _jitter_table(cm.M)
    mu = np.full(cm.M, 1.0 / cm.M)
    best = None
    for it in range(1, QPS_MAX_ITER + 1):
        r = _jittered_rate(cm, mu, jit)
        res = qps_residual(r, q)
        if best is None or res < best.residual:
            best = QPSResult(mu.copy(), r, res, it)
        if res <= tol:
            return best
        target = normalize(mu * q / np.maximum(r, 1e-300))
        mu = normalize(QPS_DAMPING * mu + (1.0 - QPS_DAMPING) * target)
    return best


def qps_search(q, cm: ChannelModel, tol: float = QPS_DEFAULT_TOL) -> QPSResult:
    """Weight whose expected boundary rate is parallel to q.

    Raises PolicyError carrying the best residual when tol is not met.
    """
    q = np.asarray(q, dtype=float)
    if not tol > 0:
        raise ConfigError("QPS tolerance must be positive")
    if not np.any(q > 0):
        u = np.full(cm.M, 1.0 / cm.M)
        return QPSResult(u, np.zeros(cm.M), 0.0, 0)
    res = _qps_2d(q, cm, tol) if cm.M == 2 else _qps_nd(q, cm, tol)
    if not res.residual <= tol:
        raise PolicyError(
            f"QPS search did not reach residual {tol:g} for q={q.tolist()} "
            f"(best {res.residual:.3g})",
            best_residual=res.residual,
        )
    return res


def qps_weights(q, cm: ChannelModel, tol: float = QPS_DEFAULT_TOL) -> np.ndarray:
    return qps_search(q, cm, tol).mu


# ---------------------------------------------------------------- ISPS

ISPS_MAX_ITER = 20
ISPS_DEFAULT_DRAIN_CAP = 10_000


@dataclass(frozen=True)
class DrainResult:
    eta: np.ndarray
    slots: int


def _expected_rate(cm: ChannelModel, mu: np.ndarray) -> np.ndarray:
    out = np.zeros(cm.M)
    for p, reg in zip(cm.probabilities, cm.regions):
        out += p * reg.vertices[int(np.argmax(reg.vertices @ mu))]
    return out


def fluid_drain(q, cm: ChannelModel, weight_fn, drain_cap: int) -> DrainResult:
    """Drain q with no arrivals at the expected boundary rate of ``weight_fn(q_now, active)``.

    eta_i is the fractional slot at which user i empties.
    """
    qq = np.asarray(q, dtype=float).copy()
    eta = np.zeros_like(qq)
    n = 0
    while np.any(qq > 0):
        if n >= drain_cap:
            raise PolicyError(f"drain exceeded {drain_cap} slots from q={np.asarray(q).tolist()}")
        active = qq > 0
        r = _expected_rate(cm, weight_fn(qq, active))
        if not np.any(r[active] > 0):
            raise PolicyError(
                f"drain stalled at slot {n}: no service for nonempty users {np.flatnonzero(active).tolist()}"
            )
        done = active & (r >= qq)
        eta[done] = n + qq[done] / r[done]
        qq = np.where(active, np.maximum(qq - r, 0.0), 0.0)
        qq[done] = 0.0
        n += 1
    return DrainResult(eta, n)


@dataclass(frozen=True)
class ISPSResult:
    mu: np.ndarray
    eta: np.ndarray
    iterations: int
    converged: bool
    makespan: int


def isps_search(q, cm: ChannelModel, abar, drain_cap: int = ISPS_DEFAULT_DRAIN_CAP) -> ISPSResult:
    """Iterate drain-time estimates: weights proportional to eta_i / abar_i, re-drain, repeat."""
    q = np.asarray(q, dtype=float)
    abar = np.asarray(abar, dtype=float)
    if abar.shape != q.shape or np.any(abar <= 0):
        raise ConfigError("ISPS nominal arrival rates must be positive, one per user")
    if drain_cap < 1:
        raise ConfigError("drain_cap must be >= 1")
    if not np.any(q > 0):
        return ISPSResult(np.full(q.shape[0], 1.0 / q.shape[0]), np.zeros_like(q), 0, True, 0)

    first = fluid_drain(q, cm, lambda qq, act: normalize(qq), drain_cap)
    eta, slots = first.eta, first.slots
    converged = False
    it = 0
    for it in range(1, ISPS_MAX_ITER + 1):
        w = eta / abar

        def fixed(qq, act, w=w):
            return normalize(np.where(act, w, 0.0))

        nxt = fluid_drain(q, cm, fixed, drain_cap)
        change = float(np.max(np.abs(nxt.eta - eta)))
        eta, slots = nxt.eta, nxt.slots
        if change < 1.0:
            converged = True
            break
    return ISPSResult(normalize(eta / abar), eta, it, converged, slots)


def isps_weights(q, cm: ChannelModel, abar, drain_cap: int = ISPS_DEFAULT_DRAIN_CAP) -> np.ndarray:
    return isps_search(q, cm, abar, drain_cap).mu


# ---------------------------------------------------------------- policy objects


MEMO_SIZE = 100_000


def _memoized(memo: dict, q, compute) -> np.ndarray:
    # the searches are pure in q, and simulated queues revisit the same states often
    q = np.asarray(q, dtype=float)
    key = q.tobytes()
    hit = memo.get(key)
    if hit is None:
        hit = np.asarray(compute(q))
        if len(memo) >= MEMO_SIZE:
            memo.clear()
        memo[key] = hit
    return hit.copy()


@dataclass(frozen=True)
class MWM:
    name: str = field(default="mwm", init=False)

    def weights(self, q):
        return mwm_weights(q)

    def describe(self) -> dict:
        return {"name": self.name}


@dataclass(frozen=True)
class ExpRule:
    params: ExpRuleParams
    name: str = field(default="exp_rule", init=False)

    def weights(self, q):
        return exp_rule_weights(q, self.params)

    def describe(self) -> dict:
        p = self.params
        return {"name": self.name, "gamma": list(p.gamma), "alpha": list(p.alpha),
                "beta": p.beta, "eta": p.eta}


@dataclass(frozen=True)
class Eryilmaz:
    spec: EryilmazSpec
    name: str = field(default="eryilmaz", init=False)

    def weights(self, q):
        return eryilmaz_weights(q, self.spec)

    def describe(self) -> dict:
        return {"name": self.name, "entries": [vars(e) for e in self.spec.entries]}


@dataclass(frozen=True)
class ExpCounterexample:
    name: str = field(default="exp_counterexample", init=False)

    def weights(self, q):
        return exp_counterexample_weights(q)

    def describe(self) -> dict:
        return {"name": self.name}


@dataclass(frozen=True)
class ConstantWeights:
    """Ignores the queues; useful as a reference that fails the decay condition."""

    mu: tuple[float, ...]
    name: str = field(default="constant", init=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ConfigError("constant weights must be nonnegative and sum to 1")
        object.__setattr__(self, "mu", tuple(float(x) for x in mu))

    def weights(self, q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(self.mu), q.shape).copy()

    def describe(self) -> dict:
        return {"name": self.name, "mu": list(self.mu)}


@dataclass(frozen=True)
class QPS:
    cm: ChannelModel
    tol: float = QPS_DEFAULT_TOL
    name: str = field(default="qps", init=False)

    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def weights(self, q):
        return _memoized(self._memo, q, lambda qq: qps_weights(qq, self.cm, self.tol))

    def describe(self) -> dict:
        return {"name": self.name, "tol": self.tol}


@dataclass(frozen=True)
class ISPS:
    cm: ChannelModel
    abar: tuple[float, ...]
    drain_cap: int = ISPS_DEFAULT_DRAIN_CAP
    name: str = field(default="isps", init=False)

    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def weights(self, q):
        return _memoized(self._memo, q, lambda qq: isps_weights(qq, self.cm, self.abar, self.drain_cap))

    def describe(self) -> dict:
        return {"name": self.name, "abar": list(self.abar), "drain_cap": self.drain_cap}


def make_policy(name: str, M: int, cm: ChannelModel | None = None, abar=None, **params):
    """Build a policy from its canonical name and scenario parameters."""
    if name == "mwm":
        return MWM()
    if name == "exp_rule":
        gamma = params.get("gamma", [1.0] * M)
        alpha = params.get("alpha", [1.0] * M)
        gamma = [float(gamma)] * M if np.isscalar(gamma) else gamma
        alpha = [float(alpha)] * M if np.isscalar(alpha) else alpha
        p = ExpRuleParams(tuple(gamma), tuple(alpha), params.get("beta", 1.0), params.get("eta", 0.5))
        if len(p.gamma) != M:
            raise ConfigError(f"exp_rule parameters have {len(p.gamma)} users, model has {M}")
        return ExpRule(p)
    if name == "eryilmaz":
        funcs = params.get("functions")
        if funcs is None:
            family = params.get("family", "log1p")
            extra = {k: params[k] for k in ("exponent", "slope", "offset") if k in params}
            return Eryilmaz(EryilmazSpec.uniform(family, **extra))
        if len(funcs) != M:
            raise ConfigError(f"eryilmaz functions list has {len(funcs)} entries, model has {M}")
        return Eryilmaz(EryilmazSpec(tuple(EryilmazEntry(**f) for f in funcs)))
    if name == "exp_counterexample":
        return ExpCounterexample()
    if name == "constant":
        return ConstantWeights(tuple(params.get("mu", [1.0 / M] * M)))
    if name == "qps":
        if cm is None:
            raise ConfigError("qps needs the channel model")
        return QPS(cm, float(params.get("tol", QPS_DEFAULT_TOL)))
    if name == "isps":
        if cm is None:
            raise ConfigError("isps needs the channel model")
        ab = params.get("abar", abar)
        if ab is None:
            raise ConfigError("isps needs nominal arrival rates 'abar'")
        ab = tuple(float(x) for x in ab)
        if len(ab) != M or min(ab) <= 0:
            raise ConfigError("isps 'abar' must hold one positive rate per user")
        return ISPS(cm, ab, int(params.get("drain_cap", ISPS_DEFAULT_DRAIN_CAP)))
    raise ConfigError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")
