"""Instantaneous and ergodic rate regions.

Rate regions are vertex-represented polytopes; a channel model is a finite
probability mixture of them. Everything here is deterministic: the only
randomness (the direction grid for M >= 3 membership tests) comes from a
fixed-seed generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError

PROB_TOL = 1e-12
WEIGHT_TOL = 1e-12

# membership grid defaults
N_DIRECTIONS_2D = 720
N_DIRECTIONS_ND = 10_000
_DIRECTION_SEED = 20240611


def _lex_desc_order(vertices: np.ndarray) -> np.ndarray:
    # np.lexsort keys are last-major, so reverse the columns
    order = np.lexsort(vertices.T[::-1])
    return order[::-1]


@dataclass(frozen=True, eq=False)
class RatePolytope:
    """Convex hull of a finite set of rate vectors (bits/slot).

    Vertices are stored sorted in descending lexicographic order, so the
    first maximiser found by ``argmax`` is the lexicographically largest.
    """

    vertices: np.ndarray
    rate_bound: float = np.inf

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.size == 0 or v.shape[0] == 0:
            raise ConfigError("rate polytope has an empty vertex list")
        if v.ndim != 2 or v.shape[1] < 1:
            raise ConfigError(f"vertices must be an (n, M) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("vertices must be finite")
        if np.any(v < 0):
            raise ConfigError("vertex components must be nonnegative")
        if np.any(v > self.rate_bound):
            raise ConfigError(
                f"vertex component {v.max()} exceeds the rate bound {self.rate_bound}"
            )
        v = v[_lex_desc_order(v)]
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def M(self) -> int:
        return self.vertices.shape[1]

    def support(self, mu: np.ndarray) -> np.ndarray:
        """max_v mu.v, vectorised over a leading batch of directions."""
        return np.max(np.asarray(mu, dtype=float) @ self.vertices.T, axis=-1)

    def __repr__(self):
        return f"RatePolytope({self.vertices.tolist()})"


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Finite i.i.d. channel: state s occurs with probability p_s and offers region_s."""

    probabilities: np.ndarray
    regions: tuple[RatePolytope, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        regions = tuple(self.regions)
        if len(regions) == 0:
            raise ConfigError("channel model needs at least one state")
        if p.shape[0] != len(regions):
            raise ConfigError("one probability per channel state is required")
        if np.any(p <= 0) or np.any(p > 1):
            raise ConfigError("channel state probabilities must lie in (0, 1]")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ConfigError(
                f"channel state probabilities sum to {p.sum():.15g}, not 1"
            )
        if len({r.M for r in regions}) != 1:
            raise ConfigError("all channel states must share the same user count")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "regions", regions)

    @classmethod
    def single(cls, vertices, rate_bound: float = np.inf) -> "ChannelModel":
        return cls(np.array([1.0]), (RatePolytope(vertices, rate_bound),))

    @classmethod
    def from_vertex_lists(cls, probabilities, vertex_lists, rate_bound: float = np.inf):
        return cls(
            np.asarray(probabilities, dtype=float),
            tuple(RatePolytope(v, rate_bound) for v in vertex_lists),
        )

    @property
    def M(self) -> int:
        return self.regions[0].M

    @property
    def n_states(self) -> int:
        return len(self.regions)

    def support(self, mu: np.ndarray) -> np.ndarray:
        """Ergodic support function E[max_r mu.r], batched over directions."""
        mu = np.asarray(mu, dtype=float)
        return sum(p * reg.support(mu) for p, reg in zip(self.probabilities, self.regions))

    @cached_property
    def region_ties_2d(self) -> tuple[np.ndarray, ...]:
        """Per state, the sorted t in (0, 1) where two of its vertices tie under mu = (t, 1 - t)."""
        if self.M != 2:
            raise DomainError("tie normals are only defined for two users")
        return tuple(
            np.unique(np.asarray(_pairwise_ties_2d(reg.vertices, 0.0, 1.0), dtype=float))
            for reg in self.regions
        )

    @cached_property
    def tie_normals_2d(self) -> np.ndarray:
        """All t in [0, 1] where some state has a tie, plus the endpoints.

        These are exactly the facet normals of every per-state hull, hence of
        the ergodic polygon.
        """
        ts = np.concatenate([np.array([0.0, 1.0]), *self.region_ties_2d])
        return np.unique(ts)


def _pairwise_ties_2d(vertices: np.ndarray, lo: float, hi: float) -> list[float]:
    """All t in (lo, hi) where two vertices score equally under mu = (t, 1 - t)."""
    out = []
    n = vertices.shape[0]
    for a in range(n):
        for b in range(a + 1, n):
            d1 = vertices[a, 0] - vertices[b, 0]
            d2 = vertices[a, 1] - vertices[b, 1]
            denom = d1 - d2
            if denom == 0.0:
                continue
            t = -d2 / denom
            if lo < t < hi:
                out.append(float(t))
    return out


def check_weights(mu, M: int | None = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or (M is not None and mu.shape[0] != M):
        raise DomainError(f"weight vector has shape {mu.shape}, expected ({M},)")
    if not np.all(np.isfinite(mu)) or np.any(mu < 0):
        raise DomainError(f"weight vector must be finite and nonnegative: {mu}")
    if abs(mu.sum() - 1.0) > WEIGHT_TOL:
        raise DomainError(f"weight vector must have unit l1 norm, got {mu.sum():.17g}")
    return mu


def max_weighted_rate(region: RatePolytope, mu) -> np.ndarray:
    """Vertex of ``region`` maximising mu.r; ties go to the lexicographically largest vertex."""
    mu = check_weights(mu, region.M)
    scores = region.vertices @ mu
    return region.vertices[int(np.argmax(scores))].copy()


def ergodic_boundary_point(cm: ChannelModel, mu) -> np.ndarray:
    """Exact expectation over channel states of the per-state weighted-rate maximiser."""
    mu = check_weights(mu, cm.M)
    out = np.zeros(cm.M)
    for p, reg in zip(cm.probabilities, cm.regions):
        out += p * reg.vertices[int(np.argmax(reg.vertices @ mu))]
    return out


def smoothed_boundary_point_2d(cm: ChannelModel, t: float, width: float = 1e-9) -> np.ndarray:
    """Ergodic boundary point averaged over mu = (s, 1 - s), s uniform on [t - width, t + width].

    The plain boundary point is piecewise constant in t and jumps across
    facet normals; the average is continuous and traces each facet linearly
    inside the band. The average is computed exactly from the tie points,
    not sampled.
    """
    if cm.M != 2:
        raise DomainError("smoothed boundary point is defined for two users")
    lo, hi = max(0.0, t - width), min(1.0, t + width)
    out = np.zeros(2)
    if hi <= lo:
        mu = np.array([t, 1.0 - t])
        for p, reg in zip(cm.probabilities, cm.regions):
            out += p * reg.vertices[int(np.argmax(reg.vertices @ mu))]
        return out
    for p, reg, ties in zip(cm.probabilities, cm.regions, cm.region_ties_2d):
        inner = ties[(ties > lo) & (ties < hi)]
        cuts = np.concatenate([[lo], inner, [hi]])
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        lengths = np.diff(cuts)
        scores = np.column_stack([mids, 1.0 - mids]) @ reg.vertices.T
        picks = reg.vertices[np.argmax(scores, axis=1)]
        out += p * (lengths @ picks) / (hi - lo)
    return out


def membership_directions(cm: ChannelModel, n_directions: int | None = None) -> np.ndarray:
    """Unit-l1 directions used by the support-function membership test.

    M = 2: a uniform angle sweep plus every facet normal, which makes the
    test exact for polygons. M >= 3: fixed-seed random simplex directions
    plus the axes and the uniform direction.
    """
    M = cm.M
    if M == 1:
        return np.ones((1, 1))
    if M == 2:
        n = N_DIRECTIONS_2D if n_directions is None else n_directions
        theta = np.linspace(0.0, 0.5 * np.pi, n)
        d = np.column_stack([np.cos(theta), np.sin(theta)])
        d = d / d.sum(axis=1, keepdims=True)
        t = cm.tie_normals_2d
        d = np.vstack([d, np.column_stack([t, 1.0 - t])])
        return d
    n = N_DIRECTIONS_ND if n_directions is None else n_directions
    gen = np.random.Generator(np.random.Philox(_DIRECTION_SEED))
    d = gen.dirichlet(np.ones(M), size=n)
    return np.vstack([np.eye(M), np.full((1, M), 1.0 / M), d])


def contains(cm: ChannelModel, y, directions: np.ndarray | None = None) -> bool:
    """Support-function membership test for the ergodic region."""
    y = np.asarray(y, dtype=float)
    d = membership_directions(cm) if directions is None else directions
    h = cm.support(d)
    return bool(np.all(d @ y <= h + 1e-12 * (1.0 + np.abs(h))))


def scale_to_boundary(
    cm: ChannelModel,
    direction,
    tol: float = 1e-9,
    n_directions: int | None = None,
) -> float:
    """Largest x with x * direction inside the ergodic region, by bisection on x."""
    d = np.asarray(direction, dtype=float)
    if d.shape != (cm.M,):
        raise DomainError(f"direction must have length {cm.M}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DomainError("direction must be finite and componentwise nonnegative")
    if not np.any(d > 0):
        raise DomainError("direction must be nonzero")
    dirs = membership_directions(cm, n_directions)
    h = cm.support(dirs)
    proj = dirs @ d
    slack = 1e-12 * (1.0 + np.abs(h))

    def inside(x):
        return bool(np.all(x * proj <= h + slack))

    lo, hi = 0.0, 1.0
    while inside(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise DomainError("region is unbounded in the requested direction")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class ErgodicBoundarySample:
    mu: np.ndarray
    rate: np.ndarray


def simplex_directions(M: int, n: int) -> np.ndarray:
    if M == 2:
        theta = np.linspace(0.0, 0.5 * np.pi, n)
        d = np.column_stack([np.cos(theta), np.sin(theta)])
        # exact endpoints/midpoint where cos and sin coincide or vanish
        d[np.isclose(d, 0.0, atol=1e-15)] = 0.0
        return d / d.sum(axis=1, keepdims=True)
    gen = np.random.Generator(np.random.Philox(_DIRECTION_SEED))
    base = np.vstack([np.eye(M), np.full((1, M), 1.0 / M)])
    extra = gen.dirichlet(np.ones(M), size=max(0, n - base.shape[0]))
    return np.vstack([base, extra])[:n]


def sample_boundary(cm: ChannelModel, n_mu: int) -> list[ErgodicBoundarySample]:
    """Tabulate (mu, boundary rate) pairs at ``n_mu`` spread-out weight vectors."""
    if n_mu < 2:
        raise DomainError("n_mu must be at least 2")
    out = []
    for mu in simplex_directions(cm.M, n_mu):
        mu = mu / mu.sum()
        out.append(ErgodicBoundarySample(mu=mu, rate=ergodic_boundary_point(cm, mu)))
    return out
