"""Potentials built from a weight field, and one-step drift estimates.

Two constructions are provided. Ray potentials integrate the weights along
the segment from the origin to q; they are exact potentials only when the
weight field is integrable. The two-user grid picks rectangular cells whose
boundary circulation vanishes, so line integrals along grid lines are path
independent even for non-integrable fields, then interpolates inside cells
along lines parallel to the cell diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, GridConstructionError
from .queueing import ArrivalModel, make_streams
from .rate_region import ChannelModel

DEFAULT_RAY_STEPS = 256
GAUSS_POINTS = 64
LOOP_TOL = 1e-8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_POINTS)


def _weights_batch(policy, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1, q.shape[-1])
    try:
        out = np.asarray(policy.weights(flat), dtype=float)
        if out.shape != flat.shape:
            raise ValueError
    except Exception:
        out = np.array([policy.weights(row) for row in flat])
    return out.reshape(q.shape)


def integrability_residual(policy, q, h: float = 1e-4) -> np.ndarray:
    """|d mu_i / d q_j - d mu_j / d q_i| by central differences."""
    q = np.asarray(q, dtype=float)
    if not h > 0 or np.any(q <= h):
        raise DomainError("need h > 0 and every q_i > h")
    M = q.shape[0]
    eye = np.eye(M) * h
    plus = _weights_batch(policy, q + eye)
    minus = _weights_batch(policy, q - eye)
    # J[i, j] = d mu_i / d q_j; row k of plus/minus perturbs q_k
    J = ((plus - minus) / (2 * h)).T
    return np.abs(J - J.T)


# ---------------------------------------------------------------- ray potentials


def ray_potentials(policy, q, steps: int = DEFAULT_RAY_STEPS) -> tuple[np.ndarray, np.ndarray]:
    """f and V along rays from the origin, batched over q with shape (..., M).

    With u in [0, 1] parametrising the segment to q,
    f(q) = int mu(u q) . q du and V(q) = int f(u q) mu(u q) . q du,
    by composite trapezoid on ``steps`` panels. The u = 0 node uses uniform weights.
    """
    if steps < 16:
        raise DomainError("ray quadrature needs at least 16 steps")
    q = np.asarray(q, dtype=float)
    shape = q.shape[:-1]
    Q = q.reshape(-1, q.shape[-1])
    M = Q.shape[1]
    u = np.linspace(0.0, 1.0, steps + 1)
    pts = u[None, :, None] * Q[:, None, :]
    mu = np.empty_like(pts)
    mu[:, 0, :] = 1.0 / M
    mu[:, 1:, :] = _weights_batch(policy, pts[:, 1:, :])
    g = np.einsum("nkm,nm->nk", mu, Q)
    du = 1.0 / steps
    cum = np.zeros_like(g)
    cum[:, 1:] = np.cumsum(0.5 * du * (g[:, 1:] + g[:, :-1]), axis=1)
    fg = cum * g
    V = np.sum(0.5 * du * (fg[:, 1:] + fg[:, :-1]), axis=1)
    return cum[:, -1].reshape(shape), V.reshape(shape)


def potential_f_ray(policy, q, steps: int = DEFAULT_RAY_STEPS) -> float:
    q = np.asarray(q, dtype=float)
    if not np.any(q != 0):
        return 0.0
    return float(ray_potentials(policy, q, steps)[0])


def potential_V_ray(policy, q, steps: int = DEFAULT_RAY_STEPS) -> float:
    q = np.asarray(q, dtype=float)
    if not np.any(q != 0):
        return 0.0
    return float(ray_potentials(policy, q, steps)[1])


@dataclass(frozen=True)
class PotentialField:
    """f and V evaluators on batches of queue states, with the construction they came from."""

    kind: str
    f: Callable[[np.ndarray], np.ndarray]
    V: Callable[[np.ndarray], np.ndarray]
    steps: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def ray(cls, policy, steps: int = DEFAULT_RAY_STEPS) -> "PotentialField":
        return cls(
            "ray-integral",
            lambda q: ray_potentials(policy, q, steps)[0],
            lambda q: ray_potentials(policy, q, steps)[1],
            steps,
        )

    @classmethod
    def from_grid(cls, grid: "LyapunovGrid2D") -> "PotentialField":
        def batched(which):
            def fn(q):
                q = np.asarray(q, dtype=float)
                flat = q.reshape(-1, 2)
                out = np.array([grid.evaluate(row, which, clamp=True) for row in flat])
                return out.reshape(q.shape[:-1])
            return fn

        return cls("grid-2d", batched("f"), batched("V"), GAUSS_POINTS)


# ---------------------------------------------------------------- 2-D grid


def _gauss(fn, a: float, b: float) -> float:
    """64-point Gauss-Legendre integral of a vectorised fn over [a, b]."""
    if a == b:
        return 0.0
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * _GL_X
    return float(half * np.dot(_GL_W, fn(x)))


@dataclass
class GridColumn:
    x0: float
    width: float
    y_breaks: np.ndarray            # row boundaries, y_breaks[0] = base y
    residuals: np.ndarray           # circulation of each cell after root finding
    f_abd: np.ndarray = None        # f at each cell's top-right node via bottom then right edge
    f_acd: np.ndarray = None        # same node via left then top edge
    degenerate: np.ndarray = None   # cells sized by the square-cell fallback


class LyapunovGrid2D:
    """Column-wise irregular grid with vanishing cell circulation.

    Columns have a fixed width; within each column the cell heights are found
    one after another from the bottom. Rows of neighbouring columns need not
    align: each vertical line carries the union of both columns' breaks.
    f is the line integral of the weights along grid lines from the base
    corner, V = V0 + (f^2 - f0^2) / 2 on grid lines.
    """

    def __init__(self, base, extent, init_cell, columns, f0=1.0, V0=1.0, policy=None):
        self.base = np.asarray(base, dtype=float)
        self.extent = np.asarray(extent, dtype=float)
        self.init_cell = float(init_cell)
        self.columns: list[GridColumn] = columns
        self.f0 = float(f0)
        self.V0 = float(V0)
        self.policy = policy
        self._line_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._bottom_f = None

    # -- line integrals
    def _mu(self, x, y) -> np.ndarray:
        x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast(x, y).shape)
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
        return _weights_batch(self.policy, np.stack([x, y], axis=-1))

    def _int_h(self, y: float, xa: float, xb: float) -> float:
        return _gauss(lambda s: self._mu(s, y)[..., 0], xa, xb)

    def _int_v(self, x: float, ya: float, yb: float) -> float:
        return _gauss(lambda s: self._mu(x, s)[..., 1], ya, yb)

    @property
    def n_lines(self) -> int:
        return len(self.columns) + 1

    def line_x(self, k: int) -> float:
        if k < len(self.columns):
            return self.columns[k].x0
        last = self.columns[-1]
        return last.x0 + last.width

    def bottom_f(self) -> np.ndarray:
        """f at the bottom node of every vertical line."""
        if self._bottom_f is None:
            out = [self.f0]
            for col in self.columns:
                out.append(out[-1] + self._int_h(self.base[1], col.x0, col.x0 + col.width))
            self._bottom_f = np.array(out)
        return self._bottom_f

    def line_nodes(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted node heights on vertical line k and f there (integrated upward from the base)."""
        if k not in self._line_cache:
            ys = []
            if k > 0:
                ys.append(self.columns[k - 1].y_breaks)
            if k < len(self.columns):
                ys.append(self.columns[k].y_breaks)
            y = np.unique(np.concatenate(ys))
            x = self.line_x(k)
            f = np.empty_like(y)
            f[0] = self.bottom_f()[k]
            for m in range(1, len(y)):
                f[m] = f[m - 1] + self._int_v(x, y[m - 1], y[m])
            self._line_cache[k] = (y, f)
        return self._line_cache[k]

    def f_on_vertical(self, k: int, y: float) -> float:
        ys, fs = self.line_nodes(k)
        m = int(np.searchsorted(ys, y, side="right")) - 1
        m = min(max(m, 0), len(ys) - 1)
        if ys[m] == y:
            return float(fs[m])
        return float(fs[m] + self._int_v(self.line_x(k), ys[m], y))

    def f_on_horizontal(self, c: int, y: float, x: float) -> float:
        """f on the horizontal edge at height y (a break of column c), at abscissa x."""
        col = self.columns[c]
        start = self.f_on_vertical(c, y)
        return start + self._int_h(y, col.x0, x) if x != col.x0 else start

    def V_from_f(self, f):
        return self.V0 + 0.5 * (np.asarray(f) ** 2 - self.f0 ** 2)

    # -- location and interpolation
    def locate(self, q) -> tuple[int, int]:
        x, y = float(q[0]), float(q[1])
        right = self.line_x(len(self.columns))
        if not (self.base[0] <= x <= right and self.base[1] <= y):
            raise DomainError(f"q={list(q)} is outside the grid")
        c = min(int((x - self.base[0]) // self.init_cell), len(self.columns) - 1)
        yb = self.columns[c].y_breaks
        if y > yb[-1]:
            raise DomainError(f"q={list(q)} is above the grid (column top {yb[-1]})")
        r = min(int(np.searchsorted(yb, y, side="right")) - 1, len(yb) - 2)
        return c, r

    def evaluate(self, q, which: str = "V", clamp: bool = False) -> float:
        q = np.asarray(q, dtype=float)
        if clamp:
            q = np.maximum(q, self.base)
        if which == "f":
            return self._interp(q, lambda f: f)
        return self._interp(q, self.V_from_f)

    def _interp(self, q, transform) -> float:
        c, r = self.locate(q)
        col = self.columns[c]
        Qi, Qj = col.x0, col.y_breaks[r]
        Wi, Wj = col.width, col.y_breaks[r + 1] - col.y_breaks[r]
        di, dj = q[0] - Qi, q[1] - Qj

        def edge_bottom(x):
            return transform(self.f_on_horizontal(c, Qj, x))

        def edge_top(x):
            return transform(self.f_on_horizontal(c, Qj + Wj, x))

        def edge_left(y):
            return transform(self.f_on_vertical(c, y))

        def edge_right(y):
            return transform(self.f_on_vertical(c + 1, y))

        if di / Wi + dj / Wj < 1:
            den = Wj * di + Wi * dj
            if den == 0.0:
                return float(edge_left(Qj))
            Ki = Wj * di / den
            Kj = Wi * dj / den
            qI = Qi + di + Wi / Wj * dj
            qJ = Qj + dj + Wj / Wi * di
            return float(Ki * edge_bottom(qI) + Kj * edge_left(qJ))
        den = 2 * Wi * Wj - Wj * di - Wi * dj
        if den <= 0.0:
            return float(edge_right(Qj + Wj))
        Ki = (Wj * Wi - Wj * di) / den
        Kj = (Wj * Wi - Wi * dj) / den
        qI = Qi + di + Wi / Wj * dj - Wi
        qJ = Qj + dj + Wj / Wi * di - Wj
        return float(Ki * edge_top(qI) + Kj * edge_right(qJ))

    def interpolate_V(self, q) -> float:
        return self.evaluate(q, "V")

    # -- checks and export
    @property
    def max_loop_residual(self) -> float:
        return max(float(np.max(np.abs(c.residuals))) for c in self.columns)

    @property
    def max_two_path_gap(self) -> float:
        return max(float(np.max(np.abs(c.f_abd - c.f_acd))) for c in self.columns)

    def to_dict(self) -> dict:
        return {
            "base": self.base.tolist(),
            "extent": self.extent.tolist(),
            "init_cell": self.init_cell,
            "f0": self.f0,
            "V0": self.V0,
            "gauss_points": GAUSS_POINTS,
            "columns": [
                {
                    "x0": c.x0,
                    "width": c.width,
                    "y_breaks": c.y_breaks.tolist(),
                    "residuals": c.residuals.tolist(),
                    "f_left": [self.f_on_vertical(k, y) for y in c.y_breaks],
                    "f_right": [self.f_on_vertical(k + 1, y) for y in c.y_breaks],
                    "V_left": [float(self.V_from_f(self.f_on_vertical(k, y))) for y in c.y_breaks],
                    "V_right": [float(self.V_from_f(self.f_on_vertical(k + 1, y))) for y in c.y_breaks],
                    "f_abd": c.f_abd.tolist(),
                    "f_acd": c.f_acd.tolist(),
                    "degenerate": c.degenerate.tolist(),
                }
                for k, c in enumerate(self.columns)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def verify_grid_export(data: dict, tol: float = LOOP_TOL) -> dict:
    """Re-check an exported grid from its stored numbers alone."""
    loop = max(max(map(abs, c["residuals"]), default=0.0) for c in data["columns"])
    gap = max(max((abs(a - b) for a, b in zip(c["f_abd"], c["f_acd"])), default=0.0) for c in data["columns"])
    mono = all(
        all(b > a for a, b in zip(side, side[1:]))
        for c in data["columns"] for side in (c["f_left"], c["f_right"])
    )
    v_ok = all(
        abs(v - (data["V0"] + 0.5 * (f * f - data["f0"] ** 2))) <= 1e-9 * max(1.0, abs(v))
        for c in data["columns"] for f, v in zip(c["f_left"] + c["f_right"], c["V_left"] + c["V_right"])
    )
    return {
        "max_loop_residual": loop,
        "max_two_path_gap": gap,
        "loop_ok": loop <= tol,
        "two_path_ok": gap <= tol,
        "f_increasing": mono,
        "V_consistent": v_ok,
    }


def _cell_circulation(policy, x: float, y: float, w: float, h) -> np.ndarray:
    """Counter-clockwise line integral of the weights around [x, x+w] x [y, y+h], batched over h."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    xs = x + 0.5 * w * (1.0 + _GL_X)
    bottom = 0.5 * w * np.dot(_GL_W, _weights_batch(policy, np.column_stack([xs, np.full_like(xs, y)]))[:, 0])
    top_pts = np.stack(np.broadcast_arrays(xs[None, :], (y + h)[:, None]), axis=-1)
    top = 0.5 * w * (_weights_batch(policy, top_pts)[..., 0] @ _GL_W)
    ys = y + 0.5 * h[:, None] * (1.0 + _GL_X[None, :])
    left = 0.5 * h * (_weights_batch(policy, np.stack(np.broadcast_arrays(x, ys), axis=-1))[..., 1] @ _GL_W)
    right = 0.5 * h * (_weights_batch(policy, np.stack(np.broadcast_arrays(x + w, ys), axis=-1))[..., 1] @ _GL_W)
    return (bottom - top) - (left - right)


def solve_cell_height(policy, x: float, y: float, w: float, max_aspect: float = 64.0,
                      scan: int = 512) -> tuple[float, float, bool]:
    """Smallest positive height h with zero circulation on the cell [x, x+w] x [y, y+h].

    Returns (h, residual, degenerate). A circulation that vanishes identically
    over the scanned range gives a square cell. Raises GridConstructionError
    when no sign change is found.
    """
    hs = w * max_aspect * np.arange(1, scan + 1) / scan
    g = _cell_circulation(policy, x, y, w, hs)
    scale = w * w
    if np.all(np.abs(g) <= 1e-13 * scale):
        return w, float(_cell_circulation(policy, x, y, w, w)[0]), True
    # the first scan point may sit on a root already
    exact = np.flatnonzero(np.abs(g) <= 1e-15 * scale)
    signs = np.sign(g)
    change = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    if exact.size and (not change.size or exact[0] <= change[0]):
        k = int(exact[0])
        return float(hs[k]), float(g[k]), False
    if not change.size:
        raise GridConstructionError(
            f"no zero-circulation height for cell at ({x:g}, {y:g}) with width {w:g}: "
            f"circulation keeps sign {int(signs[0]):+d} for heights up to {hs[-1]:g}",
            cell=(x, y),
        )
    k = int(change[0])
    fn = lambda h: float(_cell_circulation(policy, x, y, w, h)[0])  # noqa: E731
    h = brentq(fn, hs[k], hs[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(h), float(fn(h)), False


def build_grid_2d(policy, base, extent, init_cell: float = 1.0, f0: float = 1.0, V0: float = 1.0,
                  max_aspect: float = 64.0) -> LyapunovGrid2D:
    """Grid over [base, extent] (two users) whose cells all have vanishing circulation."""
    base = np.asarray(base, dtype=float)
    extent = np.asarray(extent, dtype=float)
    if base.shape != (2,) or extent.shape != (2,):
        raise DomainError("grid construction is implemented for two users")
    if np.any(extent <= base) or not init_cell > 0:
        raise DomainError("need extent > base componentwise and init_cell > 0")
    n_cols = int(math.ceil((extent[0] - base[0]) / init_cell - 1e-12))
    columns = []
    for c in range(n_cols):
        x = base[0] + c * init_cell
        ys, res, deg = [base[1]], [], []
        while ys[-1] < extent[1]:
            try:
                h, r, d = solve_cell_height(policy, x, ys[-1], init_cell, max_aspect)
            except GridConstructionError as exc:
                raise GridConstructionError(f"column {c}, cell {len(res)}: {exc}", cell=(c, len(res))) from exc
            ys.append(ys[-1] + h)
            res.append(r)
            deg.append(d)
        columns.append(GridColumn(x, init_cell, np.array(ys), np.array(res), degenerate=np.array(deg)))
    grid = LyapunovGrid2D(base, extent, init_cell, columns, f0, V0, policy)
    for k, col in enumerate(columns):
        left = np.array([grid.f_on_vertical(k, y) for y in col.y_breaks[1:]])
        right = np.array([grid.f_on_vertical(k + 1, y) for y in col.y_breaks[1:]])
        top = np.array([grid._int_h(y, col.x0, col.x0 + col.width) for y in col.y_breaks[1:]])
        col.f_abd = right
        col.f_acd = left + top
    return grid


# ---------------------------------------------------------------- drift


@dataclass(frozen=True)
class DriftEstimate:
    q: tuple[float, ...]
    mean: float
    stderr: float
    f: float
    n_samples: int

    @property
    def ratio(self) -> float:
        return self.mean / self.f

    @property
    def ratio_stderr(self) -> float:
        return self.stderr / self.f

    def to_dict(self) -> dict:
        return {"q": list(self.q), "mean": self.mean, "stderr": self.stderr, "f": self.f,
                "ratio": self.ratio, "ratio_stderr": self.ratio_stderr, "n_samples": self.n_samples}


def one_step(policy, cm: ChannelModel, am: ArrivalModel, q, n: int, seed: int) -> np.ndarray:
    """n independent successors of q under one slot of the chain (exact observation)."""
    q = np.asarray(q, dtype=float)
    ch_rng, ar_rng = make_streams(seed)
    states = ch_rng.choice(cm.n_states, size=n, p=cm.probabilities)
    a = am.sample(ar_rng, size=n)
    mu = np.asarray(policy.weights(q), dtype=float)
    picks = np.array([reg.vertices[int(np.argmax(reg.vertices @ mu))] for reg in cm.regions])
    r = picks[states]
    return np.maximum(q + a - r, 0.0)


def drift_estimate(policy, cm: ChannelModel, am: ArrivalModel, q, potential: PotentialField,
                   n_samples: int = 1000, seed: int = 0) -> DriftEstimate:
    """Monte-Carlo mean of V(q') - V(q) with its standard error."""
    if n_samples < 30:
        raise DomainError("drift estimation needs at least 30 samples")
    q = np.asarray(q, dtype=float)
    nxt = one_step(policy, cm, am, q, n_samples, seed)
    dV = np.asarray(potential.V(nxt), dtype=float) - float(potential.V(q))
    return DriftEstimate(
        q=tuple(q.tolist()),
        mean=float(dV.mean()),
        stderr=float(dV.std(ddof=1) / math.sqrt(n_samples)),
        f=float(potential.f(q)),
        n_samples=n_samples,
    )


def drift_margin(estimates: list[DriftEstimate], z: float = 3.0) -> float:
    """Largest theta with ratio + z * ratio_stderr <= -theta at every probe (negative if none)."""
    return -max(e.ratio + z * e.ratio_stderr for e in estimates)


def probe_points(M: int, norms, n: int, seed: int) -> np.ndarray:
    """n probe states with l1 norms spread over [min(norms), max(norms)] in random directions."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 99])))
    lo, hi = float(min(norms)), float(max(norms))
    B = np.linspace(lo, hi, n)
    return rng.dirichlet(np.ones(M), size=n) * B[:, None]
