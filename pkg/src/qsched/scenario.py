"""Scenario files: parsing, validation and load resolution.

A scenario is a TOML document with a mandatory ``schema`` string. Every
validation failure raises ConfigError with the dotted name of the offending
field.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .queueing import ArrivalDist, ArrivalModel, ObservationModel
from .rate_region import ChannelModel, RatePolytope, scale_to_boundary

SCHEMA = "qsched-scenario/1"
TASKS = ("simulate", "necessity", "conditions", "lyapunov")
MAX_LOAD_FACTOR = 1.5

_TOP_KEYS = {"schema", "name", "horizon", "seeds", "q0", "tasks", "limits", "channel", "arrivals",
             "policy", "observation", "stability", "necessity", "conditions", "lyapunov"}
_SECTION_KEYS = {
    "limits": {"rate_bound", "arrival_bound"},
    "channel": {"states"},
    "arrivals": {"kind", "size", "load_factor", "direction", "means", "values", "probs"},
    "policy": {"name", "params"},
    "observation": {"delay_slots", "quantization_step", "max_delay"},
    "stability": {"slope_tol", "occupation_bound", "window_fraction"},
    "necessity": {"eps", "bounded_threshold", "norm"},
    "conditions": {"levels", "samples_per_level", "perturbation_bound", "bounded_threshold",
                   "eps1", "eps2", "seed", "norm"},
    "lyapunov": {"potential", "quadrature_steps", "grid_base", "grid_extent", "init_cell",
                 "drift_probe_norms", "drift_probes", "drift_samples", "drift_seed"},
}


@dataclass(frozen=True)
class StabilityOptions:
    slope_tol: float = 1e-3
    occupation_bound: float = 50.0
    window_fraction: float = 0.5


@dataclass(frozen=True)
class NecessityOptions:
    eps: float = 0.2
    bounded_threshold: float = 10.0
    norm: str = "l1"


@dataclass(frozen=True)
class ConditionOptions:
    levels: tuple[float, ...] = (1e2, 1e3, 1e4)
    samples_per_level: int = 2000
    perturbation_bound: float = 10.0
    bounded_threshold: float = 10.0
    eps1: float = 0.01
    eps2: float = 0.01
    seed: int = 0
    norm: str = "linf"


@dataclass(frozen=True)
class LyapunovOptions:
    potential: str = "ray"
    quadrature_steps: int = 256
    grid_base: tuple[float, ...] | None = None
    grid_extent: tuple[float, ...] | None = None
    init_cell: float = 1.0
    drift_probe_norms: tuple[float, float] = (50.0, 200.0)
    drift_probes: int = 10
    drift_samples: int = 1000
    drift_seed: int = 0


@dataclass(frozen=True)
class LoadResolution:
    factor: float | None
    direction: tuple[float, ...] | None
    x_star: float | None
    rho: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"factor": self.factor, "direction": None if self.direction is None else list(self.direction),
                "x_star": self.x_star, "rho": list(self.rho)}


@dataclass
class Scenario:
    path: Path
    sha256: str
    name: str
    horizon: int
    seeds: tuple[int, ...]
    q0: tuple[float, ...] | None
    tasks: tuple[str, ...]
    channel: ChannelModel
    arrival_table: dict
    arrival_bound: float
    policy_name: str
    policy_params: dict
    observation: ObservationModel
    stability: StabilityOptions
    necessity: NecessityOptions
    conditions: ConditionOptions
    lyapunov: LyapunovOptions
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def M(self) -> int:
        return self.channel.M

    def with_seeds(self, seeds) -> "Scenario":
        return replace(self, seeds=tuple(int(s) for s in seeds))


def _check_keys(table: dict, allowed: set, where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def _num(value, where: str, *, positive=False, nonneg=False, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not np.isfinite(value) and not (value == np.inf and not integer):
        raise ConfigError(f"{where}: must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value!r}")
    if nonneg and not value >= 0:
        raise ConfigError(f"{where}: must be >= 0, got {value!r}")
    return int(value) if integer else float(value)


def _vec(value, where: str, M: int | None = None) -> tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a nonempty list of numbers")
    out = tuple(_num(v, f"{where}[{i}]") for i, v in enumerate(value))
    if M is not None and len(out) != M:
        raise ConfigError(f"{where}: expected {M} entries, got {len(out)}")
    return out


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table")
    _check_keys(sec, _SECTION_KEYS[name], name)
    return sec


def _parse_channel(doc: dict, rate_bound: float) -> ChannelModel:
    sec = _section(doc, "channel")
    states = sec.get("states")
    if not isinstance(states, list) or not states:
        raise ConfigError("channel.states: at least one channel state is required")
    probs, regions = [], []
    for k, st in enumerate(states):
        where = f"channel.states[{k}]"
        if not isinstance(st, dict):
            raise ConfigError(f"{where}: expected a table")
        _check_keys(st, {"probability", "vertices"}, where)
        if "probability" not in st or "vertices" not in st:
            raise ConfigError(f"{where}: needs 'probability' and 'vertices'")
        probs.append(_num(st["probability"], f"{where}.probability", positive=True))
        verts = st["vertices"]
        if not isinstance(verts, list) or not verts:
            raise ConfigError(f"{where}.vertices: empty vertex list")
        rows = [_vec(v, f"{where}.vertices[{i}]") for i, v in enumerate(verts)]
        try:
            regions.append(RatePolytope(np.array(rows), rate_bound))
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{where}.vertices: {exc}") from exc
    total = float(np.sum(probs))
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(f"channel.states[*].probability: probabilities sum to {total:.15g}, not 1")
    try:
        return ChannelModel(np.array(probs), tuple(regions))
    except ConfigError as exc:
        raise ConfigError(f"channel: {exc}") from exc


def _parse_options(cls, sec: dict, where: str, spec: dict):
    kwargs = {}
    for key, kind in spec.items():
        if key not in sec:
            continue
        v = sec[key]
        loc = f"{where}.{key}"
        if kind == "pos":
            kwargs[key] = _num(v, loc, positive=True)
        elif kind == "nonneg":
            kwargs[key] = _num(v, loc, nonneg=True)
        elif kind == "int":
            kwargs[key] = _num(v, loc, integer=True, nonneg=True)
        elif kind == "posint":
            kwargs[key] = _num(v, loc, integer=True, positive=True)
        elif kind == "vec":
            kwargs[key] = _vec(v, loc)
        elif kind == "str":
            if not isinstance(v, str):
                raise ConfigError(f"{loc}: expected a string")
            kwargs[key] = v
    return cls(**kwargs)


def scenario_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        doc = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not a valid TOML document: {exc}") from exc
    return parse_scenario(doc, path, scenario_hash(data))


def parse_scenario(doc: dict, path=Path("<memory>"), sha256: str = "") -> Scenario:
    _check_keys(doc, _TOP_KEYS, "scenario")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {doc.get('schema')!r}")
    limits = _section(doc, "limits")
    rate_bound = _num(limits.get("rate_bound", np.inf), "limits.rate_bound", positive=True)
    arrival_bound = _num(limits.get("arrival_bound", np.inf), "limits.arrival_bound", positive=True)
    channel = _parse_channel(doc, rate_bound)
    M = channel.M

    if "horizon" not in doc:
        raise ConfigError("horizon: required")
    horizon = _num(doc["horizon"], "horizon", integer=True, positive=True)
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: expected a nonempty list of integers")
    seeds = tuple(_num(s, f"seeds[{i}]", integer=True, nonneg=True) for i, s in enumerate(seeds))
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate seeds")
    q0 = None
    if "q0" in doc:
        q0 = _vec(doc["q0"], "q0", M)
        if min(q0) < 0:
            raise ConfigError("q0: queue lengths must be >= 0")
    tasks = doc.get("tasks", ["simulate"])
    if not isinstance(tasks, list) or any(t not in TASKS for t in tasks):
        raise ConfigError(f"tasks: each task must be one of {TASKS}, got {tasks!r}")

    arrivals = _section(doc, "arrivals")
    policy = _section(doc, "policy")
    if not isinstance(policy.get("name"), str):
        raise ConfigError("policy.name: required string")
    params = policy.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("policy.params: expected a table")

    obs = _section(doc, "observation")
    try:
        observation = ObservationModel(
            delay_slots=_num(obs.get("delay_slots", 0), "observation.delay_slots", integer=True, nonneg=True),
            quantization_step=_num(obs.get("quantization_step", 0.0), "observation.quantization_step", nonneg=True),
            max_delay=_num(obs.get("max_delay", 100), "observation.max_delay", integer=True, nonneg=True),
        )
    except ConfigError as exc:
        raise ConfigError(f"observation: {exc}") from exc

    stability = _parse_options(StabilityOptions, _section(doc, "stability"), "stability",
                               {"slope_tol": "pos", "occupation_bound": "pos", "window_fraction": "pos"})
    if stability.window_fraction > 1:
        raise ConfigError("stability.window_fraction: must lie in (0, 1]")
    necessity = _parse_options(NecessityOptions, _section(doc, "necessity"), "necessity",
                               {"eps": "pos", "bounded_threshold": "pos", "norm": "str"})
    if necessity.norm not in ("l1", "l2", "linf"):
        raise ConfigError("necessity.norm: must be l1, l2 or linf")
    conditions = _parse_options(ConditionOptions, _section(doc, "conditions"), "conditions", {
        "levels": "vec", "samples_per_level": "posint", "perturbation_bound": "pos",
        "bounded_threshold": "pos", "eps1": "pos", "eps2": "pos", "seed": "int", "norm": "str"})
    lyap = _parse_options(LyapunovOptions, _section(doc, "lyapunov"), "lyapunov", {
        "potential": "str", "quadrature_steps": "posint", "grid_base": "vec", "grid_extent": "vec",
        "init_cell": "pos", "drift_probe_norms": "vec", "drift_probes": "posint",
        "drift_samples": "posint", "drift_seed": "int"})
    if lyap.potential not in ("ray", "grid"):
        raise ConfigError("lyapunov.potential: must be 'ray' or 'grid'")
    if lyap.quadrature_steps < 16:
        raise ConfigError("lyapunov.quadrature_steps: must be >= 16")
    if lyap.drift_samples < 30:
        raise ConfigError("lyapunov.drift_samples: must be >= 30")
    if (lyap.grid_base is None) != (lyap.grid_extent is None):
        raise ConfigError("lyapunov.grid_base and lyapunov.grid_extent must be given together")
    if lyap.potential == "grid" and lyap.grid_base is None:
        raise ConfigError("lyapunov.potential = 'grid' needs grid_base and grid_extent")

    sc = Scenario(
        path=Path(path), sha256=sha256, name=str(doc.get("name", Path(path).stem)),
        horizon=horizon, seeds=seeds, q0=q0, tasks=tuple(tasks), channel=channel,
        arrival_table=arrivals, arrival_bound=arrival_bound,
        policy_name=policy["name"], policy_params=params, observation=observation,
        stability=stability, necessity=necessity, conditions=conditions, lyapunov=lyap, raw=doc,
    )
    # resolve once so that arrival and policy errors surface as validation errors
    am, _ = resolve_load(sc)
    build_policy(sc, am)
    return sc


def resolve_load(sc: Scenario) -> tuple[ArrivalModel, LoadResolution]:
    """Arrival model from absolute means or from load_factor * x_star * direction."""
    a = sc.arrival_table
    M = sc.M
    kind = a.get("kind", "bernoulli")
    if kind not in ("constant", "bernoulli", "discrete"):
        raise ConfigError(f"arrivals.kind: must be constant, bernoulli or discrete, got {kind!r}")

    if kind == "discrete":
        if "values" not in a or "probs" not in a:
            raise ConfigError("arrivals: discrete arrivals need 'values' and 'probs' (one list per user)")
        if len(a["values"]) != M or len(a["probs"]) != M:
            raise ConfigError(f"arrivals.values/probs: expected {M} per-user lists")
        dists = tuple(
            ArrivalDist.discrete(_vec(v, f"arrivals.values[{i}]"), _vec(p, f"arrivals.probs[{i}]"))
            for i, (v, p) in enumerate(zip(a["values"], a["probs"]))
        )
        means = _vec(a["means"], "arrivals.means", M) if "means" in a else None
        try:
            am = ArrivalModel(dists, sc.arrival_bound, means)
        except ConfigError as exc:
            raise ConfigError(f"arrivals: {exc}") from exc
        return am, LoadResolution(None, None, None, tuple(am.rho.tolist()))

    has_means = "means" in a
    has_load = "load_factor" in a or "direction" in a
    if has_means == has_load:
        raise ConfigError("arrivals: give either 'means' or 'load_factor' with 'direction'")
    if has_means:
        rho = np.array(_vec(a["means"], "arrivals.means", M))
        if rho.min() < 0:
            raise ConfigError("arrivals.means: must be >= 0")
        res = LoadResolution(None, None, None, tuple(rho.tolist()))
    else:
        if "load_factor" not in a or "direction" not in a:
            raise ConfigError("arrivals: 'load_factor' and 'direction' must be given together")
        factor = _num(a["load_factor"], "arrivals.load_factor")
        if not 0 < factor <= MAX_LOAD_FACTOR:
            raise ConfigError(f"arrivals.load_factor: must lie in (0, {MAX_LOAD_FACTOR}], got {factor!r}")
        direction = np.array(_vec(a["direction"], "arrivals.direction", M))
        if direction.min() < 0 or not np.any(direction > 0):
            raise ConfigError("arrivals.direction: must be nonnegative and not all zero")
        try:
            x_star = scale_to_boundary(sc.channel, direction)
        except DomainError as exc:
            raise ConfigError(f"arrivals.direction: {exc}") from exc
        rho = factor * x_star * direction
        res = LoadResolution(factor, tuple(direction.tolist()), float(x_star), tuple(rho.tolist()))

    try:
        if kind == "constant":
            am = ArrivalModel.constant(rho, sc.arrival_bound)
        else:
            size = _num(a.get("size", sc.arrival_bound), "arrivals.size", positive=True)
            if np.any(rho > size):
                raise ConfigError(f"arrivals.size: Bernoulli size {size} is below a mean rate {rho.max()}")
            am = ArrivalModel.bernoulli(rho, size, sc.arrival_bound if np.isfinite(sc.arrival_bound) else size)
    except ConfigError as exc:
        raise ConfigError(f"arrivals: {exc}") from exc
    return am, res


def build_policy(sc: Scenario, am: ArrivalModel):
    from .policies import make_policy

    try:
        return make_policy(sc.policy_name, sc.M, cm=sc.channel, abar=am.rho, **sc.policy_params)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"policy: {exc}") from exc
