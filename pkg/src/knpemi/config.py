"""Scenario configuration files.

A configuration is an INI file.  Keys before the first section header belong
to the top level (only ``scenario``).  Every other value has a default, so a
file holding just ``scenario = model_a_2d`` describes Model A completely.

Sections::

    [geometry]   n_x, degree, mesh (path of an imported mesh), units (um|m)
    [species.X]  z, D_i, D_e, c_i0, c_e0, g_leak, g_max (one section per ion)
    [constants]  R, T, F, C_m, phi_rest, phi_m0
    [membrane]   model (hh|kir_nak|leak|none), label.<n> = model for cell label n
    [stimulus]   g_bar, a, period, amplitude, support, axis, threshold, labels
    [source.N]   species, region (i|e), value, lower, upper, t_start, t_end
    [time]       dt (s), n_steps, n_ode
    [solver]     precond, tol, restart, maxiter, theta, freeze
    [probes]     <name> = x, y[, z]  (mesh units); quantities = Na, K, Cl, phi
    [output]     dir, snapshot_every

Lengths (mesh coordinates, probes, stimulus threshold, source boxes) are in
``units``; everything else is SI.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .membrane import IonSpecies, MembraneModel, PhysicalConstants, Stimulus, check_electroneutral, default_species
from .mesh import EXTRA, INTRA, build_model_a_mesh, import_mesh
from .solver import MODES, KrylovConfig
from .system import BulkSource, Problem, SolverSettings

SCENARIOS = ("model_a_2d", "model_a_3d", "imported")
MEMBRANE_MODELS = ("hh", "kir_nak", "leak", "none")
UNITS = {"um": 1e-6, "m": 1.0}
TOP = "top"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryConfig:
    n_x: int = 64
    degree: int = 1
    mesh: str = ""
    units: str = "um"


@dataclass(frozen=True)
class TimeConfig:
    dt: float = 5e-5
    n_steps: int = 300
    n_ode: int = 25


@dataclass(frozen=True)
class SolverConfig:
    precond: str = "amg_monolithic"
    tol: float = 1e-6
    restart: int = 30
    maxiter: int = 1000
    theta: float | None = None
    freeze: bool = True


@dataclass(frozen=True)
class MembraneConfig:
    model: str = "hh"
    labels: tuple = ()  # ((label, model), ...)


@dataclass(frozen=True)
class SourceConfig:
    species: str
    region: str
    value: float
    lower: tuple = ()
    upper: tuple = ()
    t_start: float = 0.0
    t_end: float = float("inf")


@dataclass(frozen=True)
class ProbeConfig:
    points: tuple = (("x_i", (0.5, 0.5)), ("x_e", (0.15, 0.15)))
    quantities: tuple = ()


PROBES_3D = ProbeConfig((("x_i", (0.5, 0.5, 0.5)), ("x_e", (0.15, 0.15, 0.15))))


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    snapshot_every: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "model_a_2d"
    geometry: GeometryConfig = GeometryConfig()
    species: tuple = field(default_factory=default_species)
    constants: PhysicalConstants = PhysicalConstants()
    membrane: MembraneConfig = MembraneConfig()
    stimulus: Stimulus = Stimulus()
    sources: tuple = ()
    time: TimeConfig = TimeConfig()
    solver: SolverConfig = SolverConfig()
    probes: ProbeConfig = ProbeConfig()
    output: OutputConfig = OutputConfig()

    @property
    def dim(self) -> int:
        return 3 if self.scenario == "model_a_3d" else 2

    @property
    def length_scale(self) -> float:
        return UNITS[self.geometry.units]


# parsing helpers ---------------------------------------------------------------


def _convert(path: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "names":
            return tuple(v for v in raw.replace(",", " ").split())
        if kind == "optfloat":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _apply(obj, section, path: str, schema: dict):
    """Overwrite the dataclass fields listed in ``schema`` from an INI section."""
    updates = {}
    for key, raw in section.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key (valid: {', '.join(sorted(schema))})")
        updates[key] = _convert(f"{path}.{key}", raw, schema[key])
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


_GEOMETRY = {"n_x": int, "degree": int, "mesh": str, "units": str}
_TIME = {"dt": float, "n_steps": int, "n_ode": int}
_SOLVER = {"precond": str, "tol": float, "restart": int, "maxiter": int, "theta": "optfloat", "freeze": bool}
_CONSTANTS = {f.name: float for f in fields(PhysicalConstants)}
_SPECIES = {"z": int, "D_i": float, "D_e": float, "c_i0": float, "c_e0": float, "g_leak": float, "g_max": float}
_STIMULUS = {"g_bar": float, "a": float, "period": float, "amplitude": float, "support": str, "axis": int,
             "threshold": float, "labels": "ints"}
_SOURCE = {"species": str, "region": str, "value": float, "lower": "floats", "upper": "floats",
           "t_start": float, "t_end": float}
_OUTPUT = {"dir": str, "snapshot_every": int}


def parse_config(text: str, base_dir: Path | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(f"[{TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    top = dict(cp[TOP])
    for key in top:
        if key != "scenario":
            raise ConfigError(f"{key}: unknown top-level key (only 'scenario' is allowed before a section)")
    cfg = ScenarioConfig(scenario=top.get("scenario", "model_a_2d").strip())
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {cfg.scenario!r} (valid: {', '.join(SCENARIOS)})")
    if cfg.dim == 3:
        cfg = replace(cfg, probes=PROBES_3D)

    species = {s.name: s for s in cfg.species}
    sources = []
    for name in cp.sections():
        if name == TOP:
            continue
        sec = cp[name]
        if name == "geometry":
            cfg = replace(cfg, geometry=_apply(cfg.geometry, sec, name, _GEOMETRY))
        elif name == "time":
            cfg = replace(cfg, time=_apply(cfg.time, sec, name, _TIME))
        elif name == "solver":
            cfg = replace(cfg, solver=_apply(cfg.solver, sec, name, _SOLVER))
        elif name == "constants":
            cfg = replace(cfg, constants=_apply(cfg.constants, sec, name, _CONSTANTS))
        elif name == "stimulus":
            cfg = replace(cfg, stimulus=_apply(cfg.stimulus, sec, name, _STIMULUS))
        elif name == "output":
            cfg = replace(cfg, output=_apply(cfg.output, sec, name, _OUTPUT))
        elif name.startswith("species."):
            ion = name.split(".", 1)[1]
            if ion in species:
                base = species[ion]
            else:
                missing = [k for k in _SPECIES if k not in sec and k not in ("g_leak", "g_max")]
                if missing:
                    raise ConfigError(f"{name}: new species needs {', '.join(missing)}")
                base = IonSpecies(ion, 1, 1.0, 1.0, 1.0, 1.0)
            species[ion] = _apply(base, sec, name, _SPECIES)
        elif name.startswith("source."):
            sources.append(_parse_source(name, sec))
        elif name == "membrane":
            cfg = replace(cfg, membrane=_parse_membrane(sec))
        elif name == "probes":
            cfg = replace(cfg, probes=_parse_probes(sec))
        else:
            raise ConfigError(f"[{name}]: unknown section")
    cfg = replace(cfg, species=tuple(species.values()), sources=tuple(sources))
    if cfg.geometry.mesh and base_dir is not None and not Path(cfg.geometry.mesh).is_absolute():
        cfg = replace(cfg, geometry=replace(cfg.geometry, mesh=str(Path(base_dir) / cfg.geometry.mesh)))
    validate_config(cfg)
    return cfg


def _parse_source(name, sec) -> SourceConfig:
    for key in ("species", "region", "value"):
        if key not in sec:
            raise ConfigError(f"{name}.{key}: required")
    src = SourceConfig(species="", region="e", value=0.0)
    return _apply(src, sec, name, _SOURCE)


def _parse_membrane(sec) -> MembraneConfig:
    model = "hh"
    labels = []
    for key, raw in sec.items():
        raw = raw.strip()
        if key == "model":
            model = raw
        elif key.startswith("label."):
            try:
                labels.append((int(key.split(".", 1)[1]), raw))
            except ValueError:
                raise ConfigError(f"membrane.{key}: label must be an integer") from None
        else:
            raise ConfigError(f"membrane.{key}: unknown key (valid: model, label.<n>)")
    return MembraneConfig(model, tuple(sorted(labels)))


def _parse_probes(sec) -> ProbeConfig:
    points, quantities = [], ()
    for key, raw in sec.items():
        if key == "quantities":
            quantities = _convert("probes.quantities", raw, "names")
        else:
            points.append((key, _convert(f"probes.{key}", raw, "floats")))
    return ProbeConfig(tuple(points), quantities)


def validate_config(cfg: ScenarioConfig) -> None:
    g = cfg.geometry
    if cfg.scenario in ("model_a_2d", "model_a_3d"):
        if g.n_x < 4 or g.n_x % 4:
            raise ConfigError(f"geometry.n_x: must be a positive multiple of 4 (got {g.n_x})")
    elif not g.mesh:
        raise ConfigError("geometry.mesh: required for the imported scenario")
    if g.degree not in (1, 2):
        raise ConfigError(f"geometry.degree: must be 1 or 2 (got {g.degree})")
    if g.units not in UNITS:
        raise ConfigError(f"geometry.units: must be one of {', '.join(UNITS)} (got {g.units!r})")
    try:
        check_electroneutral(cfg.species)
    except ValueError as exc:
        raise ConfigError(f"species: {exc}") from None
    if cfg.time.dt <= 0:
        raise ConfigError(f"time.dt: must be positive (got {cfg.time.dt})")
    if cfg.time.n_ode < 1:
        raise ConfigError(f"time.n_ode: must be >= 1 (got {cfg.time.n_ode})")
    if cfg.time.n_steps < 0:
        raise ConfigError(f"time.n_steps: must be >= 0 (got {cfg.time.n_steps})")
    for label, model in ((None, cfg.membrane.model),) + cfg.membrane.labels:
        if model not in MEMBRANE_MODELS:
            where = "membrane.model" if label is None else f"membrane.label.{label}"
            raise ConfigError(f"{where}: unknown membrane model {model!r} (valid: {', '.join(MEMBRANE_MODELS)})")
    if cfg.solver.precond not in MODES:
        raise ConfigError(f"solver.precond: unknown mode {cfg.solver.precond!r} (valid: {', '.join(MODES)})")
    try:
        KrylovConfig(cfg.solver.restart, cfg.solver.tol, cfg.solver.maxiter)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    names = {s.name for s in cfg.species}
    for i, src in enumerate(cfg.sources):
        if src.species not in names:
            raise ConfigError(f"source.{i}.species: unknown species {src.species!r}")
        if src.region not in ("i", "e"):
            raise ConfigError(f"source.{i}.region: must be 'i' or 'e'")
    for q in cfg.probes.quantities:
        if q not in names | {"phi"}:
            raise ConfigError(f"probes.quantities: unknown quantity {q!r}")
    for name, x in cfg.probes.points:
        if len(x) != cfg.dim and cfg.scenario != "imported":
            raise ConfigError(f"probes.{name}: expected {cfg.dim} coordinates")
    if cfg.output.snapshot_every < 0:
        raise ConfigError("output.snapshot_every: must be >= 0")
    try:
        Stimulus(**{f.name: getattr(cfg.stimulus, f.name) for f in fields(Stimulus)})
    except ValueError as exc:
        raise ConfigError(f"stimulus: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    return parse_config(path.read_text(), base_dir=path.parent)


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialise every value (defaults included) so the file stands alone."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str

    def put(section, obj, keys):
        cp[section] = {}
        for k in keys:
            v = getattr(obj, k)
            cp[section][k] = _show(v)

    put("geometry", cfg.geometry, _GEOMETRY)
    for s in cfg.species:
        put(f"species.{s.name}", s, _SPECIES)
    put("constants", cfg.constants, _CONSTANTS)
    cp["membrane"] = {"model": cfg.membrane.model}
    for label, model in cfg.membrane.labels:
        cp["membrane"][f"label.{label}"] = model
    put("stimulus", cfg.stimulus, _STIMULUS)
    for i, src in enumerate(cfg.sources):
        put(f"source.{i}", src, _SOURCE)
    put("time", cfg.time, _TIME)
    put("solver", cfg.solver, _SOLVER)
    cp["probes"] = {name: _show(x) for name, x in cfg.probes.points}
    if cfg.probes.quantities:
        cp["probes"]["quantities"] = ", ".join(cfg.probes.quantities)
    put("output", cfg.output, _OUTPUT)
    buf = io.StringIO()
    buf.write(f"scenario = {cfg.scenario}\n\n")
    cp.write(buf)
    return buf.getvalue()


def _show(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_show(x) for x in v)
    return str(v)


# construction ------------------------------------------------------------------


def build_mesh(cfg: ScenarioConfig):
    if cfg.scenario == "imported":
        return import_mesh(cfg.geometry.mesh, scale=cfg.length_scale)
    return build_model_a_mesh(cfg.geometry.n_x, cfg.dim, side=1.0 * cfg.length_scale)


def _membrane(cfg: ScenarioConfig):
    make = lambda kind: MembraneModel(kind, cfg.species, cfg.constants)  # noqa: E731
    if not cfg.membrane.labels:
        return make(cfg.membrane.model)
    models = {label: make(kind) for label, kind in cfg.membrane.labels}
    return models, make(cfg.membrane.model)


def _box(values, d, fill, scale):
    if not values:
        return tuple([fill] * 3)
    if len(values) != d:
        raise ConfigError(f"source box needs {d} coordinates, got {len(values)}")
    return tuple(v * scale for v in values) + tuple([fill] * (3 - d))


def build_problem(cfg: ScenarioConfig, mesh=None, **overrides) -> Problem:
    mesh = build_mesh(cfg) if mesh is None else mesh
    scale = cfg.length_scale
    d = mesh.dim
    stim = replace(cfg.stimulus, threshold=cfg.stimulus.threshold * scale)
    sources = tuple(
        BulkSource(s.species, INTRA if s.region == "i" else EXTRA, s.value,
                   _box(s.lower, d, -np.inf, scale), _box(s.upper, d, np.inf, scale), s.t_start, s.t_end)
        for s in cfg.sources
    )
    membrane = _membrane(cfg)
    args = dict(
        mesh=mesh, degree=cfg.geometry.degree, species=cfg.species, constants=cfg.constants,
        membrane=membrane if not isinstance(membrane, tuple) else membrane[1],
        dt=cfg.time.dt, n_ode=cfg.time.n_ode, stimulus=stim, sources=sources,
    )
    args.update(overrides)
    problem = Problem(**args)
    if isinstance(membrane, tuple) and "membrane" not in overrides:
        from .membrane import LabelledMembrane

        problem.membrane = LabelledMembrane(membrane[0], problem.node_labels, default=membrane[1])
    return problem


def solver_settings(cfg: ScenarioConfig, **overrides) -> SolverSettings:
    s = cfg.solver
    settings = SolverSettings(
        precond=s.precond, krylov=KrylovConfig(s.restart, s.tol, s.maxiter), theta=s.theta, freeze=s.freeze
    )
    return replace(settings, **overrides)


def probe_points(cfg: ScenarioConfig):
    q = cfg.probes.quantities or None
    return [(tuple(v * cfg.length_scale for v in x), q) for _, x in cfg.probes.points]
