"""Scenario files: schema, validation and shipped presets.

A scenario bundles everything one planning run needs: robot constants,
payloads, gait request, terrain, cost weights, solver options and horizon
settings.  Files are YAML with a fixed schema (format_version 1); unknown or
duplicate keys are rejected and every diagnostic carries file:line.  All
omitted keys fall back to documented defaults and the parse records which
ones did, so a report can echo the fully resolved configuration.

Top-level keys::

    format_version: 1            # required, must be 1
    name: sc1                    # default: file stem
    description: free text       # optional
    mode: payload_aware          # required: payload_aware | locomotion_only
    dt: 0.2                      # knot spacing [s]
    export_rate: 100.0           # trajectory sampling rate [Hz]
    robot:                       # optional overrides
      mass: 113.0
      com_height: 0.55           # CoM reference height above mean feet
      arm_offsets: [[0.45, 0.25, -0.10], [0.45, -0.25, -0.10]]
    payloads:                    # list; empty/omitted = unloaded
      - {arm: left, mass: 10.0}  # arm: left | right | 0 | 1
    gait:                        # see GaitSpec; stride is [dx, dy]
      pattern: [RH, RF, LH, LF]
      cycles: 1
      stride: [0.25, 0.0]
      step_duration: 1.5
      dwell: 0.2
      lead_in: 1.5
      total_time: 13.0
      clearance: 0.08
      foothold_heights: [...]    # optional, one entry per step, ~ = terrain
    stance:                      # optional initial foot positions
      LF: [0.35, 0.30]           # [x, y] (z from terrain) or [x, y, z]
    terrain:
      kind: flat                 # flat | slope
      slope_deg: -10.0
    weights: {...}               # PlannerWeights fields
    solver: {...}                # SolverOptions fields
    horizon:                     # omit for a single offline solve
      window: 4.0                # receding window length [s]
      replan_stride: 0.2         # shift between consecutive windows [s]
      warm_start: true           # seed each window from the previous one
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml

from .gait import FOOT_NAMES, GaitError, GaitSpec, build_schedule
from .sqp import SolverOptions
from .srbd import PayloadSpec, RobotConstants
from .terrain import Terrain
from .transcription import MODE_LOCOMOTION, MODE_PAYLOAD, PlannerWeights

MODES = (MODE_PAYLOAD, MODE_LOCOMOTION)
ARM_NAMES = ("left", "right")
FORMAT_VERSION = 1

NOMINAL_STANCE_XY = np.array([[0.35, 0.30],
                              [0.35, -0.30],
                              [-0.35, 0.30],
                              [-0.35, -0.30]])


class ScenarioError(ValueError):
    """Invalid scenario file or inconsistent scenario fields."""


@dataclass(frozen=True)
class Scenario:
    """Fully resolved planning request.

    `window` of None means one offline solve over the whole gait horizon;
    a float requests receding-horizon windows of that length, re-planned
    every `replan_stride` seconds.
    """

    name: str
    mode: str
    gait: GaitSpec
    dt: float = 0.2
    constants: RobotConstants = field(default_factory=RobotConstants)
    payloads: tuple = ()
    initial_stance: np.ndarray | None = None
    terrain: Terrain = field(default_factory=Terrain)
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    solver: SolverOptions = field(default_factory=SolverOptions)
    window: float | None = None
    replan_stride: float = 0.2
    mpc_warm_start: bool = True
    export_rate: float = 100.0
    description: str = ""
    source: str = "<memory>"
    defaults_used: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScenarioError(
                f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0.0:
            raise ScenarioError("dt must be positive")
        if not self.export_rate > 0.0:
            raise ScenarioError("export_rate must be positive")
        if not _is_multiple(self.gait.total_time, self.dt):
            raise ScenarioError(
                f"total_time {self.gait.total_time} is not a multiple of "
                f"dt {self.dt}")
        stance = self.initial_stance
        if stance is None:
            stance = np.array([
                [x, y, self.terrain.height_at(x, y)]
                for x, y in NOMINAL_STANCE_XY])
        stance = np.asarray(stance, dtype=float)
        if stance.shape != (4, 3):
            raise ScenarioError("initial_stance must be (4, 3)")
        object.__setattr__(self, "initial_stance", stance)
        object.__setattr__(self, "payloads", tuple(self.payloads))
        for p in self.payloads:
            if p.mass == 0.0:
                if self.mode == MODE_PAYLOAD:
                    warnings.warn(
                        f"scenario {self.name!r}: zero-mass payload on arm "
                        f"{ARM_NAMES[p.arm]}; the arm is planned unloaded",
                        stacklevel=2)
                else:
                    raise ScenarioError(
                        "zero-mass payload has no effect in "
                        f"{MODE_LOCOMOTION} mode; drop the entry")
        if self.window is not None:
            w = float(self.window)
            if w < 1.0:
                raise ScenarioError(
                    f"receding window must be >= 1 s, got {w}")
            if not _is_multiple(w, self.dt):
                raise ScenarioError(
                    f"window {w} is not a multiple of dt {self.dt}")
            if w > self.gait.total_time + 1e-9:
                raise ScenarioError(
                    f"window {w} exceeds total_time {self.gait.total_time}")
            rest = self.gait.total_time - w
            if rest > 1e-9 and not _is_multiple(rest, self.replan_stride):
                raise ScenarioError(
                    f"replan_stride {self.replan_stride} must divide "
                    f"total_time - window = {rest:g} so the last window "
                    f"ends the horizon")
            object.__setattr__(self, "window", w)
        stride = float(self.replan_stride)
        if not _is_multiple(stride, self.dt) or stride < self.dt - 1e-9:
            raise ScenarioError(
                f"replan_stride {stride} must be a positive multiple of "
                f"dt {self.dt}")
        if self.window is not None and stride > self.window + 1e-9:
            raise ScenarioError("replan_stride exceeds the window length")
        # surfaces gait timing that cannot fit the horizon
        try:
            build_schedule(self.gait)
        except GaitError as exc:
            raise ScenarioError(str(exc)) from exc

    @property
    def receding(self) -> bool:
        return self.window is not None

    @property
    def total_time(self) -> float:
        return self.gait.total_time

    def with_mode(self, mode: str) -> "Scenario":
        return dataclasses.replace(self, mode=mode)

    def to_dict(self) -> dict:
        """Fully resolved configuration, suitable for report echoing."""
        gait = self.gait
        d = {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "description": self.description,
            "mode": self.mode,
            "dt": self.dt,
            "export_rate": self.export_rate,
            "robot": {
                "mass": self.constants.mass,
                "com_height": float(self.constants.com_ref_offset[2]),
                "arm_offsets":
                    self.constants.nominal_arm_offsets.tolist(),
            },
            "payloads": [{"arm": ARM_NAMES[p.arm], "mass": p.mass}
                         for p in self.payloads],
            "gait": {
                "pattern": list(gait.pattern),
                "cycles": gait.cycles,
                "stride": gait.stride[:2].tolist(),
                "step_duration": gait.step_duration,
                "dwell": gait.dwell,
                "lead_in": gait.lead_in,
                "total_time": gait.total_time,
                "clearance": gait.clearance,
                "foothold_heights": list(gait.foothold_heights),
            },
            "stance": {FOOT_NAMES[i]: self.initial_stance[i].tolist()
                       for i in range(4)},
            "terrain": {"kind": self.terrain.kind,
                        "slope_deg": self.terrain.slope_deg},
            "weights": _dataclass_dict(self.weights),
            "solver": _dataclass_dict(self.solver),
            "horizon": {"window": self.window,
                        "replan_stride": self.replan_stride,
                        "warm_start": self.mpc_warm_start},
            "defaults_used": list(self.defaults_used),
        }
        return d


def _dataclass_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _is_multiple(value: float, dt: float) -> bool:
    ratio = value / dt
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


# --- line-aware YAML reading -------------------------------------------------

class _Section:
    """Mapping node wrapper: typed key access with file:line diagnostics."""

    def __init__(self, ctx: "_Ctx", node, label: str):
        if not isinstance(node, yaml.MappingNode):
            ctx.fail(node, f"{label} must be a mapping")
        self.ctx = ctx
        self.label = label
        self.line = node.start_mark.line + 1
        self.nodes = {}
        for key_node, value_node in node.value:
            if not isinstance(key_node, yaml.ScalarNode):
                ctx.fail(key_node, f"non-scalar key in {label}")
            key = str(key_node.value)
            if key in self.nodes:
                ctx.fail(key_node, f"duplicate key {key!r} in {label}")
            self.nodes[key] = value_node
        self.taken: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.nodes

    def take(self, key: str):
        self.taken.add(key)
        return self.nodes.get(key)

    def finish(self):
        for key, node in self.nodes.items():
            if key not in self.taken:
                self.ctx.fail(node, f"unknown key {key!r} in {self.label}")

    def scalar(self, key: str, kind: type, default=None, *, required=False):
        node = self.take(key)
        if node is None:
            if required:
                raise ScenarioError(
                    f"{self.ctx.path}:{self.line}: {self.label} is missing "
                    f"required key {key!r}")
            self.ctx.defaulted(self._path(key), default)
            return default
        value = self.ctx.value(node)
        if kind is float and isinstance(value, int) \
                and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) != (kind is bool):
            self.ctx.fail(node, f"{self._path(key)} must be {kind.__name__}, "
                                f"got {value!r}")
        return value

    def vector(self, key: str, lengths: tuple, default=None):
        node = self.take(key)
        if node is None:
            self.ctx.defaulted(self._path(key), default)
            return None if default is None else np.asarray(default, float)
        value = self.ctx.value(node)
        ok = (isinstance(value, list) and len(value) in lengths
              and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                      for v in value))
        if not ok:
            self.ctx.fail(node, f"{self._path(key)} must be a list of "
                                f"{' or '.join(map(str, lengths))} numbers")
        return np.asarray(value, dtype=float)

    def section(self, key: str) -> "_Section | None":
        node = self.take(key)
        if node is None:
            return None
        return _Section(self.ctx, node, self._path(key))

    def fail(self, key: str, message: str):
        node = self.nodes.get(key)
        if node is None:
            raise ScenarioError(f"{self.ctx.path}:{self.line}: {message}")
        self.ctx.fail(node, message)

    def _path(self, key: str) -> str:
        return key if self.label == "scenario" else f"{self.label}.{key}"


class _Ctx:
    def __init__(self, path: str):
        self.path = path
        self.defaults: list[str] = []
        self._constructor = yaml.SafeLoader("")

    def value(self, node):
        return self._constructor.construct_object(node, deep=True)

    def fail(self, node, message: str):
        line = node.start_mark.line + 1
        raise ScenarioError(f"{self.path}:{line}: {message}")

    def defaulted(self, key: str, value):
        if isinstance(value, np.ndarray):
            value = value.tolist()
        self.defaults.append(f"{key} = {value}")


def _parse_payloads(ctx: _Ctx, node) -> tuple:
    if node is None:
        ctx.defaulted("payloads", [])
        return ()
    if not isinstance(node, yaml.SequenceNode):
        ctx.fail(node, "payloads must be a list of {arm, mass} entries")
    out = []
    for entry in node.value:
        sec = _Section(ctx, entry, "payloads[]")
        arm_node = sec.take("arm")
        if arm_node is None:
            ctx.fail(entry, "payload entry is missing 'arm'")
        arm = ctx.value(arm_node)
        if arm in ARM_NAMES:
            arm = ARM_NAMES.index(arm)
        if arm not in (0, 1):
            ctx.fail(arm_node, f"arm must be left, right, 0 or 1, got {arm!r}")
        mass_node = sec.take("mass")
        if mass_node is None:
            ctx.fail(entry, "payload entry is missing 'mass'")
        mass = ctx.value(mass_node)
        if not isinstance(mass, (int, float)) or isinstance(mass, bool):
            ctx.fail(mass_node, f"payload mass must be a number, got {mass!r}")
        if mass < 0.0:
            ctx.fail(mass_node, f"payload mass must be >= 0, got {mass}")
        sec.finish()
        out.append(PayloadSpec(float(mass), int(arm)))
    return tuple(out)


def _parse_gait(ctx: _Ctx, sec: _Section | None) -> GaitSpec:
    defaults = GaitSpec()
    if sec is None:
        ctx.defaulted("gait", "crawl defaults")
        return defaults
    pattern = sec.take("pattern")
    if pattern is None:
        ctx.defaulted("gait.pattern", list(defaults.pattern))
        names = defaults.pattern
    else:
        names = ctx.value(pattern)
        if (not isinstance(names, list)
                or not all(n in FOOT_NAMES for n in names)):
            ctx.fail(pattern, f"gait.pattern entries must be in {FOOT_NAMES}")
        names = tuple(names)
    stride = sec.vector("stride", (2, 3), default=defaults.stride[:2])
    if stride is not None and len(stride) == 3 and stride[2] != 0.0:
        sec.fail("stride", "stride z must be 0; touchdown height comes from "
                           "the terrain or gait.foothold_heights")
    stride3 = np.zeros(3)
    stride3[:2] = stride[:2]
    heights_node = sec.take("foothold_heights")
    if heights_node is None:
        ctx.defaulted("gait.foothold_heights", [])
        heights = ()
    else:
        values = ctx.value(heights_node)
        if not isinstance(values, list) or not all(
                v is None or (isinstance(v, (int, float))
                              and not isinstance(v, bool)) for v in values):
            ctx.fail(heights_node,
                     "foothold_heights must be a list of numbers (or ~ for "
                     "terrain height)")
        heights = tuple(None if v is None else float(v) for v in values)
    kw = dict(
        pattern=names,
        cycles=sec.scalar("cycles", int, defaults.cycles),
        stride=stride3,
        step_duration=sec.scalar("step_duration", float,
                                 defaults.step_duration),
        dwell=sec.scalar("dwell", float, defaults.dwell),
        lead_in=sec.scalar("lead_in", float, defaults.lead_in),
        total_time=sec.scalar("total_time", float, defaults.total_time),
        clearance=sec.scalar("clearance", float, defaults.clearance),
        foothold_heights=heights)
    sec.finish()
    try:
        return GaitSpec(**kw)
    except GaitError as exc:
        raise ScenarioError(f"{ctx.path}:{sec.line}: gait: {exc}") from exc


def _parse_stance(ctx: _Ctx, sec: _Section | None,
                  terrain: Terrain) -> np.ndarray | None:
    if sec is None:
        ctx.defaulted("stance", "nominal footprint at terrain height")
        return None
    stance = np.zeros((4, 3))
    for i, name in enumerate(FOOT_NAMES):
        xy = sec.vector(name, (2, 3), default=None)
        if xy is None:
            sec.fail(name, f"stance is missing foot {name}")
        stance[i, :2] = xy[:2]
        stance[i, 2] = (terrain.height_at(xy[0], xy[1]) if len(xy) == 2
                        else xy[2])
    sec.finish()
    return stance


def _parse_terrain(ctx: _Ctx, sec: _Section | None) -> Terrain:
    if sec is None:
        ctx.defaulted("terrain", "flat")
        return Terrain()
    kind = sec.scalar("kind", str, "flat")
    slope = sec.scalar("slope_deg", float, 0.0)
    sec.finish()
    try:
        return Terrain(kind=kind, slope_deg=slope)
    except ValueError as exc:
        raise ScenarioError(f"{ctx.path}:{sec.line}: terrain: {exc}") from exc


def _parse_options(ctx: _Ctx, sec: _Section | None, cls, label: str):
    """Fill a flat options dataclass (floats/ints/bools/3-vectors)."""
    if sec is None:
        ctx.defaulted(label, "defaults")
        return cls()
    kw = {}
    for f in dataclasses.fields(cls):
        if not sec.has(f.name):
            continue
        sample = getattr(cls(), f.name)
        if isinstance(sample, np.ndarray):
            kw[f.name] = sec.vector(f.name, (3,))
        elif isinstance(sample, bool):
            kw[f.name] = sec.scalar(f.name, bool, required=True)
        elif isinstance(sample, int):
            kw[f.name] = sec.scalar(f.name, int, required=True)
        else:
            kw[f.name] = sec.scalar(f.name, float, required=True)
    sec.finish()
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ScenarioError(f"{ctx.path}:{sec.line}: {label}: {exc}") from exc


def _parse_robot(ctx: _Ctx, sec: _Section | None) -> RobotConstants:
    defaults = RobotConstants()
    if sec is None:
        ctx.defaulted("robot", "defaults")
        return defaults
    mass = sec.scalar("mass", float, defaults.mass)
    height = sec.scalar("com_height", float,
                        float(defaults.com_ref_offset[2]))
    node = sec.take("arm_offsets")
    if node is None:
        ctx.defaulted("robot.arm_offsets", defaults.nominal_arm_offsets)
        offsets = defaults.nominal_arm_offsets
    else:
        value = ctx.value(node)
        offsets = np.asarray(value, dtype=float)
        if offsets.shape != (2, 3):
            ctx.fail(node, "robot.arm_offsets must be two 3-vectors "
                           "(left then right)")
    sec.finish()
    try:
        return RobotConstants(mass=mass,
                              com_ref_offset=np.array([0.0, 0.0, height]),
                              nominal_arm_offsets=offsets)
    except ValueError as exc:
        raise ScenarioError(f"{ctx.path}:{sec.line}: robot: {exc}") from exc


def parse_scenario(path: str) -> Scenario:
    """Read and fully validate a scenario file.

    Unknown and duplicate keys are rejected; every omitted key falls back
    to its documented default and is recorded in `defaults_used`.  Errors
    carry file:line of the offending entry.
    """
    ctx = _Ctx(str(path))
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return _parse_text(ctx, text, default_name=_stem(str(path)))


def parse_scenario_text(text: str, *, source: str = "<string>",
                        default_name: str = "scenario") -> Scenario:
    """`parse_scenario` for in-memory YAML (tests, generated configs)."""
    return _parse_text(_Ctx(source), text, default_name=default_name)


def _stem(path: str) -> str:
    base = path.rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base


def _parse_text(ctx: _Ctx, text: str, default_name: str) -> Scenario:
    try:
        root_node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{ctx.path}: not valid YAML: {exc}") from exc
    if root_node is None:
        raise ScenarioError(f"{ctx.path}: empty scenario file")
    root = _Section(ctx, root_node, "scenario")

    version = root.scalar("format_version", int, required=True)
    if version != FORMAT_VERSION:
        root.fail("format_version",
                  f"unsupported format_version {version}; this release "
                  f"reads version {FORMAT_VERSION}")
    name = root.scalar("name", str, default_name)
    description = root.scalar("description", str, "")
    mode = root.scalar("mode", str, required=True)
    if mode not in MODES:
        root.fail("mode", f"mode must be one of {MODES}, got {mode!r}")
    dt = root.scalar("dt", float, 0.2)
    export_rate = root.scalar("export_rate", float, 100.0)

    constants = _parse_robot(ctx, root.section("robot"))
    payloads = _parse_payloads(ctx, root.take("payloads"))
    terrain = _parse_terrain(ctx, root.section("terrain"))
    gait = _parse_gait(ctx, root.section("gait"))
    stance = _parse_stance(ctx, root.section("stance"), terrain)
    weights = _parse_options(ctx, root.section("weights"), PlannerWeights,
                             "weights")
    solver = _parse_options(ctx, root.section("solver"), SolverOptions,
                            "solver")

    window = None
    replan_stride = dt
    mpc_warm_start = True
    horizon = root.section("horizon")
    if horizon is None:
        ctx.defaulted("horizon", "offline (single solve)")
    else:
        window = horizon.scalar("window", float, None)
        if window is not None and window < 1.0:
            horizon.fail("window",
                         f"receding window must be >= 1 s, got {window}")
        replan_stride = horizon.scalar("replan_stride", float, dt)
        mpc_warm_start = horizon.scalar("warm_start", bool, True)
        horizon.finish()
    root.finish()

    try:
        return Scenario(
            name=name, mode=mode, gait=gait, dt=dt, constants=constants,
            payloads=payloads, initial_stance=stance, terrain=terrain,
            weights=weights, solver=solver, window=window,
            replan_stride=replan_stride, mpc_warm_start=mpc_warm_start,
            export_rate=export_rate, description=description,
            source=ctx.path, defaults_used=tuple(ctx.defaults))
    except ScenarioError as exc:
        raise ScenarioError(f"{ctx.path}: {exc}") from exc


# --- shipped presets ---------------------------------------------------------

def preset_path(name: str):
    """Filesystem path of a shipped preset (without the .yaml suffix)."""
    root = importlib.resources.files("loadwalk") / "presets"
    path = root / f"{name}.yaml"
    if not path.is_file():
        known = ", ".join(list_presets())
        raise ScenarioError(f"unknown preset {name!r}; shipped: {known}")
    return path


def list_presets() -> list[str]:
    root = importlib.resources.files("loadwalk") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def load_preset(name: str) -> Scenario:
    path = preset_path(name)
    return parse_scenario_text(path.read_text(encoding="utf-8"),
                               source=str(path), default_name=name)
