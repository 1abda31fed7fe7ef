"""Run configuration and its line-oriented ``key = value`` text format.

Grammar (one entry per line)::

    line    := blank | comment | entry
    comment := optional whitespace, '#', anything
    entry   := key '=' value            (whitespace around both is ignored)
    value   := token (whitespace token)*

Keys are the names in :data:`SCHEMA`; each key may appear once. Vectors are
whitespace-separated numbers, flags are ``true``/``false``, and
``scene.point_box`` is either ``none`` or six numbers
``xmin ymin zmin xmax ymax zmax``. Missing keys take their defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

from .correction import GateConfig
from .errors import ConfigError
from .sim import TRAJECTORY_KINDS, SceneConfig


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    correction_enabled: bool = True
    gate_enabled: bool = True
    L_max: int = 4
    gate: GateConfig = field(default_factory=GateConfig)
    bias_range: tuple = (0.03, 0.08)
    init_rotation_noise: float = 0.01
    init_translation_noise: float = 0.02
    alignment: str = "rigid"
    output_dir: str = "output"

    def __post_init__(self):
        lo, hi = self.bias_range
        if not 0 <= lo <= hi:
            raise ConfigError("run.bias_range", "need 0 <= min <= max")
        if self.L_max < 1:
            raise ConfigError("run.L_max", "must be >= 1")
        if self.alignment not in ("none", "rigid"):
            raise ConfigError("run.alignment", "must be 'none' or 'rigid'")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _floats(n: int) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        vals = tuple(float(t) for t in text.split())
        if len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals

    return parse


def _ints(n: int) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        vals = tuple(int(t) for t in text.split())
        if len(vals) != n:
            raise ValueError(f"expected {n} integers, got {len(vals)}")
        return vals

    return parse


def _box(text: str):
    if text.lower() == "none":
        return None
    v = _floats(6)(text)
    return (v[:3], v[3:])


def _kind(text: str) -> str:
    if text not in TRAJECTORY_KINDS:
        raise ValueError(f"expected one of {', '.join(TRAJECTORY_KINDS)}")
    return text


def _alignment(text: str) -> str:
    if text not in ("none", "rigid"):
        raise ValueError("expected none or rigid")
    return text


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (section, attribute, parser)
SCHEMA: dict = {
    "scene.n_points": ("scene", "n_points", int),
    "scene.point_box": ("scene", "point_box", _box),
    "scene.trajectory_kind": ("scene", "trajectory_kind", _kind),
    "scene.n_frames": ("scene", "n_frames", int),
    "scene.frame_dt": ("scene", "frame_dt", float),
    "scene.pixel_sigma": ("scene", "pixel_sigma", float),
    "scene.seed": ("scene", "seed", int),
    "scene.speed": ("scene", "speed", float),
    "scene.heading": ("scene", "heading", float),
    "scene.depth_range": ("scene", "depth_range", _floats(2)),
    "camera.focal_length": ("camera", "focal_length", float),
    "camera.principal_point": ("camera", "principal_point", _floats(2)),
    "camera.image_size": ("camera", "image_size", _ints(2)),
    "run.correction_enabled": ("run", "correction_enabled", _bool),
    "run.gate_enabled": ("run", "gate_enabled", _bool),
    "run.L_max": ("run", "L_max", int),
    "run.gate_thresholds": ("gate", "thresholds", _floats(3)),
    "run.gate_breakpoints": ("gate", "breakpoints", _floats(2)),
    "run.bias_range": ("run", "bias_range", _floats(2)),
    "run.init_rotation_noise": ("run", "init_rotation_noise", float),
    "run.init_translation_noise": ("run", "init_translation_noise", float),
    "run.alignment": ("run", "alignment", _alignment),
    "run.output_dir": ("run", "output_dir", str),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the text format into ``{key: raw string value}``."""
    entries = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_no}", "expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, f"unknown key ({source}:{line_no})")
        if key in entries:
            raise ConfigError(key, f"duplicate key ({source}:{line_no})")
        if not value:
            raise ConfigError(key, "empty value")
        entries[key] = value
    return entries


def build_run_config(entries: Mapping[str, object], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply raw (string) or already-typed values on top of ``base`` (default: all defaults)."""
    base = base or RunConfig()
    sections = {"scene": {}, "camera": {}, "run": {}, "gate": {}}
    for key, raw in entries.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        section, attr, parse = SCHEMA[key]
        try:
            sections[section][attr] = parse(raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None

    def build(key_prefix, current, updates):
        if not updates:
            return current
        try:
            return replace(current, **updates)
        except ValueError as exc:
            raise ConfigError(f"{key_prefix}{next(iter(updates))}", str(exc)) from None

    camera = build("camera.", base.scene.camera, sections["camera"])
    scene = build("scene.", base.scene, {**sections["scene"], **({"camera": camera} if sections["camera"] else {})})
    gate = build("run.gate_", base.gate, sections["gate"])
    run = dict(sections["run"], scene=scene, gate=gate)
    return replace(base, **run)


def load_run_config(path, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (highest precedence)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    entries = parse_config_text(text, str(path))
    entries.update(overrides or {})
    return build_run_config(entries)


def dump_run_config(cfg: RunConfig) -> str:
    """Every key with its resolved value, in schema order."""
    lines = ["# biascorrect run configuration"]
    for key, (section, attr, _) in SCHEMA.items():
        obj = {"scene": cfg.scene, "camera": cfg.scene.camera, "run": cfg, "gate": cfg.gate}[section]
        lines.append(f"{key} = {_fmt(getattr(obj, attr))}")
    return "\n".join(lines) + "\n"
