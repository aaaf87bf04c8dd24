"""Experiment configuration: sectioned INI files, presets and overrides."""

from __future__ import annotations

import configparser
import dataclasses
import difflib
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "ConfigError",
    "KernelSpec",
    "AtomSpec",
    "SpatialSpec",
    "GridSpec",
    "OmegaSpec",
    "PipelineSpec",
    "OracleSpec",
    "ToleranceSpec",
    "OutputSpec",
    "ExperimentConfig",
    "PRESET_NAMES",
    "parse_config",
    "parse_config_text",
    "load_preset",
    "apply_overrides",
    "to_ini",
]

PRESET_NAMES = ("laserband", "lasergap", "locfield1", "locfield2", "markov-lorentzian", "spontaneous-gap")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else float(text)


def _k0_list(text: str) -> tuple[tuple[float, float, float], ...]:
    """``"x y z; x y z"`` -> tuple of 3-vectors."""
    pts = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        vals = [float(v) for v in chunk.replace(",", " ").split()]
        if len(vals) != 3:
            raise ValueError(f"wavevector needs 3 components, got {chunk.strip()!r}")
        pts.append(tuple(vals))
    return tuple(pts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "; ".join(" ".join(repr(float(c)) for c in p) for p in value)
    return str(value)


def _f(default, conv=float):
    return field(default=default, metadata={"conv": conv})


@dataclass(frozen=True)
class KernelSpec:
    variant: str = _f("periodic_band3d", str)
    g: float = _f(0.1)
    A: float = _f(1.0)
    B: float = _f(1.0)
    gamma: float = _f(0.0)
    omega_c: float = _f(0.0)
    tau_min: float = _f(0.1)
    path: str = _f("", str)


@dataclass(frozen=True)
class AtomSpec:
    epsilon: float = _f(0.0)
    detuning: float = _f(0.0)
    laser_frequency: float = _f(1.0)
    omega_12: float | None = _f(None, _opt_float)
    initial: str = _f("bare_excited", str)


@dataclass(frozen=True)
class SpatialSpec:
    enabled: bool = _f(False, _bool)
    gamma: float = _f(1.0)
    a: float = _f(1.0)
    theta: float = _f(math.pi / 2)
    theta_D: float = _f(math.pi / 2)
    k0: tuple = _f(((0.0, 0.0, 0.0),), _k0_list)
    d: float = _f(10.0)
    curvature: float = _f(1.0)
    omega_c: float = _f(0.0)


@dataclass(frozen=True)
class GridSpec:
    T: float = _f(4000.0)
    N: int = _f(20000, int)


@dataclass(frozen=True)
class FiniteTSpec:
    T: float = _f(400.0)
    N: int = _f(2000, int)


@dataclass(frozen=True)
class OmegaSpec:
    min: float | None = _f(None, _opt_float)
    max: float | None = _f(None, _opt_float)
    points: int = _f(801, int)


@dataclass(frozen=True)
class PipelineSpec:
    stationary: bool = _f(True, _bool)
    finite_T: bool = _f(False, _bool)
    markov: bool = _f(False, _bool)
    oracle: bool = _f(False, _bool)


@dataclass(frozen=True)
class OracleSpec:
    M: int = _f(1500, int)
    omega_min: float = _f(0.0)
    omega_max: float = _f(2.0)
    dt: float = _f(0.5)


@dataclass(frozen=True)
class ToleranceSpec:
    steady_state: float = _f(1e-6)
    tail: float = _f(1e-2)
    residue: float = _f(1e-6)
    t_star: float | None = _f(None, _opt_float)


@dataclass(frozen=True)
class OutputSpec:
    dir: str = _f("out", str)
    dump_trajectory: bool = _f(False, _bool)
    dump_correlation: bool = _f(False, _bool)


_SECTIONS = {
    "kernel": KernelSpec,
    "atom": AtomSpec,
    "spatial": SpatialSpec,
    "grid": GridSpec,
    "finite_t": FiniteTSpec,
    "omega": OmegaSpec,
    "pipelines": PipelineSpec,
    "oracle": OracleSpec,
    "tolerances": ToleranceSpec,
    "output": OutputSpec,
}

_KERNEL_VARIANTS = ("markov", "periodic_band3d", "parabolic_edge", "tabulated")
_INITIAL_STATES = ("bare_excited", "bare_ground", "dressed_1", "dressed_2")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    version: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    atom: AtomSpec = field(default_factory=AtomSpec)
    spatial: SpatialSpec = field(default_factory=SpatialSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    finite_t: FiniteTSpec = field(default_factory=FiniteTSpec)
    omega: OmegaSpec = field(default_factory=OmegaSpec)
    pipelines: PipelineSpec = field(default_factory=PipelineSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def detuning(self) -> float:
        if self.atom.omega_12 is not None:
            return self.atom.omega_12 - self.atom.laser_frequency
        return self.atom.detuning

    @property
    def driven(self) -> bool:
        return self.atom.epsilon > 0

    def validate(self) -> None:
        errs = []
        k, a, s = self.kernel, self.atom, self.spatial

        def need(ok, msg):
            if not ok:
                errs.append(msg)

        need(k.variant in _KERNEL_VARIANTS, f"kernel.variant must be one of {', '.join(_KERNEL_VARIANTS)}")
        need(k.g >= 0, "kernel.g >= 0")
        need(k.B > 0, "kernel.B > 0")
        need(k.gamma >= 0, "kernel.gamma >= 0")
        need(k.tau_min > 0, "kernel.tau_min > 0")
        need(k.variant != "tabulated" or bool(k.path), "kernel.path required for a tabulated kernel")
        need(a.epsilon >= 0, "atom.epsilon >= 0")
        need(a.initial in _INITIAL_STATES, f"atom.initial must be one of {', '.join(_INITIAL_STATES)}")
        need(
            a.omega_12 is None or a.detuning == 0 or math.isclose(a.omega_12 - a.laser_frequency, a.detuning),
            "atom.omega_12 and atom.detuning disagree",
        )
        need(not (a.epsilon == 0 and self.detuning == 0), "atom.epsilon and atom.detuning cannot both be 0")
        need(s.d > 0, "spatial.d > 0")
        need(s.curvature > 0, "spatial.curvature > 0")
        need(len(s.k0) > 0, "spatial.k0 needs at least one wavevector")
        need(self.grid.N >= 2 and self.grid.T > 0, "grid.N >= 2 and grid.T > 0")
        need(self.finite_t.N >= 2 and self.finite_t.T > 0, "finite_t.N >= 2 and finite_t.T > 0")
        need(self.omega.points >= 3, "omega.points >= 3")
        if self.omega.min is not None and self.omega.max is not None:
            need(self.omega.max > self.omega.min, "omega.max > omega.min")
        need(self.oracle.M >= 100, "oracle.M >= 100")
        need(self.oracle.omega_max > self.oracle.omega_min, "oracle.omega_max > oracle.omega_min")
        need(self.tolerances.steady_state > 0, "tolerances.steady_state > 0")
        p = self.pipelines
        need(not (p.markov and k.variant != "markov"), "pipelines.markov needs kernel.variant = markov")
        need(not (k.variant == "markov" and p.finite_T), "pipelines.finite_T needs a non-Markov kernel")
        need(not (k.variant == "markov" and p.stationary), "kernel.variant = markov uses pipelines.markov")
        need(not (p.oracle and self.driven), "pipelines.oracle is limited to the undriven atom (atom.epsilon = 0)")
        need(not (p.oracle and k.variant != "periodic_band3d"), "pipelines.oracle needs kernel.variant = periodic_band3d")
        if errs:
            raise ConfigError("invalid configuration: " + "; ".join(errs))


def _valid_keys() -> list[str]:
    keys = ["preset.name", "preset.version"]
    for sec, cls in _SECTIONS.items():
        keys += [f"{sec}.{f.name}" for f in dataclasses.fields(cls)]
    return keys


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, _valid_keys(), n=1, cutoff=0.5)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown key {key!r}{hint}")


def _convert(section: str, cls, key: str, raw: str):
    fld = next((f for f in dataclasses.fields(cls) if f.name == key), None)
    if fld is None:
        raise _unknown(f"{section}.{key}")
    try:
        return fld.metadata["conv"](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None


def _from_sections(data: dict[str, dict[str, str]], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates = {}
    for section, entries in data.items():
        if section == "preset":
            for key, raw in entries.items():
                if key == "name":
                    updates["name"] = raw.strip()
                elif key == "version":
                    updates["version"] = int(raw)
                else:
                    raise _unknown(f"preset.{key}")
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            close = difflib.get_close_matches(section, list(_SECTIONS) + ["preset"], n=1)
            hint = f"; did you mean [{close[0]}]?" if close else ""
            raise ConfigError(f"unknown section [{section}]{hint}")
        values = {key: _convert(section, cls, key, raw) for key, raw in entries.items()}
        updates[section] = dataclasses.replace(getattr(cfg, section), **values)
    return dataclasses.replace(cfg, **updates)


def _read_ini(text: str, source: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str  # keys are case sensitive (theta_D, T, N)
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lines = ", ".join(str(lineno) for lineno, _ in exc.errors)
        raise ConfigError(f"{source}: syntax error on line {lines}") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: key outside any [section]") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse INI text.  A ``[preset] name = ...`` entry starts from that
    preset; every other key overrides it."""
    data = _read_ini(text, source)
    base = None
    name = data.get("preset", {}).get("name")
    if name is not None and name.strip() in PRESET_NAMES:
        base = load_preset(name.strip())
    cfg = _from_sections(data, base)
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESET_NAMES:
        close = difflib.get_close_matches(name, PRESET_NAMES, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown preset {name!r}{hint}")
    text = resources.files("pbgfluor.presets").joinpath(f"{name}.ini").read_text()
    cfg = _from_sections(_read_ini(text, f"preset {name}"))
    cfg.validate()
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` strings (or ``(path, value)`` pairs)."""
    data: dict[str, dict[str, str]] = {}
    for item in overrides or ():
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            path, raw = item.split("=", 1)
        else:
            path, raw = item
            raw = _fmt(raw) if not isinstance(raw, str) else raw
        if "." not in path:
            raise ConfigError(f"override path {path!r} needs a section, e.g. spatial.d")
        sec, key = path.strip().split(".", 1)
        data.setdefault(sec, {})[key] = raw.strip()
    new = _from_sections(data, cfg)
    new.validate()
    return new


def to_ini(cfg: ExperimentConfig) -> str:
    """Full effective configuration as INI text (round-trips through parse_config_text)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["preset"] = {"name": cfg.name, "version": str(cfg.version)}
    for sec in _SECTIONS:
        spec = getattr(cfg, sec)
        parser[sec] = {f.name: _fmt(getattr(spec, f.name)) for f in dataclasses.fields(spec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
