"""Experiment configuration: TOML files with a versioned schema.

Every section maps onto a dataclass. Parsing fills defaults, checks types and
ranges, and reports problems as ``ConfigError`` carrying the dotted path of
the offending field (``comb.tooth_spacing_mhz``).
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Union

import tomli
import tomli_w

from .comb import CombSpec, SpectralGrid, ToothShape
from .tomo import NoiseModel

SCHEMA_VERSION = 1
AUTO = "auto"

PRESETS = ("paper_200ns", "paper_500ns", "ideal")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class CombSection:
    tooth_spacing_mhz: float
    tooth_fwhm_mhz: float
    peak_optical_depth: float
    background_depth: float = 0.0
    bandwidth_mhz: float = 100.0
    tooth_shape: str = "gaussian"


@dataclass
class GridSection:
    n_points: int = 16384
    span_mhz: float = 409.6


@dataclass
class PulseSection:
    fwhm_ns: float = 25.0


@dataclass
class ChainSection:
    crystal1_length_mm: float = 1.40
    crystal2_length_mm: float = 1.40
    crystal1_depth_scale: float = 1.0
    crystal2_depth_scale: float = 1.0
    v_depth_ratio: float = 0.05
    birefringence: float = 0.21
    wavelength_nm: float = 879.705
    hwp3_deg: float = 45.0
    hwp4_deg: float = 45.0
    phase_plate_deg: Union[float, str] = AUTO


@dataclass
class NoiseSection:
    mean_photon_number: float = 0.8
    memory_efficiency: Union[float, str] = AUTO
    detection_efficiency: float = 0.4
    path_transmission: float = 0.6
    dark_prob_per_gate: float = 5e-6
    gate_ns: float = 50.0


@dataclass
class TimingSection:
    prep_repeats: int = 100
    sweep_mhz: float = 100.0
    sweep_us: float = 100.0
    wait_ms: float = 1.2
    probe_pulses: int = 1600
    probe_rate_mhz: float = 1.0
    cycle_rate_hz: float = 40.0
    integration_s: float = 100.0

    @property
    def cycle_duration_ms(self) -> float:
        prep = self.prep_repeats * self.sweep_us * 1e-3
        probe = self.probe_pulses / self.probe_rate_mhz * 1e-3
        return prep + self.wait_ms + probe

    @property
    def trials_per_second(self) -> float:
        return self.probe_pulses * self.cycle_rate_hz


@dataclass
class EchoSection:
    n_echoes: int = 2
    bin_ns: float = 2.0
    jitter_ns: float = 1.0


@dataclass
class TomographySection:
    trials_per_setting: int = 6_400_000
    bootstrap_resamples: int = 200
    mle_tol: float = 1e-10
    mle_max_iter: int = 5000


@dataclass
class EfficiencySection:
    storage_times_ns: list = field(default_factory=lambda: [100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0])


@dataclass
class OracleSection:
    n_atoms: int = 100_000


@dataclass
class OutputSection:
    dir: str = "."
    format: str = "json"


_SECTIONS = {
    "comb": CombSection,
    "grid": GridSection,
    "pulse": PulseSection,
    "chain": ChainSection,
    "noise": NoiseSection,
    "timing": TimingSection,
    "echo": EchoSection,
    "tomography": TomographySection,
    "efficiency": EfficiencySection,
    "oracle": OracleSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    comb: CombSection
    grid: GridSection = field(default_factory=GridSection)
    pulse: PulseSection = field(default_factory=PulseSection)
    chain: ChainSection = field(default_factory=ChainSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    timing: TimingSection = field(default_factory=TimingSection)
    echo: EchoSection = field(default_factory=EchoSection)
    tomography: TomographySection = field(default_factory=TomographySection)
    efficiency: EfficiencySection = field(default_factory=EfficiencySection)
    oracle: OracleSection = field(default_factory=OracleSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    name: str = ""

    def comb_spec(self) -> CombSpec:
        c = self.comb
        return CombSpec(
            c.tooth_spacing_mhz, c.tooth_fwhm_mhz, c.peak_optical_depth, c.background_depth, c.bandwidth_mhz,
            ToothShape(c.tooth_shape),
        )

    def spectral_grid(self) -> SpectralGrid:
        return SpectralGrid(self.grid.n_points, self.grid.span_mhz)

    def noise_model(self, memory_efficiency: float | None = None) -> NoiseModel:
        n = self.noise
        eta = n.memory_efficiency if memory_efficiency is None else memory_efficiency
        if eta == AUTO:
            raise ValueError("memory_efficiency is 'auto'; resolve it from the echo simulation first")
        return NoiseModel(
            n.mean_photon_number, float(eta), n.detection_efficiency, n.path_transmission,
            n.dark_prob_per_gate, n.gate_ns,
        )

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "name": self.name, "seed": self.seed}
        for key in _SECTIONS:
            out[key] = dataclasses.asdict(getattr(self, key))
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        """Digest of everything that affects results; the output section is excluded."""
        d = self.to_dict()
        d.pop("output", None)
        return hashlib.sha256(tomli_w.dumps(d).encode()).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with section fields overridden, e.g. ``replace(comb={'tooth_spacing_mhz': 2.0})``."""
        d = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                d[key].update(value)
            else:
                d[key] = value
        return from_dict(d)


def _coerce(path: str, value, annotation):
    ann = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if ann == "list":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(path, "expected a list of numbers")
        return [float(v) for v in value]
    if "Union" in ann:
        if value == AUTO:
            return AUTO
        if isinstance(value, str):
            raise ConfigError(path, f"expected a number or 'auto', got {value!r}")
        return _coerce(path, value, "float")
    raise TypeError(ann)


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    kwargs = {}
    for f in fields(cls):
        path = f"{name}.{f.name}"
        if f.name not in raw:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(path, "missing required field")
            continue
        kwargs[f.name] = _coerce(path, raw[f.name], f.type)
    return cls(**kwargs)


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    seed = _coerce("seed", raw.pop("seed", 0), "int")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    name = _coerce("name", raw.pop("name", ""), "str")
    if "comb" not in raw:
        raise ConfigError("comb", "missing required section")
    sections = {}
    for key, value in raw.items():
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown section")
        sections[key] = _section(key, _SECTIONS[key], value)
    cfg = ExperimentConfig(seed=seed, schema_version=version, name=name, **sections)
    validate(cfg)
    return cfg


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: ExperimentConfig) -> None:
    c = cfg.comb
    _require(c.tooth_spacing_mhz > 0, "comb.tooth_spacing_mhz", "must be > 0")
    _require(0 < c.tooth_fwhm_mhz < c.tooth_spacing_mhz, "comb.tooth_fwhm_mhz", "must lie in (0, tooth_spacing_mhz)")
    _require(c.peak_optical_depth >= 0, "comb.peak_optical_depth", "must be >= 0")
    _require(c.background_depth >= 0, "comb.background_depth", "must be >= 0")
    _require(c.bandwidth_mhz >= 2 * c.tooth_spacing_mhz, "comb.bandwidth_mhz", "must be >= 2 * tooth_spacing_mhz")
    _require(c.tooth_shape in {s.value for s in ToothShape}, "comb.tooth_shape", "must be gaussian, lorentzian or square")
    g = cfg.grid
    n = g.n_points
    _require(n >= 2 and not n & (n - 1), "grid.n_points", "must be a power of two")
    _require(g.span_mhz > 0, "grid.span_mhz", "must be > 0")
    _require(g.span_mhz / n <= c.tooth_fwhm_mhz / 10, "grid.n_points", "resolution must be <= tooth_fwhm/10")
    _require(g.span_mhz >= 4 * c.bandwidth_mhz, "grid.span_mhz", "must be >= 4 * comb bandwidth")
    _require(cfg.pulse.fwhm_ns > 0, "pulse.fwhm_ns", "must be > 0")
    ch = cfg.chain
    for name in ("crystal1_length_mm", "crystal2_length_mm", "wavelength_nm"):
        _require(getattr(ch, name) > 0, f"chain.{name}", "must be > 0")
    for name in ("crystal1_depth_scale", "crystal2_depth_scale", "v_depth_ratio"):
        _require(getattr(ch, name) >= 0, f"chain.{name}", "must be >= 0")
    nz = cfg.noise
    _require(nz.mean_photon_number > 0, "noise.mean_photon_number", "must be > 0")
    for name in ("detection_efficiency", "path_transmission", "dark_prob_per_gate"):
        _require(0 <= getattr(nz, name) <= 1, f"noise.{name}", "must be in [0, 1]")
    if nz.memory_efficiency != AUTO:
        _require(0 <= nz.memory_efficiency <= 1, "noise.memory_efficiency", "must be in [0, 1] or 'auto'")
    _require(nz.gate_ns > 0, "noise.gate_ns", "must be > 0")
    _require(nz.gate_ns < 1e3 / c.tooth_spacing_mhz, "noise.gate_ns", "must be shorter than the storage time")
    t = cfg.timing
    for name in ("prep_repeats", "probe_pulses"):
        _require(getattr(t, name) >= 1, f"timing.{name}", "must be >= 1")
    for name in ("sweep_mhz", "sweep_us", "probe_rate_mhz", "cycle_rate_hz", "integration_s"):
        _require(getattr(t, name) > 0, f"timing.{name}", "must be > 0")
    _require(t.wait_ms >= 0, "timing.wait_ms", "must be >= 0")
    _require(t.cycle_duration_ms <= 1e3 / t.cycle_rate_hz, "timing.cycle_rate_hz", "prep + wait + probe exceeds the cycle period")
    _require(cfg.echo.n_echoes >= 1, "echo.n_echoes", "must be >= 1")
    _require(cfg.echo.bin_ns > 0, "echo.bin_ns", "must be > 0")
    _require(cfg.echo.jitter_ns >= 0, "echo.jitter_ns", "must be >= 0")
    tm = cfg.tomography
    _require(tm.trials_per_setting >= 1, "tomography.trials_per_setting", "must be >= 1")
    _require(tm.bootstrap_resamples >= 100, "tomography.bootstrap_resamples", "must be >= 100")
    _require(tm.mle_tol > 0, "tomography.mle_tol", "must be > 0")
    _require(tm.mle_max_iter >= 1, "tomography.mle_max_iter", "must be >= 1")
    _require(len(cfg.efficiency.storage_times_ns) > 0 and all(x > 0 for x in cfg.efficiency.storage_times_ns),
             "efficiency.storage_times_ns", "must be a non-empty list of positive times")
    _require(cfg.oracle.n_atoms >= 1, "oracle.n_atoms", "must be >= 1")
    _require(cfg.output.format in ("csv", "json"), "output.format", "must be 'csv' or 'json'")


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from None
    return from_dict(raw)


def _preset_key(name: str) -> str | None:
    flat = name.replace("_", "").replace("-", "").lower()
    for p in PRESETS:
        if p.replace("_", "") == flat:
            return p
    return None


def preset_text(name: str) -> str:
    key = _preset_key(name)
    if key is None:
        raise ConfigError("--config", f"unknown preset {name!r}")
    return resources.files("afc_memsim").joinpath("presets", f"{key}.toml").read_text()


def load(source: str | Path) -> ExperimentConfig:
    """Load a config from a file path or a shipped preset name."""
    path = Path(source)
    if path.is_file():
        return loads(path.read_text())
    if _preset_key(str(source)) is not None:
        return loads(preset_text(str(source)))
    raise ConfigError("--config", f"no such file or preset: {source}")
