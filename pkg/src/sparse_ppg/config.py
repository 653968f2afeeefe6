"""YAML run configuration.

Top-level sections mirror the module configs; keys inside each section are
the dataclass field names::

    run:        {seed, duration_s, out, mode, snr_db}
    ppg:        PpgModelParams fields
    frontend:   FrontendConfig fields
    sparse:     SparseConfig fields
    power:      PowerConfig fields
    calibration: CalibrationTable fields
    noise:      NoisePsdParams fields plus c_par_grid (list, farads)
    sweep:      SweepSpec fields (freq_grid, snr_grid, reps, seed)
    artifacts:  list of ArtifactEvent mappings

Every section is optional. Unknown keys are rejected.
"""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import _validation as v
from .engine import SparseConfig
from .errors import ConfigError
from .frontend import FrontendConfig
from .montecarlo import SweepSpec
from .noise import REFERENCE_NOISE_PARAMS, NoisePsdParams
from .power import PowerConfig
from .synth import ArtifactEvent, PpgModelParams
from .vitals import CalibrationTable

RUN_MODES = ("continuous", "sparse")
SECTIONS = ("run", "ppg", "frontend", "sparse", "power", "calibration", "noise",
            "sweep", "artifacts")
DEFAULT_CPAR_GRID = tuple(float(x) for x in np.logspace(-12, -8, 17))


def _build(cls, section, data, **extra):
    data = dict(data or {})
    if not isinstance(data, dict):
        raise ConfigError(section, "section must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
    for key, val in list(data.items()):
        if isinstance(val, list):
            data[key] = tuple(val)
    data.update(extra)
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from None


@dataclass(frozen=True)
class RunConfig:
    ppg: PpgModelParams = field(default_factory=PpgModelParams)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    sparse: SparseConfig = field(default_factory=SparseConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    calibration: CalibrationTable = field(default_factory=CalibrationTable)
    noise: NoisePsdParams = REFERENCE_NOISE_PARAMS
    c_par_grid: tuple = DEFAULT_CPAR_GRID
    sweep: SweepSpec = field(default_factory=SweepSpec)
    artifacts: tuple = ()
    seed: int = 0
    duration_s: float = 60.0
    out: str = "out"
    mode: str = "sparse"
    snr_db: float | None = None

    def __post_init__(self):
        v.check_int("run.seed", self.seed, 0)
        v.check_positive("run.duration_s", self.duration_s)
        v.check_choice("run.mode", self.mode, RUN_MODES)
        if self.snr_db is not None:
            v.check_finite("run.snr_db", self.snr_db)
        fe = self.frontend
        if not 3 * (fe.t_rst + fe.t_int) < 1.0 / self.sparse.fs:
            raise ConfigError("frontend.t_int", "3*(t_rst + t_int) must be shorter than 1/fs")
        if fe.fs != self.sparse.fs:
            raise ConfigError("sparse.fs", f"differs from frontend.fs ({fe.fs:g} Hz)")
        if self.power.t_active_triplet + 1e-12 < fe.active_time_per_triplet:
            raise ConfigError("power.t_active_triplet",
                              "shorter than the front-end's 3*(t_rst + t_int)")
        for a in self.artifacts:
            if a.start_s + a.duration_s > self.duration_s + 1e-9:
                raise ConfigError("artifacts", "artifact extends past run.duration_s")
        if not self.c_par_grid:
            raise ConfigError("noise.c_par_grid", "must be non-empty")
        for c in self.c_par_grid:
            v.check_range("noise.c_par_grid", c, 1e-12, 10e-9)

    def with_overrides(self, **kw):
        kw = {k: val for k, val in kw.items() if val is not None}
        return dataclasses.replace(self, **kw) if kw else self


def from_mapping(data):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")
    run = dict(data.get("run") or {})
    for key in run:
        if key not in ("seed", "duration_s", "out", "mode", "snr_db"):
            raise ConfigError(f"run.{key}", "unknown key")
    calib = _build(CalibrationTable, "calibration", data.get("calibration"))
    ppg = _build(PpgModelParams, "ppg", data.get("ppg"), calibration=calib)
    noise = dict(data.get("noise") or {})
    grid = noise.pop("c_par_grid", None)
    kwargs = dict(
        ppg=ppg,
        frontend=_build(FrontendConfig, "frontend", data.get("frontend")),
        sparse=_build(SparseConfig, "sparse", data.get("sparse")),
        power=_build(PowerConfig, "power", data.get("power")),
        calibration=calib,
        noise=_build(NoisePsdParams, "noise", noise) if noise else REFERENCE_NOISE_PARAMS,
        sweep=_build(SweepSpec, "sweep", data.get("sweep")),
        artifacts=tuple(_build(ArtifactEvent, f"artifacts[{i}]", a)
                        for i, a in enumerate(data.get("artifacts") or [])),
    )
    if grid is not None:
        kwargs["c_par_grid"] = tuple(float(c) for c in grid)
    if "mode" in run and isinstance(run["mode"], str):
        run["mode"] = run["mode"].lower()
    for key in ("duration_s", "snr_db"):
        if run.get(key) is not None:
            try:
                run[key] = float(run[key])
            except (TypeError, ValueError):
                raise ConfigError(f"run.{key}", f"must be a number, got {run[key]!r}") from None
    kwargs.update(run)
    return RunConfig(**kwargs)


def load_config(path):
    """Parse and validate a YAML config file. Raises :class:`ConfigError`."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML parse error: {exc}") from None
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return from_mapping(data)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def to_mapping(cfg):
    """Inverse of :func:`from_mapping` (round-trips through YAML)."""
    ppg = _plain(cfg.ppg)
    ppg.pop("calibration")
    noise = _plain(cfg.noise)
    noise["c_par_grid"] = list(cfg.c_par_grid)
    return {
        "run": {"seed": cfg.seed, "duration_s": cfg.duration_s, "out": cfg.out,
                "mode": cfg.mode, "snr_db": cfg.snr_db},
        "ppg": ppg,
        "frontend": _plain(cfg.frontend),
        "sparse": _plain(cfg.sparse),
        "power": _plain(cfg.power),
        "calibration": _plain(cfg.calibration),
        "noise": noise,
        "sweep": _plain(cfg.sweep),
        "artifacts": [_plain(a) for a in cfg.artifacts],
    }


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_mapping(cfg), fh, sort_keys=False)
    return path
