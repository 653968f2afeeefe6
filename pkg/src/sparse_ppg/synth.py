"""Synthetic photocurrent traces with ground truth, artifact injection and CSV I/O."""

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize

from . import _validation as v
from .errors import BoundsError, ConfigError, TraceFormatError, TraceParseError
from .vitals import PEAK, VALLEY, CalibrationTable, ros_for_spo2

PULSE_SHAPES = ("raised-cosine-with-dicrotic", "two-gaussian")
ARTIFACT_KINDS = ("baseline-step", "baseline-ramp", "additive-burst")
CSV_COLUMNS = ("time_s", "red_a", "ir_a", "amb_a")


@dataclass(frozen=True)
class PpgModelParams:
    """Photocurrent model. Currents in amperes; ``i_ac_*`` are peak-to-valley spans.

    ``hrv_sigma`` is the standard deviation of the per-cycle period jitter in
    seconds. ``hr_bpm_end`` (optional) drifts the base rate linearly over the
    trace. ``i_ac_red`` defaults to the value that makes the ground-truth
    ratio of ratios correspond to ``spo2_true`` under ``calibration``.
    """

    hr_bpm_base: float = 60.0
    hrv_sigma: float = 0.0
    hr_bpm_end: float | None = None
    i_ac_ir: float = 20e-9
    i_dc_ir: float = 4e-6
    i_ac_red: float | None = None
    i_dc_red: float = 3e-6
    spo2_true: float = 97.0
    i_ambient: float = 500e-9
    ambient_hum_a: float = 0.0
    ambient_hum_hz: float = 120.0
    i_dark: float = 1e-9
    pulse_shape: str = "raised-cosine-with-dicrotic"
    dc_to_ac_db_range: tuple = (20.0, 80.0)
    calibration: CalibrationTable = field(default_factory=CalibrationTable)

    def __post_init__(self):
        v.check_range("hr_bpm_base", self.hr_bpm_base, 30.0, 180.0)
        if self.hr_bpm_end is not None:
            v.check_range("hr_bpm_end", self.hr_bpm_end, 30.0, 180.0)
        v.check_positive("hrv_sigma", self.hrv_sigma, strict=False)
        for name in ("i_ac_ir", "i_ambient", "ambient_hum_a", "i_dark"):
            v.check_positive(name, getattr(self, name), strict=False)
        for name in ("i_dc_ir", "i_dc_red"):
            v.check_positive(name, getattr(self, name))
        if self.i_ac_red is not None:
            v.check_positive("i_ac_red", self.i_ac_red, strict=False)
        v.check_range("spo2_true", self.spo2_true, 0.0, 100.0)
        v.check_positive("ambient_hum_hz", self.ambient_hum_hz)
        if self.ambient_hum_a > self.i_ambient:
            raise ConfigError("ambient_hum_a", "mains ripple larger than ambient would make current negative")
        v.check_choice("pulse_shape", self.pulse_shape, PULSE_SHAPES)
        lo, hi = self.dc_to_ac_db_range
        for name, ac, dc in (("i_ac_ir", self.i_ac_ir, self.i_dc_ir),
                             ("i_ac_red", self.ac_red, self.i_dc_red)):
            if ac > 0:
                ratio_db = 20 * math.log10(dc / ac)
                if not lo <= ratio_db <= hi:
                    raise ConfigError(name, f"DC/AC ratio {ratio_db:.1f} dB outside [{lo}, {hi}] dB")

    @property
    def ac_red(self):
        if self.i_ac_red is not None:
            return self.i_ac_red
        r = ros_for_spo2(self.spo2_true, self.calibration)
        return r * (self.i_ac_ir / self.i_dc_ir) * self.i_dc_red

    @property
    def r_os_true(self):
        if self.i_ac_ir == 0:
            return math.nan
        return (self.ac_red / self.i_dc_red) / (self.i_ac_ir / self.i_dc_ir)


@dataclass(frozen=True)
class ArtifactEvent:
    start_s: float
    duration_s: float
    kind: str = "baseline-step"
    magnitude: float = 0.0
    affects_ambient: bool = False
    burst_hz: float = 3.0

    def __post_init__(self):
        v.check_positive("duration_s", self.duration_s)
        v.check_finite("start_s", self.start_s)
        v.check_finite("magnitude", self.magnitude)
        v.check_choice("kind", self.kind, ARTIFACT_KINDS)
        if self.kind == "additive-burst" and self.affects_ambient:
            raise ConfigError("affects_ambient", "additive bursts only affect the LED phases")


@dataclass
class GroundTruth:
    pav_times_s: np.ndarray
    pav_kinds: list
    periods_s: np.ndarray
    r_os_true: float
    cycle_starts_s: np.ndarray = None

    def hr_in_window(self, t0, t1):
        """Mean true heart rate (bpm) over cycles whose start lies in [t0, t1)."""
        starts = self.cycle_starts_s
        sel = (starts >= t0) & (starts < t1)
        if not np.any(sel):
            return math.nan
        return 60.0 / float(np.mean(self.periods_s[sel]))

    def to_json(self):
        return {
            "pav_times_s": [float(t) for t in self.pav_times_s],
            "pav_kinds": list(self.pav_kinds),
            "periods_s": [float(p) for p in self.periods_s],
            "r_os_true": None if math.isnan(self.r_os_true) else float(self.r_os_true),
            "cycle_starts_s": [float(t) for t in self.cycle_starts_s],
        }

    @classmethod
    def from_json(cls, obj):
        r = obj.get("r_os_true")
        return cls(
            pav_times_s=np.asarray(obj["pav_times_s"], dtype=float),
            pav_kinds=list(obj["pav_kinds"]),
            periods_s=np.asarray(obj["periods_s"], dtype=float),
            r_os_true=math.nan if r is None else float(r),
            cycle_starts_s=np.asarray(obj.get("cycle_starts_s", []), dtype=float),
        )


@dataclass
class PhotocurrentTrace:
    """Per-channel photocurrents on a sample grid ``t``.

    ``red`` and ``ir`` include ambient light and dark current; ``amb`` holds
    only those two. Between grid points the signal is the linear
    interpolant, which :meth:`window_mean` integrates exactly.
    """

    t: np.ndarray
    red: np.ndarray
    ir: np.ndarray
    amb: np.ndarray
    sample_clock_hz: float
    truth: GroundTruth | None = None

    def __post_init__(self):
        self._cum = {}

    def __len__(self):
        return len(self.t)

    @property
    def duration_s(self):
        return float(self.t[-1] - self.t[0])

    def channel(self, name):
        return {"red": self.red, "ir": self.ir, "amb": self.amb}[name]

    def copy(self):
        return PhotocurrentTrace(self.t.copy(), self.red.copy(), self.ir.copy(),
                                 self.amb.copy(), self.sample_clock_hz, self.truth)

    def _cumulative(self, name):
        if name not in self._cum:
            x = self.channel(name)
            dt = np.diff(self.t)
            self._cum[name] = np.concatenate(([0.0], np.cumsum(0.5 * (x[1:] + x[:-1]) * dt)))
        return self._cum[name]

    def _integral(self, name, tq):
        x = self.channel(name)
        t = self.t
        i = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, len(t) - 2)
        h = t[i + 1] - t[i]
        d = tq - t[i]
        return i, d * x[i] + 0.5 * d * d / h * (x[i + 1] - x[i])

    def window_mean(self, name, t0, t1):
        """Exact mean of the interpolated channel over ``[t0, t1]`` (vectorized)."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        tol = 1e-9
        if np.any(t0 < self.t[0] - tol) or np.any(t1 > self.t[-1] + tol):
            raise BoundsError(f"window [{np.min(t0):g}, {np.max(t1):g}] s outside trace "
                              f"[{self.t[0]:g}, {self.t[-1]:g}] s")
        if np.any(t1 <= t0):
            raise BoundsError("window end must follow its start")
        if len(self.t) < 2:
            raise BoundsError("trace needs at least two samples to integrate")
        cum = self._cumulative(name)
        i0, p0 = self._integral(name, t0)
        i1, p1 = self._integral(name, t1)
        return ((cum[i1] - cum[i0]) + p1 - p0) / (t1 - t0)


# --- pulse morphology -------------------------------------------------------

def _raised_cosine(phi, center, half_width):
    x = (phi - center) / half_width
    return np.where(np.abs(x) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * x)), 0.0)


def _rc_dicrotic(phi):
    return _raised_cosine(phi, 0.3, 0.3) + 0.4 * _raised_cosine(phi, 0.7, 0.3)


def _two_gaussian_raw(phi):
    out = np.zeros_like(phi, dtype=float)
    for shift in (-1.0, 0.0, 1.0):
        p = phi + shift
        out += np.exp(-0.5 * ((p - 0.3) / 0.09) ** 2)
        out += 0.4 * np.exp(-0.5 * ((p - 0.65) / 0.12) ** 2)
    return out


@lru_cache(maxsize=None)
def pulse_landmarks(shape):
    """Return ``(valley_phase, peak_phase, lo, hi)`` of the unnormalized shape."""
    if shape == "raised-cosine-with-dicrotic":
        return 0.0, 0.3, 0.0, 1.0
    grid = np.linspace(0.0, 1.0, 20001)
    y = _two_gaussian_raw(grid)

    def refine(sign, i):
        res = optimize.minimize_scalar(lambda p: sign * _two_gaussian_raw(np.array([p]))[0],
                                       bounds=(grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]),
                                       method="bounded", options={"xatol": 1e-12})
        return float(res.x) % 1.0, float(sign * res.fun)

    v_phase, lo = refine(1.0, int(np.argmin(y)))
    p_phase, hi = refine(-1.0, int(np.argmax(y)))
    return v_phase, p_phase, lo, hi


def pulse_shape(phi, shape="raised-cosine-with-dicrotic"):
    """Normalized pulse in [0, 1] over phase ``phi`` in [0, 1); valley 0, peak 1."""
    phi = np.asarray(phi, dtype=float) % 1.0
    if shape == "raised-cosine-with-dicrotic":
        return _rc_dicrotic(phi)
    _, _, lo, hi = pulse_landmarks(shape)
    return (_two_gaussian_raw(phi) - lo) / (hi - lo)


# --- synthesis ---------------------------------------------------------------

def _cycle_starts(params, duration_s, rng):
    def nominal_period(t):
        hr = params.hr_bpm_base
        if params.hr_bpm_end is not None:
            frac = min(max(t / duration_s, 0.0), 1.0)
            hr = params.hr_bpm_base + (params.hr_bpm_end - params.hr_bpm_base) * frac
        return 60.0 / hr

    t0 = -rng.uniform(0.0, 1.0) * nominal_period(0.0)
    starts = [t0]
    periods = []
    while starts[-1] <= duration_s:
        nominal = nominal_period(max(starts[-1], 0.0))
        jitter = rng.normal(0.0, params.hrv_sigma) if params.hrv_sigma > 0 else 0.0
        period = max(nominal + jitter, 0.2 * nominal)
        periods.append(period)
        starts.append(starts[-1] + period)
    return np.asarray(starts), np.asarray(periods)


def synthesize(params, duration_s, seed, sample_clock_hz=10_000.0):
    """Synthesize a three-channel photocurrent trace with ground truth.

    Deterministic for a fixed ``(params, duration_s, seed)``.
    """
    if not isinstance(params, PpgModelParams):
        raise ConfigError("params", "expected PpgModelParams")
    v.check_positive("duration_s", duration_s)
    if sample_clock_hz < 10_000.0:
        raise ConfigError("sample_clock_hz", "internal synthesis clock must be >= 10 kHz")
    rng = np.random.default_rng(seed)
    starts, periods = _cycle_starts(params, duration_s, rng)

    n = int(round(duration_s * sample_clock_hz)) + 1
    t = np.arange(n) / sample_clock_hz
    k = np.searchsorted(starts, t, side="right") - 1
    phi = (t - starts[k]) / periods[k]
    pulse = pulse_shape(phi, params.pulse_shape)

    amb = params.i_ambient + params.i_dark + np.zeros(n)
    if params.ambient_hum_a > 0:
        amb = amb + params.ambient_hum_a * np.sin(2 * np.pi * params.ambient_hum_hz * t)
    red = amb + params.i_dc_red + params.ac_red * pulse
    ir = amb + params.i_dc_ir + params.i_ac_ir * pulse

    v_phase, p_phase, _, _ = pulse_landmarks(params.pulse_shape)
    pav = []
    for c, T in zip(starts[:-1], periods):
        pav.append((c + v_phase * T, VALLEY))
        pav.append((c + p_phase * T, PEAK))
    pav = [(tp, kind) for tp, kind in sorted(pav) if 0.0 <= tp <= t[-1]]
    keep = (starts[:-1] + periods > 0.0) & (starts[:-1] <= t[-1])
    truth = GroundTruth(
        pav_times_s=np.array([p[0] for p in pav]),
        pav_kinds=[p[1] for p in pav],
        periods_s=periods[keep],
        r_os_true=params.r_os_true,
        cycle_starts_s=starts[:-1][keep],
    )
    return PhotocurrentTrace(t, red, ir, amb, float(sample_clock_hz), truth)


def inject_artifact(trace, event):
    """Return a copy of ``trace`` corrupted by ``event``; ground truth is kept."""
    t0 = trace.t[0]
    t1 = trace.t[-1]
    end = event.start_s + event.duration_s
    if event.start_s < t0 or end > t1 + 1e-9:
        raise BoundsError(f"artifact [{event.start_s:g}, {end:g}] s outside trace [{t0:g}, {t1:g}] s")
    out = trace.copy()
    if event.magnitude == 0:
        return out
    mask = (trace.t >= event.start_s) & (trace.t < end)
    tau = trace.t[mask] - event.start_s
    if event.kind == "baseline-step":
        delta = np.full(tau.shape, event.magnitude)
    elif event.kind == "baseline-ramp":
        delta = event.magnitude * tau / event.duration_s
    else:
        envelope = np.sin(np.pi * tau / event.duration_s) ** 2
        delta = event.magnitude * envelope * np.sin(2 * np.pi * event.burst_hz * tau)
    out.red[mask] += delta
    out.ir[mask] += delta
    if event.affects_ambient:
        out.amb[mask] += delta
    return out


# --- CSV I/O -----------------------------------------------------------------

def truth_path_for(path):
    path = Path(path)
    return path.with_name(path.stem + ".truth.json")


def save_trace(trace, path):
    """Write the CSV trace and, when ground truth exists, its JSON sidecar."""
    path = Path(path)
    data = np.column_stack([trace.t, trace.red, trace.ir, trace.amb])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    if trace.truth is not None:
        with open(truth_path_for(path), "w", encoding="utf-8") as fh:
            json.dump(trace.truth.to_json(), fh)
    return path


def load_trace(path, format="csv", truth_path=None):
    """Read a CSV trace. Ground truth stays ``None`` unless ``truth_path`` is given."""
    if format != "csv":
        raise ConfigError("format", f"unsupported trace format {format!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceParseError("empty file", line=1) from None
        for col in CSV_COLUMNS:
            if col not in header:
                raise TraceParseError(f"missing column {col!r}", line=1)
        idx = [header.index(c) for c in CSV_COLUMNS]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TraceParseError(f"expected {len(header)} fields, got {len(row)}", line=line_no)
            try:
                rows.append([float(row[i]) for i in idx])
            except ValueError as exc:
                raise TraceParseError(f"non-numeric value ({exc})", line=line_no) from None
    if not rows:
        raise TraceParseError("no data rows", line=2)
    data = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        bad = int(np.argmax(~np.all(np.isfinite(data), axis=1)))
        raise TraceParseError("non-finite value", line=bad + 2)
    dt = np.diff(data[:, 0])
    if np.any(dt <= 0):
        bad = int(np.argmax(dt <= 0)) + 1
        raise TraceFormatError("time column is not strictly increasing", line=bad + 2)
    clock = float(1.0 / np.median(dt)) if len(dt) else math.nan
    truth = None
    if truth_path is not None:
        with open(truth_path, encoding="utf-8") as fh:
            truth = GroundTruth.from_json(json.load(fh))
    return PhotocurrentTrace(data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy(),
                             data[:, 3].copy(), clock, truth)
