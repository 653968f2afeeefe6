"""Heart rate and SpO2 extraction from peak/valley (PAV) events.

Everything here works on plain Python numbers so that exact rational
inputs (``fractions.Fraction``) stay exact end to end.
"""

import math
import statistics
from dataclasses import dataclass, field

from .errors import ConfigError, SingularityError

PEAK = "PEAK"
VALLEY = "VALLEY"

HR_VALID_RANGE = (20.0, 250.0)


@dataclass(frozen=True)
class CalibrationTable:
    """Hemoglobin extinction coefficients at the Red and IR wavelengths.

    Units are irrelevant (only ratios enter the SpO2 formula). Defaults are
    molar extinction coefficients in cm^-1/M for 660 nm and 880 nm from the
    standard Prahl tabulation.
    """

    eps_hb_red: float = 3226.56
    eps_hbo2_red: float = 319.6
    eps_hb_ir: float = 726.44
    eps_hbo2_ir: float = 1154.0

    def __post_init__(self):
        for name in ("eps_hb_red", "eps_hbo2_red", "eps_hb_ir", "eps_hbo2_ir"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "extinction coefficients must be > 0")
        if not self.eps_hb_red > self.eps_hbo2_red:
            raise ConfigError("eps_hb_red", "Red must absorb more in Hb than in HbO2")
        if not self.eps_hbo2_ir > self.eps_hb_ir:
            raise ConfigError("eps_hbo2_ir", "IR must absorb more in HbO2 than in Hb")

    @property
    def ros_at_full_saturation(self):
        return self.eps_hbo2_red / self.eps_hbo2_ir

    @property
    def ros_at_zero_saturation(self):
        return self.eps_hb_red / self.eps_hb_ir


def compute_hr(events, t_start=None, t_end=None):
    """Heart rate in bpm as 60 / mean same-kind PAV interval.

    Intervals are taken between consecutive events of the same kind (peaks
    with peaks, valleys with valleys) whose later event falls inside
    ``[t_start, t_end)``. An interval close to an integer multiple of the
    median interval is treated as spanning skipped cycles and divided
    accordingly. Returns ``nan`` when fewer than two same-kind events exist.
    """
    intervals = _same_kind_intervals(events, t_start, t_end)
    if not intervals:
        return math.nan
    return 60 / _mean_period(intervals)


def _same_kind_intervals(events, t_start, t_end):
    last = {}
    out = []
    for ev in sorted(events, key=lambda e: e.t_s):
        prev = last.get(ev.kind)
        last[ev.kind] = ev.t_s
        if prev is None:
            continue
        if t_start is not None and ev.t_s < t_start:
            continue
        if t_end is not None and ev.t_s >= t_end:
            continue
        out.append(ev.t_s - prev)
    return out


def _mean_period(intervals):
    med = statistics.median(intervals)
    total = 0
    count = 0
    for iv in intervals:
        n = round(iv / med) if med > 0 else 1
        if n >= 2:
            total += iv
            count += n
        else:
            total += iv
            count += 1
    return total / count


def ros_from_components(ac_red, dc_red, ac_ir, dc_ir):
    """Ratio of ratios ``(AC/DC)_red / (AC/DC)_ir``; ``nan`` if any term is non-positive."""
    if min(ac_red, dc_red, ac_ir, dc_ir) <= 0:
        return math.nan
    return (ac_red / dc_red) / (ac_ir / dc_ir)


def compute_ros(events):
    """Ratio of ratios from PAV events carrying ``red`` and ``ir`` currents.

    AC is mean(peaks) - mean(valleys) per wavelength and DC the midpoint of
    the two means (the reconstructed baseline). Needs at least one peak and
    one valley; otherwise returns ``nan``.
    """
    peaks = [e for e in events if e.kind == PEAK]
    valleys = [e for e in events if e.kind == VALLEY]
    if not peaks or not valleys:
        return math.nan
    pr = sum(e.red for e in peaks) / len(peaks)
    vr = sum(e.red for e in valleys) / len(valleys)
    pi = sum(e.ir for e in peaks) / len(peaks)
    vi = sum(e.ir for e in valleys) / len(valleys)
    return ros_from_components(pr - vr, (pr + vr) / 2, pi - vi, (pi + vi) / 2)


def spo2_fraction(r_os, calib):
    """Unclamped oxygen saturation fraction from the ratio of ratios.

    Beer-Lambert two-wavelength model::

        SpO2 = (eHb_red - eHb_ir*R) / (eHb_red - eHbO2_red + (eHbO2_ir - eHb_ir)*R)
    """
    num = calib.eps_hb_red - calib.eps_hb_ir * r_os
    den = (calib.eps_hb_red - calib.eps_hbo2_red
           + (calib.eps_hbo2_ir - calib.eps_hb_ir) * r_os)
    scale = max(abs(calib.eps_hb_red), abs(calib.eps_hb_ir * r_os), abs(num))
    if abs(den) <= 1e-12 * scale:
        raise SingularityError(f"SpO2 denominator vanishes at R_OS={r_os!r}")
    return num / den


def compute_spo2(r_os, calib=None, clamp=True):
    """SpO2 in percent. Clamped to [0, 100] unless ``clamp`` is False."""
    calib = calib or CalibrationTable()
    pct = spo2_fraction(r_os, calib) * 100
    if clamp:
        pct = min(max(pct, 0), 100)
    return pct


def ros_for_spo2(spo2_pct, calib=None):
    """Inverse of :func:`compute_spo2` (unclamped)."""
    calib = calib or CalibrationTable()
    s = spo2_pct / 100
    num = calib.eps_hb_red - s * (calib.eps_hb_red - calib.eps_hbo2_red)
    den = calib.eps_hb_ir + s * (calib.eps_hbo2_ir - calib.eps_hb_ir)
    return num / den


@dataclass
class VitalsReport:
    window_start_s: float
    window_end_s: float
    hr_bpm: float
    spo2_pct: float
    r_os: float = math.nan
    n_cycles_used: int = 0
    flags: tuple = field(default_factory=tuple)

    @property
    def valid(self):
        return not self.flags


def vitals_over_windows(events, t_start, t_end, window_s=8.0, calib=None):
    """Non-overlapping ``window_s`` reports covering ``[t_start, t_end)``."""
    calib = calib or CalibrationTable()
    events = sorted(events, key=lambda e: e.t_s)
    reports = []
    t0 = t_start
    while t0 + window_s <= t_end + 1e-9:
        t1 = t0 + window_s
        flags = []
        hr = compute_hr(events, t0, t1)
        n_cycles = len(_same_kind_intervals(events, t0, t1))
        if math.isnan(hr) or not HR_VALID_RANGE[0] <= hr <= HR_VALID_RANGE[1]:
            flags.append("hr_invalid")
        inside = [e for e in events if t0 <= e.t_s < t1]
        r_os = compute_ros(inside)
        spo2 = math.nan
        if math.isnan(r_os):
            flags.append("spo2_invalid")
        else:
            try:
                raw = compute_spo2(r_os, calib, clamp=False)
            except SingularityError:
                raw = math.nan
            if math.isnan(raw):
                flags.append("spo2_invalid")
            else:
                spo2 = min(max(raw, 0.0), 100.0)
                if spo2 != raw:
                    flags.append("spo2_clamped")
        if any(getattr(e, "low_confidence", False) for e in inside):
            flags.append("saturated_samples")
        reports.append(VitalsReport(t0, t1, hr, spo2, r_os, n_cycles, tuple(flags)))
        t0 = t1
    return reports
