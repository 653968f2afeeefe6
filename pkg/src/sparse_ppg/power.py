"""Time-averaged power accounting from acquisition logs."""

import json
import math
from dataclasses import asdict, dataclass, field

from . import _validation as v
from .errors import AccountingError

MODES = ("CONTINUOUS", "SPARSE")


@dataclass(frozen=True)
class PowerConfig:
    """Electrical operating point.

    The defaults reproduce a 49.7 uW continuous-mode budget at 100 S/s:
    two LEDs at 5 V / 1.804 mA lit for 25 us per sample (22.55 uW each),
    135.6 uW of front-end power for the 90 us a triplet takes (1.22 uW) and
    a 3.34 uW backend that costs 2% more while sparse sampling.
    """

    v_led: float = 5.0
    i_led_red: float = 1.804e-3
    i_led_ir: float = 1.804e-3
    t_led_on: float = 25e-6
    t_active_triplet: float = 90e-6
    p_tfe_active: float = 135.6e-6
    p_dbe_continuous: float = 3.34e-6
    p_dbe_sparse: float = 3.34e-6 * 1.02

    def __post_init__(self):
        v.check_range("v_led", self.v_led, 0.0, 8.0)
        v.check_positive("v_led", self.v_led)
        for name in ("i_led_red", "i_led_ir"):
            v.check_range(name, getattr(self, name), 0.0, 16e-3)
            v.check_positive(name, getattr(self, name))
        for name in ("t_led_on", "t_active_triplet", "p_tfe_active",
                     "p_dbe_continuous", "p_dbe_sparse"):
            v.check_positive(name, getattr(self, name))

    def p_dbe(self, mode):
        return self.p_dbe_sparse if mode == "SPARSE" else self.p_dbe_continuous


REFERENCE_POWER = PowerConfig()


@dataclass
class AcquisitionLog:
    """Which triplets fired and which mode the backend was in.

    ``mode_intervals`` is a list of ``(t_start, t_stop, mode)`` that must tile
    ``[t_start, t_end]`` without gaps.
    """

    t_start: float
    t_end: float
    triplet_times: list = field(default_factory=list)
    mode_intervals: list = field(default_factory=list)

    @classmethod
    def from_result(cls, result):
        """Log of a :class:`~sparse_ppg.simulate.ChainResult`."""
        t_end = result.t_end
        return cls(result.engine.t0, t_end, result.fired_times,
                   result.engine.mode_intervals(t_end))

    @classmethod
    def constant(cls, t_start, t_end, triplet_times, mode="CONTINUOUS"):
        return cls(t_start, t_end, list(triplet_times), [(t_start, t_end, mode)])

    def check(self, tol=1e-9):
        if not self.t_end > self.t_start:
            raise AccountingError("log duration must be positive")
        if not self.mode_intervals:
            raise AccountingError("log has no mode intervals")
        ivs = sorted(self.mode_intervals)
        if abs(ivs[0][0] - self.t_start) > tol:
            raise AccountingError(f"mode intervals start at {ivs[0][0]:g}, log at {self.t_start:g}")
        for (a0, b0, _), (a1, _, _) in zip(ivs, ivs[1:]):
            if abs(a1 - b0) > tol:
                raise AccountingError(f"gap or overlap in mode intervals at t={b0:g} s")
        if abs(ivs[-1][1] - self.t_end) > tol:
            raise AccountingError(f"mode intervals end at {ivs[-1][1]:g}, log at {self.t_end:g}")
        for a, b, m in ivs:
            if m not in MODES:
                raise AccountingError(f"unknown mode {m!r}")
        for t in self.triplet_times:
            if not self.t_start - tol <= t < self.t_end + tol:
                raise AccountingError(f"triplet at t={t:g} s outside the log span")
        return ivs


@dataclass
class PowerReport:
    p_led: float
    p_tfe: float
    p_dbe: float
    p_total: float
    duty_cycle: float
    n_triplets: int
    duration_s: float
    reduction_vs_reference: float = math.nan

    def to_dict(self):
        d = asdict(self)
        if math.isnan(d["reduction_vs_reference"]):
            d["reduction_vs_reference"] = None
        d["summary_uW"] = self.summary()
        return d

    def summary(self):
        return (f"total {self.p_total * 1e6:.2f} uW = LED {self.p_led * 1e6:.2f} uW"
                f" + TFE {self.p_tfe * 1e6:.3f} uW + DBE {self.p_dbe * 1e6:.3f} uW"
                f" (LED duty {self.duty_cycle * 100:.3f}%)")


def account(log, cfg=None, mode=None):
    """Average power over the log, or over the time spent in ``mode`` only.

    ``duty_cycle`` is the on-time fraction of each LED.
    """
    cfg = cfg or PowerConfig()
    ivs = log.check()
    if mode is not None:
        v.check_choice("mode", mode, MODES)
        ivs = [iv for iv in ivs if iv[2] == mode]
    duration = sum(b - a for a, b, _ in ivs)
    if not duration > 0:
        raise AccountingError(f"no time spent in mode {mode!r}")
    n = sum(1 for t in log.triplet_times if any(a <= t < b for a, b, _ in ivs))
    e_led = n * cfg.v_led * (cfg.i_led_red + cfg.i_led_ir) * cfg.t_led_on
    e_tfe = n * cfg.p_tfe_active * cfg.t_active_triplet
    e_dbe = sum((b - a) * cfg.p_dbe(m) for a, b, m in ivs)
    p_led = e_led / duration
    p_tfe = e_tfe / duration
    p_dbe = e_dbe / duration
    return PowerReport(p_led, p_tfe, p_dbe, p_led + p_tfe + p_dbe,
                       n * cfg.t_led_on / duration, n, duration)


def reduction_ratio(continuous, sparse):
    """Fractional total-power saving of ``sparse`` relative to ``continuous``."""
    if not continuous.p_total > 0:
        raise AccountingError("reference power must be positive")
    return 1.0 - sparse.p_total / continuous.p_total


def write_power_json(reports, path):
    """``reports`` maps a label to a :class:`PowerReport`."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
