"""Behavioral model of the transimpedance front-end.

Each sample is a Red / IR / AMB triplet. Every phase resets for ``t_rst``
then integrates the differential input current (photocurrent minus I-DAC
current) for ``t_int``. The ZTIA and boxcar integrator together apply the
mid-band gain ``r_f * t_int / (r_int * c_int)`` before a 12-bit ADC with
mid-rail code ``2**(adc_bits-1)``. Thermal noise is injected per phase as
i.i.d. Gaussian with the analytic single-sample variance.
"""

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _validation as v
from .errors import BoundsError, ConfigError
from .noise import NoisePsdParams, sample_variance

PHASES = ("RED", "IR", "AMB")
_CHANNEL = {"RED": "red", "IR": "ir", "AMB": "amb"}


@dataclass(frozen=True)
class FrontendConfig:
    g_m: float = 100e-6
    r_f: float = 1e6
    c_f: float = 0.5e-12
    c_par: float = 40e-12
    r_int: float = 125e3
    c_int: float = 5e-12
    t_int: float = 25e-6
    t_rst: float = 5e-6
    adc_bits: int = 12
    v_fullscale: float = 1.1
    idac_bits: int = 8
    idac_lsb: float = 20e-9
    idac_max: float = 15e-6
    idac_gain_error_p: float = 0.0
    idac_gain_error_n: float = 0.0
    temperature_k: float = 300.0
    alpha: float = 1.0
    gamma: float = 1.0
    noise_scale: float = 1.0
    servo_deadband: float = 0.25
    fs: float = 100.0

    def __post_init__(self):
        for name in ("g_m", "r_f", "c_f", "r_int", "c_int", "t_int", "v_fullscale",
                     "temperature_k", "alpha", "gamma", "fs"):
            v.check_positive(name, getattr(self, name))
        v.check_range("c_par", self.c_par, 1e-12, 10e-9)
        v.check_positive("t_rst", self.t_rst, strict=False)
        v.check_positive("noise_scale", self.noise_scale, strict=False)
        v.check_int("adc_bits", self.adc_bits, 2, 24)
        v.check_int("idac_bits", self.idac_bits, 1, 16)
        v.check_range("idac_lsb", self.idac_lsb, 20e-9, 60e-9)
        v.check_range("idac_max", self.idac_max, 0.0, 15e-6 + 1e-15)
        v.check_range("servo_deadband", self.servo_deadband, 0.0, 0.5)
        for name in ("idac_gain_error_p", "idac_gain_error_n"):
            v.check_range(name, getattr(self, name), -0.5, 0.5)
        if 1.0 / self.t_int <= self.fs:
            raise ConfigError("t_int", "integration must be shorter than the sample period")
        if 3 * (self.t_rst + self.t_int) >= 1.0 / self.fs:
            raise ConfigError("t_int", "three phases do not fit into one sample period")

    @property
    def mid_band_gain(self):
        return self.r_f * self.t_int / (self.r_int * self.c_int)

    @property
    def adc_levels(self):
        return 1 << self.adc_bits

    @property
    def adc_mid(self):
        return self.adc_levels // 2

    @property
    def lsb_volts(self):
        return 2.0 * self.v_fullscale / self.adc_levels

    @property
    def lsb_amps(self):
        """One ADC code referred to the input (A)."""
        return self.lsb_volts / self.mid_band_gain

    @property
    def idac_code_max(self):
        return min((1 << self.idac_bits) - 1, int(math.floor(self.idac_max / self.idac_lsb + 1e-9)))

    @property
    def codes_per_dac_lsb(self):
        return self.idac_lsb / self.lsb_amps

    @property
    def active_time_per_triplet(self):
        return 3.0 * (self.t_rst + self.t_int)

    def noise_params(self):
        return NoisePsdParams(g_m=self.g_m, r_f=self.r_f, c_f=self.c_f, c_par=self.c_par,
                              temperature_k=self.temperature_k, alpha=self.alpha,
                              gamma=self.gamma, t_int=self.t_int, r_int=self.r_int,
                              c_int=self.c_int)

    @property
    def noise_sigma_volts(self):
        """Per-phase output noise standard deviation at the ADC input."""
        return _sigma_volts(self.noise_params()) * self.noise_scale

    @property
    def noise_sigma_amps(self):
        return self.noise_sigma_volts / self.mid_band_gain


@lru_cache(maxsize=64)
def _sigma_volts(noise_params):
    return math.sqrt(sample_variance("ZTIA", noise_params).v2)


# --- I-DAC ------------------------------------------------------------------

@dataclass(frozen=True)
class IdacCalibration:
    """Reciprocal gain coefficients of the P (positive) and N (negative) I-DACs."""

    coef_p: float = 1.0
    coef_n: float = 1.0


def idac_current(code, cfg):
    """Actual current subtracted by a signed DAC code, gain errors included."""
    if code >= 0:
        return code * cfg.idac_lsb * (1.0 + cfg.idac_gain_error_p)
    return code * cfg.idac_lsb * (1.0 + cfg.idac_gain_error_n)


def idac_estimate(code, calibration, cfg):
    """Current the backend believes a code subtracts, given its calibration."""
    coef = calibration.coef_p if code >= 0 else calibration.coef_n
    return code * cfg.idac_lsb / coef


def idac_code_for(current, calibration, cfg):
    """Signed code whose calibrated current is closest to ``current``."""
    coef = calibration.coef_p if current >= 0 else calibration.coef_n
    code = int(round(current * coef / cfg.idac_lsb))
    m = cfg.idac_code_max
    return max(-m, min(m, code))


def calibrate_idac(cfg):
    """One-time open-loop calibration of both DAC polarities.

    Measures the effective current per code (an ideal reference measurement)
    and stores the reciprocal gain relative to the nominal LSB.
    """
    per_code_p = idac_current(1, cfg)
    per_code_n = -idac_current(-1, cfg)
    return IdacCalibration(cfg.idac_lsb / per_code_p, cfg.idac_lsb / per_code_n)


# --- servo --------------------------------------------------------------------

@dataclass
class ServoState:
    """Per-phase signed DAC codes (sign selects the P or N DAC)."""

    dac_code_red: int = 0
    dac_code_ir: int = 0
    dac_code_amb: int = 0
    calibration: IdacCalibration | None = None
    saturation_count: int = 0
    _sat_step: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    _sat_dir: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    _sat_bracketed: dict = field(default_factory=lambda: {p: False for p in PHASES})

    def code(self, phase):
        return getattr(self, f"dac_code_{phase.lower()}")

    def set_code(self, phase, code):
        setattr(self, f"dac_code_{phase.lower()}", code)


def initial_servo(cfg, calibration=None):
    return ServoState(calibration=calibration or calibrate_idac(cfg))


@dataclass
class PhaseSample:
    t_s: float
    code_red: int
    code_ir: int
    code_amb: int
    dac_red: int = 0
    dac_ir: int = 0
    dac_amb: int = 0
    sat_red: bool = False
    sat_ir: bool = False
    sat_amb: bool = False

    def code(self, phase):
        return getattr(self, f"code_{phase.lower()}")

    def dac(self, phase):
        return getattr(self, f"dac_{phase.lower()}")

    def saturated(self, phase):
        return getattr(self, f"sat_{phase.lower()}")

    @property
    def any_saturated(self):
        return self.sat_red or self.sat_ir or self.sat_amb


def servo_update(servo, sample, cfg):
    """Close the DC servo loop on one triplet (mutates and returns ``servo``).

    Inside the dead-band nothing changes. Outside it the DAC steps toward
    cancellation by ``ceil(deviation / codes_per_dac_lsb)``. A clamped
    (saturated) ADC hides the true deviation, so consecutive saturated
    updates gallop (step doubles) until the saturation flips side, after
    which the step halves on every update (bisection).
    """
    if servo.calibration is None:
        raise ConfigError("calibration", "calibrate the I-DACs before closing the servo loop")
    deadband = cfg.servo_deadband * cfg.adc_levels
    gain = cfg.codes_per_dac_lsb
    m = cfg.idac_code_max
    for phase in PHASES:
        code = sample.code(phase)
        dev = code - cfg.adc_mid
        dac = servo.code(phase)
        if sample.saturated(phase):
            direction = 1 if dev > 0 else -1
            prev_dir = servo._sat_dir[phase]
            step = servo._sat_step[phase]
            if prev_dir == 0:
                step = max(1, int(math.ceil(abs(dev) / gain)))
            elif prev_dir != direction or servo._sat_bracketed[phase]:
                # target bracketed: bisect
                servo._sat_bracketed[phase] = True
                step = max(1, step // 2)
            else:
                step *= 2
            servo._sat_step[phase] = step
            servo._sat_dir[phase] = direction
            new = dac + direction * step
        else:
            servo._sat_step[phase] = 0
            servo._sat_dir[phase] = 0
            servo._sat_bracketed[phase] = False
            if abs(dev) <= deadband:
                continue
            new = dac + int(math.copysign(math.ceil(abs(dev) / gain), dev))
        clamped = max(-m, min(m, new))
        if clamped != new:
            servo.saturation_count += 1
        servo.set_code(phase, clamped)
    return servo


# --- acquisition ----------------------------------------------------------------

def quantize(volts, cfg):
    """ADC transfer: ``(code, saturated)``; round-to-nearest around mid-rail."""
    x = volts / cfg.lsb_volts + cfg.adc_mid
    code = math.floor(x + 0.5)
    top = cfg.adc_levels - 1
    if code < 0:
        return 0, True
    if code > top:
        return top, True
    return code, False


def quantize_array(volts, cfg):
    x = np.floor(np.asarray(volts) / cfg.lsb_volts + cfg.adc_mid + 0.5)
    top = cfg.adc_levels - 1
    sat = (x < 0) | (x > top)
    return np.clip(x, 0, top).astype(np.int64), sat


def phase_window(t, phase, cfg):
    """Integration window ``(start, end)`` of ``phase`` within the triplet starting at ``t``."""
    offset = PHASES.index(phase) * (cfg.t_rst + cfg.t_int)
    start = t + offset + cfg.t_rst
    return start, start + cfg.t_int


def acquire_phase(trace, t, phase, cfg, servo, rng=None):
    """Digitize one phase whose reset starts at ``t``. Returns ``(code, saturated)``.

    ``rng=None`` gives a noiseless conversion.
    """
    v.check_choice("phase", phase, PHASES)
    start, end = phase_window(t, phase, cfg)
    i_in = float(trace.window_mean(_CHANNEL[phase], start, end))
    residual = i_in - idac_current(servo.code(phase), cfg)
    noise = rng.standard_normal() * cfg.noise_sigma_volts if rng is not None else 0.0
    return quantize(cfg.mid_band_gain * residual + noise, cfg)


def acquire_triplet(trace, t, cfg, servo, rng=None):
    """Red, IR and AMB phases back to back; total active time ``3 (t_rst + t_int)``."""
    codes = {}
    sats = {}
    for phase in PHASES:
        codes[phase], sats[phase] = acquire_phase(trace, t, phase, cfg, servo, rng)
    return PhaseSample(t, codes["RED"], codes["IR"], codes["AMB"],
                       servo.dac_code_red, servo.dac_code_ir, servo.dac_code_amb,
                       sats["RED"], sats["IR"], sats["AMB"])


def input_referred(code, dac_code, cfg, calibration):
    """Input current implied by an ADC code and the DAC code active during it."""
    return ((code - cfg.adc_mid) * cfg.lsb_amps
            + idac_estimate(dac_code, calibration, cfg))


def cds_correct(sample, servo, cfg):
    """Ambient-subtracted ``(red, ir, low_confidence)`` in input-referred amperes."""
    cal = servo.calibration or IdacCalibration()
    amb = input_referred(sample.code_amb, sample.dac_amb, cfg, cal)
    red = input_referred(sample.code_red, sample.dac_red, cfg, cal) - amb
    ir = input_referred(sample.code_ir, sample.dac_ir, cfg, cal) - amb
    return red, ir, sample.any_saturated


class Frontend:
    """Triplet acquisition on the ``1/fs`` tick grid of one trace.

    Window means and noise draws are precomputed for every tick so that
    acquisition cost does not depend on the trace clock, and the noise seen
    at tick ``k`` is fixed by the seed regardless of which ticks fire.
    """

    def __init__(self, trace, cfg, seed=0, servo=None, t_offset=0.0, noiseless=False):
        self.trace = trace
        self.cfg = cfg
        self.servo = servo or initial_servo(cfg)
        period = 1.0 / cfg.fs
        last_start = trace.t[-1] - cfg.active_time_per_triplet - t_offset
        self.n_ticks = int(math.floor(last_start / period + 1e-9)) + 1
        if self.n_ticks < 1:
            raise BoundsError("trace shorter than one triplet")
        self.tick_times = trace.t[0] + t_offset + np.arange(self.n_ticks) * period
        self.means = {}
        for phase in PHASES:
            start, end = phase_window(self.tick_times, phase, cfg)
            self.means[phase] = trace.window_mean(_CHANNEL[phase], start, end)
        rng = np.random.default_rng(seed)
        sigma = 0.0 if noiseless else cfg.noise_sigma_volts
        self.noise = rng.standard_normal((self.n_ticks, 3)) * sigma
        self.log = []

    def acquire(self, k):
        """Acquire triplet at tick ``k``, update the servo and return the sample."""
        cfg = self.cfg
        servo = self.servo
        g = cfg.mid_band_gain
        codes = []
        sats = []
        for j, phase in enumerate(PHASES):
            residual = self.means[phase][k] - idac_current(servo.code(phase), cfg)
            c, s = quantize(g * residual + self.noise[k, j], cfg)
            codes.append(c)
            sats.append(s)
        t = float(self.tick_times[k])
        sample = PhaseSample(t, codes[0], codes[1], codes[2],
                             servo.dac_code_red, servo.dac_code_ir, servo.dac_code_amb,
                             sats[0], sats[1], sats[2])
        for j, phase in enumerate(PHASES):
            self.log.append((t, phase, codes[j], sample.dac(phase), sats[j]))
        servo_update(servo, sample, cfg)
        return sample

    def acquire_corrected(self, k):
        sample = self.acquire(k)
        red, ir, low = cds_correct(sample, self.servo, self.cfg)
        return red, ir, low

    def acquire_block(self, ticks=None):
        """Vectorized acquisition with the DAC codes frozen (no servo updates)."""
        ticks = np.arange(self.n_ticks) if ticks is None else np.asarray(ticks)
        cfg = self.cfg
        out = {}
        for j, phase in enumerate(PHASES):
            residual = self.means[phase][ticks] - idac_current(self.servo.code(phase), cfg)
            out[phase] = quantize_array(cfg.mid_band_gain * residual + self.noise[ticks, j], cfg)
        return out


LOG_COLUMNS = ("t_s", "phase", "code", "dac_code", "saturated")


def write_acquisition_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for t, phase, code, dac, sat in rows:
            w.writerow([repr(float(t)), phase, int(code), int(dac), int(bool(sat))])
    return path
