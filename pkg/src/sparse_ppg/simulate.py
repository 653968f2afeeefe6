"""End-to-end runs: synthetic trace -> front-end -> backend engine -> vitals."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import CONTINUOUS, SPARSE, SparseConfig, SparseEngine, run_on_arrays
from .errors import ConfigError
from .frontend import Frontend, FrontendConfig, cds_correct, idac_estimate
from .synth import ArtifactEvent, PpgModelParams, inject_artifact, synthesize
from .vitals import vitals_over_windows

MODES = ("continuous", "sparse")


def sine_noise_sigma(amplitude, snr_db, fs=100.0, band_hz=5.0):
    """Per-sample white-noise std giving ``snr_db`` of sine power over in-band noise.

    Signal power is ``amplitude**2 / 2``; white noise of variance ``s**2``
    sampled at ``fs`` puts ``s**2 * band_hz / (fs / 2)`` inside ``band_hz``.
    """
    p_sig = amplitude ** 2 / 2.0
    p_noise = p_sig / 10 ** (snr_db / 10.0)
    return math.sqrt(p_noise * fs / (2.0 * band_hz))


def noise_scale_for_snr(fe_cfg, ac_pp, snr_db, band_hz=5.0):
    """Front-end ``noise_scale`` placing the CDS output at ``snr_db``.

    The CDS output (LED phase minus AMB phase) carries twice the per-phase
    noise variance. ``ac_pp`` is the peak-to-valley span of the pulse, taken
    as a sine of amplitude ``ac_pp / 2``.
    """
    target = sine_noise_sigma(ac_pp / 2.0, snr_db, fe_cfg.fs, band_hz)
    native = math.sqrt(2.0) * replace(fe_cfg, noise_scale=1.0).noise_sigma_amps
    return target / native


@dataclass
class ChainResult:
    engine: SparseEngine
    frontend: Frontend
    trace: object
    fired_ticks: list
    duration_s: float
    mode: str
    samples: list = field(default_factory=list)

    @property
    def fired_times(self):
        return [float(self.frontend.tick_times[k]) for k in self.fired_ticks]

    @property
    def t_end(self):
        return self.engine.t0 + self.frontend.n_ticks / self.engine.cfg.fs

    def vitals(self, calib=None, t_start=None):
        t0 = self.engine.t0 if t_start is None else t_start
        return vitals_over_windows(self.engine.events, t0, self.t_end,
                                   self.engine.cfg.hr_window_s, calib)

    def hr_errors(self, t_start=None):
        """Absolute HR error (bpm) per 8 s window against ground truth."""
        truth = self.trace.truth
        errs = []
        for rep in self.vitals(t_start=t_start):
            ref = truth.hr_in_window(rep.window_start_s, rep.window_end_s)
            errs.append(abs(rep.hr_bpm - ref))
        return errs


def run_frontend_engine(trace, fe_cfg=None, sp_cfg=None, mode="sparse", seed=0,
                        t_offset=0.0, servo=None):
    """Drive the engine with triplets acquired from ``trace``.

    In ``continuous`` mode the engine never leaves CONTINUOUS.
    """
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {list(MODES)}, got {mode!r}")
    fe_cfg = fe_cfg or FrontendConfig()
    sp_cfg = sp_cfg or SparseConfig(fs=fe_cfg.fs)
    if sp_cfg.fs != fe_cfg.fs:
        raise ConfigError("fs", "engine and front-end sample rates differ")
    fe = Frontend(trace, fe_cfg, seed=seed, servo=servo, t_offset=t_offset)
    eng = SparseEngine(sp_cfg, t0=float(fe.tick_times[0]), allow_sparse=(mode == "sparse"))
    fired = []
    samples = []
    k = 0
    n = fe.n_ticks
    cal = fe.servo.calibration
    while k < n:
        k = eng.next_active_tick(k)
        if k >= n:
            break
        sample = fe.acquire(k)
        red, ir, low = cds_correct(sample, fe.servo, fe_cfg)
        red_dc = idac_estimate(sample.dac_red, cal, fe_cfg) - idac_estimate(sample.dac_amb, cal, fe_cfg)
        ir_dc = idac_estimate(sample.dac_ir, cal, fe_cfg) - idac_estimate(sample.dac_amb, cal, fe_cfg)
        eng.push(k, red, ir, low, red_dc, ir_dc)
        fired.append(k)
        samples.append((sample.t_s, red, ir, low))
        k += 1
    return ChainResult(eng, fe, trace, fired, trace.duration_s, mode, samples)


def split_seed(seed):
    """``(synthesis, front-end)`` seed sequences derived from one master seed."""
    return tuple(np.random.SeedSequence(seed).spawn(2))


def effective_frontend(fe_cfg, params, snr_db):
    if snr_db is None:
        return fe_cfg
    return replace(fe_cfg, noise_scale=noise_scale_for_snr(fe_cfg, params.i_ac_ir, snr_db))


def make_trace(params, duration_s, seed=0, artifacts=()):
    trace = synthesize(params, duration_s, split_seed(seed)[0])
    for art in artifacts:
        trace = inject_artifact(trace, art)
    return trace


def run_chain(params, duration_s, seed=0, fe_cfg=None, sp_cfg=None, mode="sparse",
              snr_db=None, artifacts=()):
    """Synthesize, corrupt, acquire and process one trace.

    ``snr_db`` (optional) rescales the front-end noise so that the IR
    channel's CDS output sits at that in-band SNR.
    """
    fe_cfg = effective_frontend(fe_cfg or FrontendConfig(), params, snr_db)
    trace = make_trace(params, duration_s, seed, artifacts)
    return run_frontend_engine(trace, fe_cfg, sp_cfg, mode, seed=split_seed(seed)[1])


def run_sine(freq_hz, snr_db, seed, duration_s=None, sp_cfg=None, amplitude=1.0):
    """Sample-level sine plus white noise, fed straight to the engine.

    Returns ``(engine, t_entry, t_end)`` where ``t_entry`` is the first
    SPARSE entry time (None if lock never happened).
    """
    sp_cfg = sp_cfg or SparseConfig()
    fs = sp_cfg.fs
    rng = np.random.default_rng(seed)
    if duration_s is None:
        duration_s = 16.0 + 12.0 + 6.0 / freq_hz
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    phase = rng.uniform(0.0, 2.0 * math.pi)
    sigma = sine_noise_sigma(amplitude, snr_db, fs)
    ir = amplitude * np.sin(2.0 * math.pi * freq_hz * t + phase) + sigma * rng.standard_normal(n)
    eng = run_on_arrays(ir, ir, sp_cfg)
    return eng, eng.first_sparse_entry(), n / fs


def sparse_fraction(result):
    """Fraction of ticks that fired while the engine was in SPARSE mode."""
    spans = [(a, b) for a, b, m in result.engine.mode_intervals(result.t_end) if m == SPARSE]
    if not spans:
        return math.nan
    t = np.asarray(result.fired_times)
    total_ticks = 0.0
    fired = 0
    fs = result.engine.cfg.fs
    for a, b in spans:
        total_ticks += (b - a) * fs
        fired += int(np.sum((t >= a) & (t < b)))
    return fired / total_ticks




@dataclass
class ArtifactOutcome:
    """What the engine did around one injected step artifact."""

    start_s: float
    end_s: float
    miss_widths: list
    reached_w_max: bool
    reverted: bool
    relock_s: float | None
    final_mode: str

    @property
    def relock_delay_s(self):
        return None if self.relock_s is None else self.relock_s - self.end_s

    def recovered(self, within_s=10.0):
        """Expanded to w_max, reverted, and back in SPARSE within ``within_s`` of the end."""
        return (self.reached_w_max and self.reverted and self.final_mode == SPARSE
                and self.relock_delay_s is not None and self.relock_delay_s <= within_s)


def step_artifact_scenario(seed, params=None, ac_multiple=3.0, duration_s=8.0, tail_s=22.0,
                           snr_db=40.0, sp_cfg=None):
    """Baseline step of ``ac_multiple`` times the IR AC amplitude after lock.

    The step starts at a seeded random time in [20, 21) s, well after the
    engine has entered SPARSE mode, and lasts ``duration_s``.
    """
    params = params or PpgModelParams()
    sp_cfg = sp_cfg or SparseConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    start = 20.0 + rng.uniform(0.0, 1.0)
    end = start + duration_s
    art = ArtifactEvent(start, duration_s, "baseline-step", ac_multiple * params.i_ac_ir)
    r = run_chain(params, end + tail_s, seed=seed, sp_cfg=sp_cfg, mode="sparse",
                  snr_db=snr_db, artifacts=[art])
    eng = r.engine
    misses = [row for row in eng.log if row.miss and row.t_s >= start]
    reached = any(row.w == sp_cfg.w_max(row.t_est_s) for row in misses)
    reverts = [t for t, a, b, _ in eng.transitions if b == CONTINUOUS and a == SPARSE and t >= start]
    entries = [t for t, _, b, _ in eng.transitions if b == SPARSE]
    relock = entries[-1] if reverts and entries and entries[-1] > reverts[0] else None
    return ArtifactOutcome(start, end, [row.w for row in misses], reached, bool(reverts), relock,
                           eng.mode)
