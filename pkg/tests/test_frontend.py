import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from sparse_ppg.errors import BoundsError, ConfigError
from sparse_ppg.frontend import (PHASES, Frontend, FrontendConfig, IdacCalibration, ServoState,
                                 acquire_phase, acquire_triplet, calibrate_idac, cds_correct,
                                 idac_code_for, idac_current, initial_servo, quantize,
                                 servo_update, write_acquisition_log)
from sparse_ppg.noise import input_referred_density
from sparse_ppg.synth import PhotocurrentTrace, PpgModelParams, synthesize

CFG = FrontendConfig()


def const_trace(red, ir, amb, t_end=2.0, n=3):
    t = np.linspace(0.0, t_end, n)
    return PhotocurrentTrace(t, np.full(n, red), np.full(n, ir), np.full(n, amb), n / t_end)


def sar_oracle(volts, cfg):
    """Thermometer count of decision thresholds crossed (independent of quantize)."""
    lsb = 2 * cfg.v_fullscale / 2 ** cfg.adc_bits
    lo, hi = 0, 2 ** cfg.adc_bits - 1
    # binary search for the largest code whose lower threshold is <= volts
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if volts >= (mid - 2 ** (cfg.adc_bits - 1) - 0.5) * lsb:
            lo = mid
        else:
            hi = mid - 1
    return lo


def test_zero_residual_is_mid_scale():
    tr = const_trace(0.0, 0.0, 0.0)
    code, sat = acquire_phase(tr, 0.1, "RED", CFG, initial_servo(CFG))
    assert (code, sat) == (2048, False)


def test_constant_residual_code_oracle():
    # 50 nA would exceed the +-27.5 nA input range at 40 MOhm; 20 nA stays inside
    tr = const_trace(20e-9, 20e-9, 0.0)
    code, sat = acquire_phase(tr, 0.1, "IR", CFG, initial_servo(CFG))
    v = 20e-9 * CFG.mid_band_gain
    assert code == sar_oracle(v, CFG) == 3537
    assert not sat


@given(st.floats(-1.2, 1.2))
def test_quantizer_agrees_with_sar_oracle(v):
    code, _ = quantize(v, CFG)
    assert code == sar_oracle(v, CFG)


def test_out_of_range_clamps_and_flags():
    assert quantize(5.0, CFG) == (4095, True)
    assert quantize(-5.0, CFG) == (0, True)
    tr = const_trace(50e-9, 0.0, 0.0)
    assert acquire_phase(tr, 0.1, "RED", CFG, initial_servo(CFG)) == (4095, True)


@given(st.floats(-1.09, 1.09))
def test_affine_within_half_lsb(v):
    code, sat = quantize(v, CFG)
    assert not sat
    assert abs(code - (2048 + v / CFG.lsb_volts)) <= 0.5 + 1e-9


@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=50))
def test_quantizer_monotone_and_in_range(vs):
    vs = sorted(vs)
    codes = [quantize(v, CFG)[0] for v in vs]
    assert codes == sorted(codes)
    assert all(0 <= c <= 4095 for c in codes)


def test_window_out_of_trace_is_bounds_error():
    tr = const_trace(0.0, 0.0, 0.0, t_end=0.01)
    with pytest.raises(BoundsError):
        acquire_phase(tr, 0.00995, "AMB", CFG, initial_servo(CFG))


@pytest.mark.parametrize("t_rst,t_int,duty", [(10e-6, 100e-6, 0.033), (5e-6, 25e-6, 0.009)])
def test_triplet_active_time(t_rst, t_int, duty):
    cfg = FrontendConfig(t_rst=t_rst, t_int=t_int, r_int=125e3 * t_int / 25e-6)
    assert cfg.active_time_per_triplet == pytest.approx(3 * (t_rst + t_int))
    assert cfg.active_time_per_triplet * 100 == pytest.approx(duty)


def test_amb_phase_ignores_led_ac():
    servo = initial_servo(CFG)
    a = synthesize(PpgModelParams(i_ac_ir=0.0, i_ac_red=0.0), 2.0, seed=1)
    b = synthesize(PpgModelParams(i_ac_ir=20e-9), 2.0, seed=1)
    for t in (0.2, 0.7, 1.3):
        assert acquire_phase(a, t, "AMB", CFG, servo) == acquire_phase(b, t, "AMB", CFG, servo)


def test_config_validation():
    with pytest.raises(ConfigError) as exc:
        FrontendConfig(c_par=20e-9)
    assert exc.value.field == "c_par"
    with pytest.raises(ConfigError):
        FrontendConfig(idac_lsb=10e-9)
    with pytest.raises(ConfigError):
        FrontendConfig(idac_max=20e-6)
    with pytest.raises(ConfigError):
        FrontendConfig(t_int=0.02)


# --- I-DAC calibration ---------------------------------------------------------

def test_calibration_ideal_is_unity():
    assert calibrate_idac(CFG) == IdacCalibration(1.0, 1.0)


def test_calibration_reciprocal_gain():
    cal = calibrate_idac(replace(CFG, idac_gain_error_p=0.02))
    assert cal.coef_p == pytest.approx(1 / 1.02, rel=1e-15)
    assert cal.coef_n == 1.0


@pytest.mark.parametrize("ep,en", [(0.03, -0.02), (-0.04, 0.05), (0.0, 0.0)])
def test_calibrated_loopback_within_half_lsb(ep, en):
    cfg = replace(CFG, idac_gain_error_p=ep, idac_gain_error_n=en)
    cal = calibrate_idac(cfg)
    for target in (1e-6, -1e-6):
        actual = idac_current(idac_code_for(target, cal, cfg), cfg)
        assert abs(actual - target) < 0.5 * cfg.idac_lsb * (1 + max(abs(ep), abs(en)))
    if ep:
        naive = idac_current(idac_code_for(1e-6, IdacCalibration(), cfg), cfg)
        assert abs(naive - 1e-6) > abs(idac_current(idac_code_for(1e-6, cal, cfg), cfg) - 1e-6)


# --- servo --------------------------------------------------------------------

def sample_with(codes, sats=(False, False, False)):
    from sparse_ppg.frontend import PhaseSample
    return PhaseSample(0.0, *codes, 0, 0, 0, *sats)


def test_servo_mid_scale_no_change():
    servo = initial_servo(CFG)
    servo_update(servo, sample_with((2048, 2048, 2048)), CFG)
    assert (servo.dac_code_red, servo.dac_code_ir, servo.dac_code_amb) == (0, 0, 0)


def test_servo_requires_calibration():
    with pytest.raises(ConfigError):
        servo_update(ServoState(), sample_with((2048, 2048, 2048)), CFG)


def closed_loop(cfg, current, n_max=40):
    tr = const_trace(current, current, 0.0, t_end=1.0)
    servo = initial_servo(cfg)
    updates = 0
    for k in range(n_max):
        s = acquire_triplet(tr, 0.1 + k * 0.01, cfg, servo)
        dev = abs(s.code_ir - cfg.adc_mid)
        if dev <= cfg.servo_deadband * cfg.adc_levels and not s.sat_ir:
            return updates, servo
        servo_update(servo, s, cfg)
        updates += 1
    return None, servo


def test_servo_ten_lsb_step_low_gain_three_updates():
    low_gain = replace(CFG, r_int=1.25e6)  # 4 MOhm mid-band gain
    updates, servo = closed_loop(low_gain, 10 * CFG.idac_lsb)
    assert updates is not None and updates <= 3
    assert servo.dac_code_ir == 10


def test_servo_ten_lsb_step_reference_gain_converges():
    updates, servo = closed_loop(CFG, 10 * CFG.idac_lsb)
    assert updates is not None and updates <= 10
    assert servo.dac_code_ir == 10


@pytest.mark.parametrize("current", [3.3e-6, -1.7e-6, 4.51e-6])
def test_servo_converges_from_saturation(current):
    updates, servo = closed_loop(CFG, current)
    assert updates is not None
    assert abs(idac_current(servo.dac_code_ir, CFG) - current) < 1.5 * CFG.idac_lsb


def test_servo_pins_at_max_and_counts():
    updates, servo = closed_loop(CFG, 14e-6, n_max=30)
    assert updates is None
    assert servo.dac_code_ir == CFG.idac_code_max == 255
    assert servo.saturation_count > 0


# --- CDS -----------------------------------------------------------------------

def corrected(tr, t, cfg=CFG, servo=None):
    servo = servo or initial_servo(cfg)
    s = acquire_triplet(tr, t, cfg, servo)
    return cds_correct(s, servo, cfg)


def test_cds_identical_inputs_cancel():
    red, ir, low = corrected(const_trace(7e-9, 7e-9, 7e-9), 0.1)
    assert abs(red) <= CFG.lsb_amps and abs(ir) <= CFG.lsb_amps
    assert not low


def test_cds_ambient_offset_rejected():
    base = corrected(const_trace(12e-9, 9e-9, 2e-9), 0.1)
    bumped = corrected(const_trace(112e-9, 109e-9, 102e-9), 0.1,
                       servo=ServoState(5, 5, 5, calibrate_idac(CFG)))
    assert abs(base[0] - bumped[0]) <= CFG.lsb_amps * 1.0001
    assert abs(base[1] - bumped[1]) <= CFG.lsb_amps * 1.0001


@settings(max_examples=50)
@given(st.floats(-5e-9, 5e-9))
def test_cds_common_constant_property(c):
    a = corrected(const_trace(10e-9, -4e-9, 1e-9), 0.1)
    b = corrected(const_trace(10e-9 + c, -4e-9 + c, 1e-9 + c), 0.1)
    assert abs(a[0] - b[0]) <= CFG.lsb_amps * 1.0001
    assert abs(a[1] - b[1]) <= CFG.lsb_amps * 1.0001


def test_cds_low_confidence_on_saturation():
    assert corrected(const_trace(80e-9, 0.0, 0.0), 0.1)[2]


def test_cds_attenuates_120hz_ambient():
    p = PpgModelParams(i_ac_ir=0.0, i_ac_red=0.0, i_dc_red=1e-6, i_dc_ir=1e-6, i_ambient=20e-9,
                       i_dark=0.0, ambient_hum_a=10e-9)
    tr = synthesize(p, 10.5, seed=0)
    servo = ServoState(51, 51, 1, calibrate_idac(CFG))
    fe = Frontend(tr, CFG, servo=servo, noiseless=True)
    raw, cds = [], []
    for k in range(1000):
        s = fe.acquire(k)
        raw.append((s.code_red - CFG.adc_mid) * CFG.lsb_amps)
        cds.append(cds_correct(s, fe.servo, CFG)[0])
    raw = np.asarray(raw) - np.mean(raw)
    cds = np.asarray(cds) - np.mean(cds)
    atten_db = 10 * np.log10(np.sum(raw ** 2) / np.sum(cds ** 2))
    assert atten_db >= 20.0


def test_noiseless_sine_thd_below_minus_60db():
    fs_syn = 10_000
    t = np.arange(0, 10.01 * fs_syn + 1) / fs_syn
    amp = 10e-9
    ir = 4e-6 + amp * np.sin(2 * np.pi * 1.0 * t)
    tr = PhotocurrentTrace(t, np.full_like(t, 3e-6), ir, np.zeros_like(t), fs_syn)
    servo = ServoState(150, 200, 0, calibrate_idac(CFG))
    fe = Frontend(tr, CFG, servo=servo, noiseless=True)
    y = np.array([cds_correct(fe.acquire(k), fe.servo, CFG)[1] for k in range(1000)])
    spec = np.abs(np.fft.rfft(y - y.mean())) ** 2
    fund = spec[10]
    harm = sum(spec[10 * h] for h in range(2, 11))
    assert 10 * np.log10(harm / fund) < -60.0


def test_welch_noise_matches_analytic_density():
    tr = const_trace(0.0, 0.0, 0.0, t_end=1000.0)
    fe = Frontend(tr, CFG, seed=123)
    out = fe.acquire_block()
    ir = (out["IR"][0] - out["AMB"][0]) * CFG.lsb_amps
    f, pxx = signal.welch(ir, fs=CFG.fs, nperseg=1024)
    band = (f > 0) & (f <= 5.0)
    measured = math.sqrt(np.mean(pxx[band]))
    analytic = input_referred_density(CFG.noise_params()).density
    assert measured == pytest.approx(analytic, rel=0.10)


def test_frontend_noise_deterministic_by_seed():
    tr = const_trace(0.0, 0.0, 0.0, t_end=5.0)
    a = Frontend(tr, CFG, seed=5).acquire_block()["IR"][0]
    b = Frontend(tr, CFG, seed=5).acquire_block()["IR"][0]
    c = Frontend(tr, CFG, seed=6).acquire_block()["IR"][0]
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_acquisition_log_csv(tmp_path):
    tr = const_trace(1e-9, 2e-9, 0.0, t_end=0.1)
    fe = Frontend(tr, CFG, seed=0)
    for k in range(3):
        fe.acquire(k)
    path = write_acquisition_log(fe.log, tmp_path / "acq.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t_s,phase,code,dac_code,saturated"
    assert len(lines) == 1 + 3 * len(PHASES)
    assert lines[1].split(",")[1] == "RED"
