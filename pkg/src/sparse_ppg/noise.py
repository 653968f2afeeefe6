"""Noise model of ZTIA and CTIA readout chains followed by a boxcar integrator.

All quantities are SI. Spectral densities are one-sided (per Hz, f >= 0).
The OTA is a single transconductance stage ``g_m``; the two noise sources
are the OTA channel noise (current at the OTA output) and the Johnson
noise of the feedback resistor.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import k as BOLTZMANN

from . import _validation as v
from .errors import ConfigError, NumericalError

TOPOLOGIES = ("ZTIA", "CTIA_CDS")


@dataclass(frozen=True)
class NoisePsdParams:
    g_m: float = 100e-6
    r_f: float = 1e6
    c_f: float = 0.5e-12
    c_par: float = 40e-12
    temperature_k: float = 300.0
    alpha: float = 1.0
    gamma: float = 1.0
    f_c: float = 1e6
    t_int: float = 25e-6
    r_int: float = 125e3
    c_int: float = 5e-12

    def __post_init__(self):
        for name in ("g_m", "r_f", "c_f", "c_par", "temperature_k", "alpha", "gamma",
                     "f_c", "t_int", "r_int", "c_int"):
            v.check_positive(name, getattr(self, name))

    @property
    def integrator_gain(self):
        return self.t_int / (self.r_int * self.c_int)

    @property
    def mid_band_gain(self):
        """Transimpedance times boxcar DC gain (ohms)."""
        return self.r_f * self.integrator_gain

    @property
    def four_kt(self):
        return 4.0 * BOLTZMANN * self.temperature_k


# Reference operating point at C_Par = 40 pF: 40 MOhm overall gain and an
# input-referred density of ~4.75 pA/rtHz at the CDS-corrected 100 S/s output.
# Found with find_reference_config(); see tests/test_noise.py.
REFERENCE_NOISE_PARAMS = NoisePsdParams(
    g_m=100e-6, r_f=1e6, c_f=0.5e-12, c_par=40e-12, temperature_k=300.0,
    t_int=25e-6, r_int=125e3, c_int=5e-12,
)


def _s(f):
    return 2j * np.pi * np.asarray(f, dtype=float)


def _loop_denominator(s, p):
    return p.c_par * p.c_f * p.r_f * s * s + (p.c_par + p.c_f * p.g_m * p.r_f) * s + p.g_m


def tf_rf_noise(f, p):
    """|H|^2 from the feedback-resistor noise voltage to the TIA output."""
    s = _s(f)
    h = (p.c_par * s + p.g_m) / _loop_denominator(s, p)
    return np.abs(h) ** 2


def tf_gm_noise(f, p):
    """|H|^2 (ohm^2) from the OTA output noise current to the TIA output."""
    s = _s(f)
    h = (p.r_f * (p.c_par + p.c_f) * s + 1.0) / _loop_denominator(s, p)
    return np.abs(h) ** 2


def source_psds(p):
    """``(4kT R_F [V^2/Hz], 4kT gamma alpha g_m [A^2/Hz])``."""
    return p.four_kt * p.r_f, p.four_kt * p.gamma * p.alpha * p.g_m


def _ztia_denominator(f, p):
    f2 = np.asarray(f, dtype=float) ** 2
    gm2 = p.g_m ** 2
    return (16 * np.pi ** 4 * p.c_f ** 2 * p.c_par ** 2 * p.r_f ** 2 / gm2 * f2 * f2
            + 4 * np.pi ** 2 * (p.c_par ** 2 / gm2 + p.r_f ** 2 * p.c_f ** 2) * f2 + 1.0)


def ztia_output_psd(f, p, sources="both"):
    """Simplified ZTIA output noise PSD (V^2/Hz).

    With ``alpha = gamma = 1`` and ``sources="both"`` this is::

        4kT (1/g_m + R_F) (4 pi^2 R_F/g_m C_par^2 f^2 + 1)
        / (16 pi^4 C_F^2 C_par^2 R_F^2/g_m^2 f^4
           + 4 pi^2 (C_par^2/g_m^2 + R_F^2 C_F^2) f^2 + 1)

    The numerator splits exactly into a resistor part and an OTA part, which
    ``sources="rf"`` / ``"gm"`` select.
    """
    v.check_choice("sources", sources, ("both", "rf", "gm"))
    w2 = (2 * np.pi * np.asarray(f, dtype=float)) ** 2
    num = 0.0
    if sources in ("both", "rf"):
        num = num + p.r_f * (1.0 + w2 * p.c_par ** 2 / p.g_m ** 2)
    if sources in ("both", "gm"):
        num = num + p.alpha * p.gamma / p.g_m * (1.0 + w2 * p.r_f ** 2 * p.c_par ** 2)
    return p.four_kt * num / _ztia_denominator(f, p)


def ztia_output_psd_composed(f, p):
    """ZTIA output PSD from the two source PSDs and their exact transfer functions."""
    psd_rf, psd_gm = source_psds(p)
    return psd_rf * tf_rf_noise(f, p) + psd_gm * tf_gm_noise(f, p)


def boxcar_tf(f, t_int, r_int, c_int):
    """Reset-integrator magnitude ``T_int/(R_int C_int) |sinc(T_int f)|``."""
    return t_int / (r_int * c_int) * np.abs(np.sinc(t_int * np.asarray(f, dtype=float)))


def ctia_output_psd(f, p):
    """CTIA output PSD (R_F removed): ``4kT/g_m / (4 pi^2 C_F^2/g_m^2 f^2 + C_F^2/C_par^2)``."""
    f2 = np.asarray(f, dtype=float) ** 2
    den = 4 * np.pi ** 2 * p.c_f ** 2 / p.g_m ** 2 * f2 + p.c_f ** 2 / p.c_par ** 2
    return p.four_kt * p.alpha * p.gamma / p.g_m / den


def cds_prefactor(p):
    """Low-frequency level of :func:`cds_output_psd` (V^2/Hz)."""
    excess = math.pi * p.f_c * p.t_int - 1.0
    if excess <= 0:
        raise ConfigError("f_c", f"pi*f_c*t_int = {excess + 1:.3g} <= 1; CDS noise model undefined")
    return 2.0 * excess * (1.0 + p.c_par / p.c_f) ** 2 * p.four_kt * p.alpha * p.gamma / p.g_m


def cds_output_psd(f, p):
    """Reset-and-CDS CTIA output PSD: ``2(pi f_C T - 1)(1 + C_par/C_F)^2 4kT/g_m sinc^2(T f)``."""
    return cds_prefactor(p) * np.sinc(p.t_int * np.asarray(f, dtype=float)) ** 2


def pole_frequencies(p):
    """Pole frequencies (Hz) of the ZTIA noise denominator, ascending."""
    gm2 = p.g_m ** 2
    a = (p.c_f * p.c_par * p.r_f / p.g_m) ** 2
    b = p.c_par ** 2 / gm2 + (p.r_f * p.c_f) ** 2
    disc = max(b * b - 4 * a, 0.0)
    tau2 = sorted(((b + math.sqrt(disc)) / 2, (b - math.sqrt(disc)) / 2), reverse=True)
    return tuple(1.0 / (2 * math.pi * math.sqrt(t)) for t in tau2 if t > 0)


def ctia_matched(p):
    """CTIA parameters with the same g_m, T_int and effective gain (T_int / C_F = ZTIA mid-band gain)."""
    return replace(p, c_f=p.t_int / p.mid_band_gain)


@dataclass(frozen=True)
class SampleVariance:
    v2: float
    """Output-referred variance of one sample (V^2)."""
    a2: float
    """Input-referred variance (A^2)."""
    f_max: float
    nodes: int


def _integrand(topology, p):
    if topology == "ZTIA":
        return lambda f: ztia_output_psd(f, p) * boxcar_tf(f, p.t_int, p.r_int, p.c_int) ** 2
    return lambda f: cds_output_psd(f, p)


def integration_limit(topology, p):
    """Upper frequency for variance integrals: 100x the highest pole, at least 1000 sinc lobes."""
    lobes = 1000.0 / p.t_int
    if topology == "ZTIA":
        return max(100.0 * max(pole_frequencies(p)), lobes)
    return lobes


def _gauss_lobes(func, edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a = edges[:-1, None]
    b = edges[1:, None]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = func(mid + half * x[None, :])
    return float(np.sum(vals * w[None, :] * half))


def integrate_psd(func, f_max, t_int, rel_tol=1e-4, max_order=256):
    """Integrate ``func`` over [0, f_max] lobe by lobe (lobe width 1/t_int).

    Gauss-Legendre order doubles until the relative change drops below
    ``rel_tol``. Returns ``(value, nodes_used)``.
    """
    n_lobes = max(1, int(math.ceil(f_max * t_int)))
    edges = np.arange(n_lobes + 1, dtype=float) / t_int
    edges[-1] = f_max
    history = []
    order = 8
    prev = _gauss_lobes(func, edges, order)
    history.append(prev)
    while order < max_order:
        order *= 2
        cur = _gauss_lobes(func, edges, order)
        history.append(cur)
        if cur == 0 or abs(cur - prev) <= rel_tol * abs(cur):
            return cur, n_lobes * order
        prev = cur
    raise NumericalError("quadrature did not converge",
                         {"f_max": f_max, "lobes": n_lobes, "max_order": max_order,
                          "estimates": history})


def sample_variance(topology, p, rel_tol=1e-4):
    """Variance of a single sample taken after the boxcar integrator.

    ``ZTIA`` integrates the ZTIA PSD shaped by the boxcar |H|^2; ``CTIA_CDS``
    integrates the (already sinc-shaped) reset/CDS CTIA PSD, so pass CTIA
    parameters (see :func:`ctia_matched`). Input referral divides by the
    squared mid-band gain (ZTIA) or ``(T_int / C_F)^2`` (CTIA).
    """
    v.check_choice("topology", topology, TOPOLOGIES)
    f_max = integration_limit(topology, p)
    var, nodes = integrate_psd(_integrand(topology, p), f_max, p.t_int, rel_tol)
    gain = p.mid_band_gain if topology == "ZTIA" else p.t_int / p.c_f
    return SampleVariance(var, var / gain ** 2, f_max, nodes)


def riemann_variance(topology, p, n_points=1_000_000):
    """Brute-force midpoint-rule variance on the same band (independent check)."""
    f_max = integration_limit(topology, p)
    df = f_max / n_points
    f = (np.arange(n_points) + 0.5) * df
    return float(np.sum(_integrand(topology, p)(f)) * df)


@dataclass(frozen=True)
class NoiseDensity:
    density: float
    """Input-referred density of the sampled chain (A/rtHz)."""
    rms: float
    """Integrated rms over the band (A)."""


def input_referred_density(p, band_hz=5.0, fs=100.0, cds=True):
    """Input-referred noise density of the sampled ZTIA chain.

    Successive samples are independent, so sample noise spreads flat over
    [0, fs/2]. With ``cds`` the output is the difference of two phases
    (Red or IR minus AMB), doubling the variance.
    """
    var = sample_variance("ZTIA", p).a2 * (2 if cds else 1)
    density = math.sqrt(var / (fs / 2.0))
    return NoiseDensity(density, density * math.sqrt(band_hz))


def find_reference_config(target=4.8e-12, c_par=40e-12, gain=40e6,
                          g_m_grid=(30e-6, 100e-6, 300e-6, 1e-3),
                          c_f_grid=(0.2e-12, 0.5e-12, 1e-12, 2e-12),
                          t_int_grid=(25e-6, 50e-6, 100e-6), r_f=1e6, c_int=5e-12):
    """Grid search for the config whose CDS-output density is closest to ``target``.

    The integrator resistor is set so that the overall gain equals ``gain``.
    Returns ``(params, density)``.
    """
    best = None
    for g_m in g_m_grid:
        for c_f in c_f_grid:
            for t_int in t_int_grid:
                r_int = r_f * t_int / (gain * c_int)
                p = NoisePsdParams(g_m=g_m, r_f=r_f, c_f=c_f, c_par=c_par, t_int=t_int,
                                   r_int=r_int, c_int=c_int)
                d = input_referred_density(p).density
                if best is None or abs(d - target) < abs(best[1] - target):
                    best = (p, d)
    return best


@dataclass(frozen=True)
class SweepRow:
    c_par_f: float
    var_ztia_v2: float
    var_ctia_v2: float
    irn_a_rthz: float


SWEEP_COLUMNS = ("c_par_f", "var_ztia_v2", "var_ctia_v2", "irn_a_rthz")


def sweep_cpar(p, cpar_grid, band_hz=5.0, fs=100.0):
    """ZTIA vs gain-matched CTIA sample variance and ZTIA IRN density per C_par."""
    rows = []
    for c_par in cpar_grid:
        q = replace(p, c_par=float(c_par))
        vz = sample_variance("ZTIA", q)
        vc = sample_variance("CTIA_CDS", ctia_matched(q))
        density = math.sqrt(2 * vz.a2 / (fs / 2.0))
        rows.append(SweepRow(float(c_par), vz.v2, vc.v2, density))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r.c_par_f), repr(r.var_ztia_v2), repr(r.var_ctia_v2), repr(r.irn_a_rthz)])
    return path
