"""Sparse-mode heart-rate error sweep over sine frequency and SNR."""

import csv
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from . import _validation as v
from .engine import SparseConfig
from .simulate import run_sine
from .vitals import compute_hr

DEFAULT_FREQS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_SNRS = (28.0, 32.0, 36.0, 40.0, 44.0, 48.0, 52.0, 56.0)
SWEEP_COLUMNS = ("freq_hz", "snr_db", "mean_err_bpm", "sigma_err_bpm", "reps")


@dataclass(frozen=True)
class SweepSpec:
    freq_grid: tuple = DEFAULT_FREQS
    snr_grid: tuple = DEFAULT_SNRS
    reps: int = 200
    seed: int = 0
    n_windows: int = 2

    def __post_init__(self):
        v.check_int("reps", self.reps, 1)
        v.check_int("seed", self.seed, 0)
        v.check_int("n_windows", self.n_windows, 1)
        if not self.freq_grid or not self.snr_grid:
            raise v.ConfigError("freq_grid", "grids must be non-empty")
        for f in self.freq_grid:
            v.check_range("freq_grid", f, 0.1, 5.0)
        for s in self.snr_grid:
            v.check_finite("snr_grid", s)

    def cells(self):
        return [(i, f, s) for i, (f, s) in enumerate(
            (f, s) for f in self.freq_grid for s in self.snr_grid)]


@dataclass
class CellResult:
    freq_hz: float
    snr_db: float
    errors: np.ndarray
    unlocked: int = 0

    @property
    def reps(self):
        return len(self.errors)

    @property
    def mean_err(self):
        return float(np.mean(self.errors))

    @property
    def sigma_err(self):
        return float(np.std(self.errors, ddof=1)) if self.reps > 1 else 0.0

    @property
    def std_error(self):
        return self.sigma_err / math.sqrt(self.reps)


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list = field(default_factory=list)

    def cell(self, freq, snr):
        for c in self.cells:
            if c.freq_hz == freq and c.snr_db == snr:
                return c
        raise KeyError((freq, snr))

    def monotone_violations(self, n_sigma=2.0):
        """``(freq, snr_lo, snr_hi)`` where error rises with SNR beyond ``n_sigma``."""
        bad = []
        for f in self.spec.freq_grid:
            row = sorted((c for c in self.cells if c.freq_hz == f), key=lambda c: c.snr_db)
            for lo, hi in zip(row, row[1:]):
                se = math.hypot(lo.std_error, hi.std_error)
                if hi.mean_err > lo.mean_err + n_sigma * se:
                    bad.append((f, lo.snr_db, hi.snr_db))
        return bad


def rep_seed(master, cell_index, rep):
    return np.random.SeedSequence(master, spawn_key=(cell_index, rep))


def hr_error(freq_hz, snr_db, seed, cfg=None, n_windows=2):
    """Mean |HR error| over ``n_windows`` 8 s windows from the first SPARSE entry.

    Returns ``(error_bpm, locked)``. Without a lock (or if a window has no
    usable HR) the error is charged as the full true rate.
    """
    cfg = cfg or SparseConfig()
    win = cfg.hr_window_s
    eng, t_entry, t_end = run_sine(freq_hz, snr_db, seed, sp_cfg=cfg)
    truth = 60.0 * freq_hz
    if t_entry is None or t_entry + n_windows * win > t_end + 1e-9:
        return truth, False
    errs = []
    for j in range(n_windows):
        hr = compute_hr(eng.events, t_entry + j * win, t_entry + (j + 1) * win)
        errs.append(truth if math.isnan(hr) else abs(hr - truth))
    return float(np.mean(errs)), True


def _run_cell(args):
    index, freq, snr, reps, master, cfg, n_windows = args
    errs = np.empty(reps)
    unlocked = 0
    for r in range(reps):
        e, locked = hr_error(freq, snr, rep_seed(master, index, r), cfg, n_windows)
        errs[r] = e
        unlocked += not locked
    return index, CellResult(freq, snr, errs, unlocked)


def run_sweep(spec=None, cfg=None, parallel=1):
    """Run every cell; results do not depend on ``parallel`` or execution order."""
    spec = spec or SweepSpec()
    v.check_int("parallel", parallel, 1)
    jobs = [(i, f, s, spec.reps, spec.seed, cfg, spec.n_windows) for i, f, s in spec.cells()]
    if parallel > 1:
        with Pool(parallel) as pool:
            out = pool.map(_run_cell, jobs)
    else:
        out = [_run_cell(j) for j in jobs]
    out.sort(key=lambda x: x[0])
    return SweepResult(spec, [c for _, c in out])


def write_sweep(result, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for c in result.cells:
            w.writerow([repr(float(c.freq_hz)), repr(float(c.snr_db)), repr(c.mean_err),
                        repr(c.sigma_err), c.reps])
    return path
