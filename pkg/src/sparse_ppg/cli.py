"""Command-line entry point: ``sparse-ppg {run,montecarlo,noise-sweep,replay}``."""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import noise
from .config import RunConfig, load_config
from .engine import write_event_log, write_vitals
from .errors import BoundsError, ConfigError, TraceParseError
from .frontend import write_acquisition_log
from .montecarlo import run_sweep, write_sweep
from .power import AcquisitionLog, account, reduction_ratio, write_power_json
from .simulate import (effective_frontend, make_trace, run_frontend_engine, sparse_fraction,
                       split_seed)
from .synth import load_trace, save_trace

EXIT_CONFIG = 2
EXIT_TRACE = 3


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "out": args.out}
    if getattr(args, "mode", None):
        over["mode"] = args.mode
    return cfg.with_overrides(**over)


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _process(trace, cfg):
    fe_cfg = effective_frontend(cfg.frontend, cfg.ppg, cfg.snr_db)
    return run_frontend_engine(trace, fe_cfg, cfg.sparse, cfg.mode, seed=split_seed(cfg.seed)[1])


def _write_common(result, cfg, out):
    write_acquisition_log(result.frontend.log, out / "acquisition_log.csv")
    write_event_log(result.engine.log, out / "events.csv")
    reports = result.vitals(cfg.calibration)
    write_vitals(reports, out / "vitals.csv")
    log = AcquisitionLog.from_result(result)
    run_power = account(log, cfg.power)
    ref_log = AcquisitionLog.constant(log.t_start, log.t_end,
                                      [float(t) for t in result.frontend.tick_times])
    ref_power = account(ref_log, cfg.power)
    run_power.reduction_vs_reference = reduction_ratio(ref_power, run_power)
    power = {"run": run_power, "continuous_reference": ref_power}
    if any(m == "SPARSE" for _, _, m in log.mode_intervals):
        steady = account(log, cfg.power, mode="SPARSE")
        steady.reduction_vs_reference = reduction_ratio(ref_power, steady)
        power["sparse_steady_state"] = steady
    write_power_json(power, out / "power.json")
    return reports, power


def _finite_mean(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else None


def _finite_or_none(x):
    return None if math.isnan(x) else float(x)


def cmd_run(args):
    cfg = _config(args)
    out = _out_dir(cfg)
    trace = make_trace(cfg.ppg, cfg.duration_s, cfg.seed, cfg.artifacts)
    save_trace(trace, out / "trace.csv")
    result = _process(trace, cfg)
    reports, power = _write_common(result, cfg, out)
    truth = trace.truth
    hr_err = [abs(r.hr_bpm - truth.hr_in_window(r.window_start_s, r.window_end_s)) for r in reports]
    spo2_err = [abs(r.spo2_pct - cfg.ppg.spo2_true) for r in reports]
    valid = [r.valid for r in reports]
    n_ticks = result.frontend.n_ticks
    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "n_ticks": n_ticks,
        "n_triplets": len(result.fired_ticks),
        "sample_reduction": 1.0 - len(result.fired_ticks) / n_ticks,
        "sample_reduction_sparse_steady_state": _finite_or_none(1.0 - sparse_fraction(result)),
        "hr_mae_bpm": _finite_mean([e for e, ok in zip(hr_err, valid) if ok]),
        "spo2_mae_pct": _finite_mean([e for e, ok in zip(spo2_err, valid) if ok]),
        "hr_mae_all_windows_bpm": _finite_mean(hr_err),
        "spo2_mae_all_windows_pct": _finite_mean(spo2_err),
        "n_windows": len(reports),
        "n_windows_valid": sum(r.valid for r in reports),
        "transitions": [{"t_s": t, "from": a, "to": b, "reason": why}
                        for t, a, b, why in result.engine.transitions],
        "power_uW": {k: r.summary() for k, r in power.items()},
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"run: HR MAE {summary['hr_mae_bpm']} bpm, {summary['n_triplets']}/{n_ticks} triplets; "
          f"wrote {out}")
    return 0


def cmd_replay(args):
    cfg = _config(args)
    trace = load_trace(args.trace)
    out = _out_dir(cfg)
    result = _process(trace, cfg)
    _write_common(result, cfg, out)
    print(f"replay: {len(result.engine.events)} PAV events; wrote {out}")
    return 0


def cmd_montecarlo(args):
    cfg = _config(args)
    spec = cfg.sweep
    over = {}
    if args.reps is not None:
        over["reps"] = args.reps
    if args.seed is not None:
        over["seed"] = args.seed
    spec = replace(spec, **over)
    out = _out_dir(cfg)
    result = run_sweep(spec, cfg.sparse, parallel=args.parallel)
    write_sweep(result, out / "montecarlo.csv")
    worst = max((c.mean_err for c in result.cells if c.snr_db >= 32), default=None)
    summary = {"reps": spec.reps, "seed": spec.seed, "worst_mean_err_snr_ge_32": worst,
               "monotone_violations": result.monotone_violations(),
               "unlocked_runs": sum(c.unlocked for c in result.cells)}
    with open(out / "montecarlo_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"montecarlo: {len(result.cells)} cells x {spec.reps} reps; worst mean error "
          f"(SNR >= 32 dB) {worst} bpm; wrote {out}")
    return 0


def cmd_noise_sweep(args):
    cfg = _config(args)
    out = _out_dir(cfg)
    rows = noise.sweep_cpar(cfg.noise, cfg.c_par_grid)
    noise.write_sweep_csv(rows, out / "noise_sweep.csv")
    print(f"noise-sweep: {len(rows)} points; wrote {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="sparse-ppg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        if mode:
            p.add_argument("--mode", choices=("continuous", "sparse"))

    p = sub.add_parser("run", help="synthesize, acquire and process one trace")
    common(p, mode=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("montecarlo", help="sparse-mode HR error sweep")
    common(p)
    p.add_argument("--reps", type=int, help="repetitions per cell")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("noise-sweep", help="sample variance and IRN versus C_par")
    common(p)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("replay", help="process a recorded trace CSV")
    p.add_argument("trace", help="CSV with time_s,red_a,ir_a,amb_a")
    common(p, mode=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceParseError, BoundsError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE


if __name__ == "__main__":
    sys.exit(main())
