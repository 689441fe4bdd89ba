"""Command-line harness.

::

    inekf defaults                      # print every config key with its default
    inekf simulate   --config C --seed S --out log.csv
    inekf run        --config C --log log.csv --filter inekf-right --out traj.csv
    inekf montecarlo --config C --log log.csv --runs 100 --seed S --out metrics.csv
    inekf lintest    --config C --out lin.csv
    inekf covsample  --config C --seed S --out clouds.csv

``simulate`` writes the ground truth next to the log (``log.truth.csv``);
``run`` and ``montecarlo`` pick it up from there unless ``--truth`` is
given.  Exit status is 0 on success, 1 for bad input files and 2 for usage
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, default_config_text, load_config
from .filters import FILTER_KINDS, make_filter
from .logio import LogFormatError, read_log, read_truth, write_log, write_truth
from .qekf import rot_to_quat
from .sim import SensorLog, euler_to_rot, generate, monte_carlo, uniform_init

__all__ = ["main", "build_parser", "truth_path"]

log = logging.getLogger("inekf")

TRAJECTORY_COLUMNS = (
    ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz"]
    + ["bgx", "bgy", "bgz", "bax", "bay", "baz"]
    + [f"P_{n}" for n in ("phix", "phiy", "phiz", "vx", "vy", "vz", "px", "py", "pz")]
)
METRICS_COLUMNS = ["filter", "run", "time_to_converge", "converged", "steady_tilt_deg", "final_vel_err", "final_pos_err"]


class InputError(Exception):
    """Bad input file; reported on stderr with exit status 1."""


def truth_path(log_path) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".truth.csv")


def _f(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _config(args) -> Config:
    if not args.config:
        return Config()
    try:
        return load_config(args.config)
    except ConfigError as e:
        raise InputError(f"{args.config}: {e}") from None
    except OSError as e:
        raise InputError(str(e)) from None


def _seed(args, cfg: Config) -> int:
    return cfg["seed"] if args.seed is None else args.seed


def _load_log(args, need_truth: bool):
    try:
        records = read_log(args.log)
    except LogFormatError as e:
        raise InputError(f"{args.log}: {e}") from None
    except OSError as e:
        raise InputError(str(e)) from None
    tp = Path(args.truth) if args.truth else truth_path(args.log)
    truth = None
    if tp.exists():
        try:
            truth = read_truth(tp)
        except (ValueError, IndexError) as e:
            raise InputError(f"{tp}: {e}") from None
    elif args.truth or need_truth:
        raise InputError(f"{tp}: ground truth file not found")
    return records, truth


# -- subcommands ---------------------------------------------------------------


def cmd_defaults(args) -> int:
    sys.stdout.write(default_config_text())
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec = cfg.trajectory(seed=_seed(args, cfg))
    try:
        slog = generate(spec)
    except RuntimeError as e:
        raise InputError(f"trajectory rejected: {e}") from None
    write_log(args.out, slog.records)
    write_truth(truth_path(args.out), slog.truth)
    log.info("wrote %d records to %s", len(slog.records), args.out)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    records, truth = _load_log(args, need_truth=False)
    if not records:
        raise InputError(f"{args.log}: no records")
    settings = cfg.settings()
    if truth is not None:
        R0, v0, p0 = truth.R[0], truth.v[0], truth.p[0]
        bias0 = np.r_[truth.bg[0], truth.ba[0]]
    else:
        roll, pitch, yaw = np.radians(cfg["init.rpy_deg"])
        R0, v0, p0 = euler_to_rot(yaw, pitch, roll), np.array(cfg["init.v"]), np.array(cfg["init.p"])
        bias0 = None
    flt = make_filter(args.filter, R0, v0, p0, settings, bias0)
    est = flt.run(records, keep_history=True, keep_cov=True)
    rows = []
    for k in range(len(est.t)):
        q = rot_to_quat(est.R[k])
        vals = [*q, *est.v[k], *est.p[k], *est.bg[k], *est.ba[k], *est.P_diag[k]]
        rows.append([f"{est.t[k]:.9f}"] + [_f(x) for x in vals])
    _write_csv(args.out, TRAJECTORY_COLUMNS, rows)
    if truth is not None:
        j = min(int(np.searchsorted(truth.t, est.t[-1])), len(truth.t) - 1)
        log.info("final position error %.3g m", float(np.linalg.norm(est.p[-1] - truth.p[j])))
    if flt.rejected:
        log.warning("%d updates rejected", flt.rejected)
    return 0


def cmd_montecarlo(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    kinds = list(FILTER_KINDS) if args.filter == "all" else args.filter.split(",")
    for k in kinds:
        if k not in FILTER_KINDS:
            raise _UsageError(f"unknown filter {k!r}; choose from {', '.join(FILTER_KINDS)} or all")
    if args.log:
        records, truth = _load_log(args, need_truth=True)
        slog = SensorLog(records, truth)
    else:
        slog = generate(cfg.trajectory(seed=seed))
    n = cfg["mc.runs"] if args.runs is None else args.runs
    sampler = uniform_init(cfg["mc.euler_range_deg"], cfg["mc.vel_range"])
    rows = []
    for kind in kinds:
        res = monte_carlo(
            slog,
            n,
            sampler,
            kind,
            seed=seed,
            settings=cfg.settings(),
            tilt_tol_deg=cfg["mc.tilt_tol_deg"],
            vel_tol=cfg["mc.vel_tol"],
            hold=cfg["mc.hold"],
            jobs=args.jobs or cfg["mc.jobs"],
        )
        for m in res:
            ttc = m.time_to_converge
            rows.append(
                [
                    kind,
                    m.run,
                    _f(ttc),
                    int(math.isfinite(ttc)),
                    _f(math.degrees(m.steady_tilt())),
                    _f(m.vel[-1]),
                    _f(m.pos[-1]),
                ]
            )
        ttcs = np.array([m.time_to_converge for m in res])
        log.info("%s: %d/%d converged, median %.3f s", kind, np.isfinite(ttcs).sum(), n, np.median(ttcs))
    _write_csv(args.out, METRICS_COLUMNS, rows)
    return 0


def cmd_lintest(args) -> int:
    from .experiments import imu_samples, linearization_sweep, lintest_spec

    cfg = _config(args)
    spec = lintest_spec(cfg["lintest.duration"], cfg["lintest.rate"], seed=_seed(args, cfg))
    slog = generate(spec)
    tr = slog.truth
    rows = linearization_sweep(
        imu_samples(slog.records), tr.R[0], tr.v[0], tr.p[0], cfg["lintest.s_values"], spec.gravity
    )
    _write_csv(args.out, ["s", "inekf", "qekf"], [[_f(r.s), _f(r.inekf), _f(r.qekf)] for r in rows])
    return 0


def cmd_covsample(args) -> int:
    from .experiments import covariance_clouds, covsample_spec

    cfg = _config(args)
    seed = _seed(args, cfg)
    t_sample = cfg["covsample.t_sample"]
    spec = covsample_spec(duration=t_sample, speed=cfg["covsample.speed"], seed=seed)
    clouds = covariance_clouds(
        generate(spec),
        t_sample=t_sample,
        yaw_std=math.radians(cfg["covsample.yaw_std_deg"]),
        n=cfg["covsample.n"],
        seed=seed,
        settings=cfg.settings(),
    )
    rows = []
    for name, pts in (("inekf-right", clouds.inekf), ("qekf", clouds.qekf)):
        rows += [[name, _f(x), _f(y), _f(z)] for x, y, z in pts]
    _write_csv(args.out, ["filter", "x", "y", "z"], rows)
    log.info("ring ratio: inekf %.4f, qekf %.4f", clouds.inekf_ratio, clouds.qekf_ratio)
    return 0


# -- entry point ---------------------------------------------------------------


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inekf", description="Contact-aided invariant EKF toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", required=out_required, help="output file ('-' for stdout)")

    sub.add_parser("defaults", help="print the default configuration").set_defaults(func=cmd_defaults)

    sp = sub.add_parser("simulate", help="generate a synthetic sensor log")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run one filter over a log")
    common(sp)
    sp.add_argument("--log", required=True)
    sp.add_argument("--truth", help="ground-truth CSV (default: next to the log)")
    sp.add_argument("--filter", choices=FILTER_KINDS, default="inekf-right")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("montecarlo", help="randomized-initialization sweep")
    common(sp)
    sp.add_argument("--log", help="sensor log (default: simulate from the config)")
    sp.add_argument("--truth")
    sp.add_argument("--filter", default="inekf-right,qekf", help="comma-separated kinds or 'all'")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--jobs", type=int, help="worker processes")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("lintest", help="linearization exactness sweep")
    common(sp)
    sp.set_defaults(func=cmd_lintest)

    sp = sub.add_parser("covsample", help="sample position clouds under a large yaw prior")
    common(sp)
    sp.set_defaults(func=cmd_covsample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    if getattr(args, "runs", None) is not None and args.runs < 1:
        parser.error("--runs must be positive")
    try:
        return args.func(args)
    except _UsageError as e:
        parser.error(str(e))
    except InputError as e:
        print(f"inekf: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        # unwritable output path
        print(f"inekf: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
