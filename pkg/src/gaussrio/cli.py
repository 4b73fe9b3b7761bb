"""Command-line entry point: ``gaussrio {run,synth,eval,fit}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, add_config_flags, collect_flag_overrides, dump_config, load_config
from .dataset import DatasetError, load_dataset, read_scan, read_trajectory, write_dataset, write_trajectory
from .evaluation import DEFAULT_LENGTHS, absolute_trajectory_error, associate, evaluate_relative_errors
from .gaussian_model import ModelFitError, fit_model, init_model, model_loss, assign_points, write_model
from .odometry import OdometryConfig, run_odometry
from .synth import SynthConfig, generate_synthetic

log = logging.getLogger("gaussrio")


def _config(cls, args):
    return load_config(cls, args.config, collect_flag_overrides(args))


def cmd_run(args) -> int:
    cfg = _config(OdometryConfig, args)
    ds = load_dataset(args.dataset, cfg.doppler_sign)
    if ds.empty_scans:
        log.warning("%d empty scan(s) will be skipped", len(ds.empty_scans))
    res = run_odometry(ds, cfg)
    write_trajectory(res.trajectory, args.output)
    s = res.stats
    log.info(
        "%d scans, %d egovelocity updates, %d scan-match updates (%d rejected), %d keyframes",
        s.scans, s.egovel_updates, s.scanmatch_updates, s.scanmatch_rejections, s.keyframes,
    )
    if ds.groundtruth is not None and len(ds.groundtruth) >= 2:
        log.info("ATE against bundled ground truth: %.4f m", absolute_trajectory_error(res.trajectory, ds.groundtruth))
    return 0


def cmd_synth(args) -> int:
    cfg = _config(SynthConfig, args)
    ds = generate_synthetic(cfg)
    out = Path(args.output)
    write_dataset(ds, out)
    (out / "synth.cfg").write_text(dump_config(cfg))
    log.info("wrote %d IMU samples and %d scans to %s", len(ds.imu), len(ds.scans), out)
    return 0


def cmd_eval(args) -> int:
    est = read_trajectory(args.estimate)
    ref = read_trajectory(args.reference)
    lengths = args.lengths or DEFAULT_LENGTHS
    res = evaluate_relative_errors(est, ref, lengths, args.max_gap)
    ate = absolute_trajectory_error(est, ref, args.max_gap)

    print(f"{'length [m]':>10}  {'segments':>8}  {'t_rel [%]':>10}  {'r_rel [deg/m]':>13}")
    for seg in res.segments:
        print(f"{seg.length:>10.1f}  {seg.count:>8d}  {seg.t_rel_pct:>10.4f}  {seg.r_rel_deg_per_m:>13.6f}")
    print(f"{'mean':>10}  {'':>8}  {res.t_rel_pct:>10.4f}  {res.r_rel_deg_per_m:>13.6f}")
    print(f"ATE (no alignment): {ate:.4f} m")
    if all(seg.count == 0 for seg in res.segments):
        log.warning("trajectory shorter than every segment length; no relative errors computed")

    if args.csv:
        with open(args.csv, "w") as f:
            f.write("length,t_rel_pct,r_rel_deg_per_m\n")
            for seg in res.segments:
                f.write(f"{seg.length:g},{seg.t_rel_pct:.9g},{seg.r_rel_deg_per_m:.9g}\n")
    if args.dump_axes:
        ie, ir = associate(est, ref, args.max_gap)
        P, G = est.positions[ie], ref.positions[ir]
        with open(args.dump_axes, "w") as f:
            f.write("t,est_x,est_y,est_z,ref_x,ref_y,ref_z\n")
            for t, p, g in zip(est.times[ie], P, G):
                f.write(",".join(f"{v:.9g}" for v in (t, *p, *g)) + "\n")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(OdometryConfig, args)
    scan = read_scan(args.scan, cfg.doppler_sign)
    if scan.empty:
        raise DatasetError(f"{args.scan}: scan has no points")
    model = init_model(scan.positions, cfg.n_gaussians or None, cfg.s_min, cfg.s_disc, seed=cfg.seed)
    res = fit_model(model, scan.positions, cfg.fit_config())
    write_model(res.model, args.output)
    final = model_loss(res.model, assign_points(res.model, scan.positions), scan.positions).loss
    log.info("%d Gaussians fitted to %d points in %d epochs, loss %.4f", len(res.model), len(scan.positions), len(res.losses), final)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussrio", description="Gaussian-model radar-inertial odometry")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="estimate a trajectory from a dataset directory")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("-o", "--output", required=True, help="trajectory file to write")
    p.add_argument("--config", help="key = value configuration file")
    add_config_flags(p, OdometryConfig)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("output", help="dataset directory to create")
    p.add_argument("--config", help="key = value configuration file")
    add_config_flags(p, SynthConfig)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="relative and absolute errors of an estimate against a reference")
    p.add_argument("estimate")
    p.add_argument("reference")
    p.add_argument("--lengths", type=float, nargs="+", help=f"segment lengths in metres (default: {list(DEFAULT_LENGTHS)})")
    p.add_argument("--max-gap", type=float, default=0.05, help="largest time offset when associating poses")
    p.add_argument("--csv", help="write the per-length table as CSV")
    p.add_argument("--dump-axes", help="write associated per-axis positions as CSV for plotting")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", help="fit a Gaussian model to a single scan file")
    p.add_argument("scan", help="scan CSV (t,x,y,z,doppler,intensity)")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--config", help="key = value configuration file")
    add_config_flags(p, OdometryConfig)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ModelFitError, ValueError, OSError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
