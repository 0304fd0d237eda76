# -*- coding: utf-8 -*-

"""
gpair.cli
~~~~~~~~~

Command-line entry point. Verbs: phantom, simulate, backproject,
reconstruct, metrics, dottest, bench, convert, maps.

Exit codes: 0 success, 2 usage error, 1 runtime error. Every run logs the
resolved AssaParams and a config echo as key=value lines on stdout.
"""

import argparse
import json
import logging
import os
import sys

from gpair.assa import compute_assa
from gpair.bench import bench_image, run_bench
from gpair.cls_def import AcousticConfig, Axis, PhantomKind, Precision
from gpair.exceptions import GpairError
from gpair.fileio import (export_raw, read_detectors, read_signals, read_volume, write_pgm, write_signals,
                          write_trace_csv, write_volume)
from gpair.geometry import (DetectorArray, VoxelGrid, VoxelImage, build_hemispherical_array,
                            build_planar_array)
from gpair.metrics import evaluate_with_maps, threshold_masks
from gpair.operators import SystemModel, adjoint_dot_test
from gpair.phantom import PhantomSpec, add_noise, generate_phantom, max_projection
from gpair.recon import ReconConfig, gpair_reconstruct, single_pass_reconstruct
from gpair.utils import DEFAULT_N_MIN, configure_runtime, log_kv
from gpair.wavefield import oracle_forward

logger = logging.getLogger("gpair")


def _triple(cast):
    def parse(text):
        try:
            values = tuple(cast(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
        if len(values) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
        return values
    return parse


def _runtime_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--deterministic", action="store_true", help="deterministic reduction order everywhere")
    p.add_argument("--precision", choices=[m.value for m in Precision], default=Precision.single.value,
                   help="pipeline precision (default: single)")
    p.add_argument("--threads", type=int, default=None, help="thread cap (default: $GPAIR_THREADS)")
    return p


def _grid_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--grid", type=_triple(int), default=(32, 32, 32), help="voxels nx,ny,nz")
    p.add_argument("--spacing", type=float, default=4e-4, help="voxel pitch in m")
    p.add_argument("--origin", type=_triple(float), default=None,
                   help="center of voxel (0,0,0) in m (default: volume centered on 0)")
    return p


def _array_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--array", choices=["planar", "hemi", "custom"], default="hemi", help="detector geometry")
    p.add_argument("--aperture", type=float, default=102.4e-3, help="planar aperture in m")
    p.add_argument("--n-side", type=int, default=32, help="planar detectors per side")
    p.add_argument("--plane-z", type=float, default=-0.01, help="planar array height in m")
    p.add_argument("--radius", type=float, default=0.02, help="hemisphere radius in m")
    p.add_argument("--center", type=_triple(float), default=(0.0, 0.0, 0.0), help="hemisphere center in m")
    p.add_argument("--n", type=int, default=64, help="hemispherical detector count")
    p.add_argument("--detectors", default=None, help="GPD1 file for --array custom")
    return p


def _acoustic_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--vs", type=float, default=1500.0, help="speed of sound in m/s")
    p.add_argument("--fs", type=float, default=20e6, help="sampling frequency in Hz")
    p.add_argument("--nt", type=int, default=512, help="samples per trace")
    p.add_argument("--t0", type=float, default=0.0, help="first-sample time in s")
    return p


def _assa_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--sigma", type=float, default=None, help="Gaussian width in m (default: spacing)")
    p.add_argument("--n-min", type=int, default=DEFAULT_N_MIN, help="minimum upsampled ticks per kernel")
    p.add_argument("--alpha-scale", type=int, default=1, help="multiplier on the adaptive alpha")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="gpair", description="Gaussian-kernel photoacoustic forward model and reconstruction")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug-level logging")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")

    runtime, grid, array, acoustic, assa = (_runtime_parent(), _grid_parent(), _array_parent(),
                                            _acoustic_parent(), _assa_parent())

    p = sub.add_parser("phantom", parents=[grid], help="generate a synthetic volume")
    p.add_argument("--kind", choices=[k.value for k in PhantomKind], default=PhantomKind.blobs.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--out", required=True, help="output GPV1 file")
    p.add_argument("--map-dir", default=None, help="also write x/y/z MAPs as PGM here")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("simulate", parents=[runtime, array, acoustic, assa], help="forward-simulate signals")
    p.add_argument("--volume", required=True, help="input GPV1 file")
    p.add_argument("--out", required=True, help="output GPS1 file")
    p.add_argument("--oracle", action="store_true", help="direct continuous-time enumeration instead of the operator")
    p.add_argument("--workers", type=int, default=1, help="oracle process-pool size")
    p.add_argument("--noise-snr", type=float, default=None, help="add noise with max|signal|/std = S")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("backproject", parents=[runtime, grid, array, assa], help="single-pass adjoint reconstruction")
    p.add_argument("--signals", required=True, help="input GPS1 file")
    p.add_argument("--out", required=True, help="output GPV1 file")
    p.add_argument("--normalize", action="store_true", help="divide by max |value|")
    p.set_defaults(handler=cmd_backproject)

    p = sub.add_parser("reconstruct", parents=[runtime, grid, array, assa], help="iterative reconstruction")
    p.add_argument("--signals", required=True, help="input GPS1 file")
    p.add_argument("--out", required=True, help="output GPV1 file")
    p.add_argument("--trace", default=None, help="convergence trace CSV")
    p.add_argument("--config", default=None, help="JSON preset; flags override it")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--eta-max", type=float, default=None)
    p.add_argument("--eta-min", type=float, default=None)
    p.add_argument("--restart-period", type=int, default=None, help="first restart period T_0")
    p.add_argument("--t-mult", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--eps-reg", type=float, default=None)
    p.add_argument("--eps-npc", type=float, default=None)
    p.add_argument("--init-backprojection", action="store_true", default=None,
                   help="start from the scaled positive part of the adjoint instead of zero")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("metrics", help="image-quality metrics")
    p.add_argument("--volume", required=True)
    p.add_argument("--reference", default=None)
    p.add_argument("--signal-mask", default=None, help="GPV1 mask, nonzero = signal")
    p.add_argument("--bg-mask", default=None, help="GPV1 mask, nonzero = background")
    p.add_argument("--auto-masks", action="store_true", help="threshold the reference (or volume) at 0.1 max")
    p.add_argument("--json", default=None, help="write the report here")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("dottest", parents=[runtime, grid, array, acoustic, assa], help="forward/adjoint dot test")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_dottest)

    p = sub.add_parser("bench", parents=[runtime, grid, array, acoustic, assa], help="per-stage timings")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("convert", help="export a gpair file as raw + text sidecar")
    p.add_argument("--input", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(handler=cmd_convert)

    p = sub.add_parser("maps", help="write x/y/z MAPs of a volume as PGM")
    p.add_argument("--volume", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_maps)
    return parser


def setup_logging(verbose=False):
    """stdout handler with bare messages for the gpair logger tree."""
    for handler in list(logger.handlers):
        if getattr(handler, "_gpair_cli", False):
            logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    handler._gpair_cli = True
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


def _echo(args):
    fields = {k: v for k, v in sorted(vars(args).items()) if not callable(v) and v is not None}
    log_kv("config", **fields)


def _grid(args):
    if args.origin is None:
        return VoxelGrid.centered(args.grid, args.spacing)
    return VoxelGrid(args.grid, args.spacing, args.origin)


def _acoustic(args):
    return AcousticConfig(v_s=args.vs, f_s=args.fs, n_t=args.nt, t0=args.t0)


def _array(args, positions=None):
    if positions is not None:
        return DetectorArray(positions)
    if args.array == "planar":
        return build_planar_array(args.aperture, args.aperture, args.n_side, args.plane_z)
    if args.array == "hemi":
        return build_hemispherical_array(args.radius, args.center, args.n)
    if not args.detectors:
        raise GpairError("--array custom needs --detectors FILE")
    return read_detectors(args.detectors)


def _runtime(args):
    configure_runtime(deterministic=args.deterministic, threads=args.threads)
    return Precision(args.precision)


def _model(args, grid, array, acoustic):
    model = SystemModel(grid, array, acoustic, sigma=args.sigma, n_min=args.n_min, alpha_scale=args.alpha_scale)
    log_kv("assa", sigma=model.sigma, **model.assa.as_dict())
    return model


def _write_maps(image, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for axis in Axis:
        path = os.path.join(out_dir, f"map_{axis}.pgm")
        write_pgm(path, max_projection(image, axis))
        log_kv("wrote", path=path)


def cmd_phantom(args):
    _echo(args)
    grid = _grid(args)
    image = generate_phantom(PhantomSpec(kind=args.kind, seed=args.seed, count=args.count), grid)
    write_volume(args.out, image)
    log_kv("wrote", path=args.out, max=float(image.values.max()))
    if args.map_dir:
        _write_maps(image, args.map_dir)
    return 0


def cmd_simulate(args):
    _echo(args)
    precision = _runtime(args)
    image = read_volume(args.volume)
    array = _array(args)
    acoustic = _acoustic(args)
    sigma = image.grid.spacing if args.sigma is None else args.sigma
    if args.oracle:
        log_kv("assa", sigma=sigma, **compute_assa(sigma, acoustic, args.n_min, args.alpha_scale).as_dict())
        signals = oracle_forward(image, array, acoustic, sigma, workers=args.workers)
    else:
        model = _model(args, image.grid, array, acoustic)
        signals = model.forward_image(VoxelImage(image.grid, image.values.astype(precision.dtype)))
    if args.noise_snr is not None:
        signals = add_noise(signals, args.noise_snr, seed=args.seed)
    write_signals(args.out, signals, positions=array.positions)
    log_kv("wrote", path=args.out, n_d=signals.n_detectors, n_t=signals.n_t)
    return 0


def _load_signals(args, precision):
    signals, positions = read_signals(args.signals)
    array = _array(args, positions)
    if array.n_detectors != signals.n_detectors:
        raise GpairError(f"{array.n_detectors} detectors but the signals have {signals.n_detectors} traces")
    data = signals.data.astype(precision.dtype)
    return data, array, signals.acoustic


def cmd_backproject(args):
    _echo(args)
    precision = _runtime(args)
    grid = _grid(args)
    data, array, acoustic = _load_signals(args, precision)
    model = _model(args, grid, array, acoustic)
    image = single_pass_reconstruct(data, grid, array, acoustic, normalize=args.normalize, model=model)
    write_volume(args.out, image)
    log_kv("wrote", path=args.out)
    return 0


def cmd_reconstruct(args):
    _echo(args)
    precision = _runtime(args)
    overrides = {"i_max": args.iters, "eta_max": args.eta_max, "eta_min": args.eta_min, "t_0": args.restart_period,
                 "t_mult": args.t_mult, "lambda": args.lam, "beta": args.beta, "eps_reg": args.eps_reg,
                 "eps_npc": args.eps_npc, "init_backprojection": args.init_backprojection,
                 "precision": precision.value}
    if args.config:
        cfg = ReconConfig.from_json(args.config, **overrides)
    else:
        cfg = ReconConfig.from_dict({}, **overrides)
    grid = _grid(args)
    data, array, acoustic = _load_signals(args, precision)
    model = _model(args, grid, array, acoustic)
    result = gpair_reconstruct(data, grid, array, acoustic, cfg, model=model)
    write_volume(args.out, result.image)
    log_kv("wrote", path=args.out, final_loss=result.final_loss)
    if args.trace:
        write_trace_csv(result.trace, args.trace)
        log_kv("wrote", path=args.trace)
    return 0


def cmd_metrics(args):
    _echo(args)
    image = read_volume(args.volume)
    ref = read_volume(args.reference) if args.reference else None
    signal_mask = bg_mask = None
    if args.signal_mask or args.bg_mask:
        if not (args.signal_mask and args.bg_mask):
            raise GpairError("--signal-mask and --bg-mask go together")
        signal_mask = read_volume(args.signal_mask).volume != 0
        bg_mask = read_volume(args.bg_mask).volume != 0
    elif args.auto_masks:
        signal_mask, bg_mask = threshold_masks(ref if ref is not None else image)
    report = evaluate_with_maps(image, ref, signal_mask, bg_mask)
    for scope, values in report.items():
        log_kv("metrics", scope=scope, **{k: v for k, v in values.items() if v is not None})
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
        log_kv("wrote", path=args.json)
    return 0


def cmd_dottest(args):
    _echo(args)
    precision = _runtime(args)
    grid = _grid(args)
    array = _array(args)
    acoustic = _acoustic(args)
    sigma = grid.spacing if args.sigma is None else args.sigma
    assa = compute_assa(sigma, acoustic, args.n_min, args.alpha_scale)
    log_kv("assa", sigma=sigma, **assa.as_dict())
    report = adjoint_dot_test(grid, array, acoustic, assa, args.trials, args.seed, sigma=sigma, dtype=precision.dtype)
    for trial, gap in enumerate(report.discrepancies):
        log_kv("dottest", trial=trial, discrepancy=gap)
    log_kv("dottest", max_discrepancy=report.max_discrepancy)
    return 0


def cmd_bench(args):
    _echo(args)
    precision = _runtime(args)
    grid = _grid(args)
    model = _model(args, grid, _array(args), _acoustic(args))
    run_bench(model, bench_image(grid, precision.dtype, args.seed), repeat=args.repeat)
    return 0


def cmd_convert(args):
    _echo(args)
    raw_path, txt_path = export_raw(args.input, args.out_prefix)
    log_kv("wrote", raw=raw_path, sidecar=txt_path)
    return 0


def cmd_maps(args):
    _echo(args)
    _write_maps(read_volume(args.volume), args.out_dir)
    return 0


def cli_main(argv=None):
    """Parse argv and dispatch to a verb.

    Returns
    -------
    - int, the process exit code
    """
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return 0 if exit_.code is None else int(exit_.code)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return 2

    setup_logging(args.verbose)
    try:
        return int(args.handler(args) or 0)
    except GpairError as error:
        logger.error("error: %s", error)
        return 1
    except OSError as error:
        logger.error("error: %s", error)
        return 1
    except Exception:
        logger.exception("unexpected failure")
        return 1
