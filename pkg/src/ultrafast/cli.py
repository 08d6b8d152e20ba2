"""Command line interface.

Every subcommand accepts ``--config`` (JSON experiment config), ``--out``
(output directory) and ``--seed``.  On success the command writes
``result.json`` into the output directory, prints it, and exits with 0.  On
failure it prints a JSON error record on stderr and exits with a nonzero
status.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import covariance as cov
from .dynamics import AffineFlow, clutter_flow
from .experiments import run_flow_experiment, run_psf_report
from .forward import ScattererSet, fast_frame
from .io import ArrayFile, ExperimentConfig, load_config, read_array, write_array, write_heatmap
from .params import ImagingGrid
from .psf import taylor_error_audit
from .recon import CasoratiMatrix, build_casorati, doppler_spectrum, power_doppler, svd_factors

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, self.prog)
        sys.exit(EXIT_USAGE)


def _emit_error(kind, message, command):
    record = {"status": "error", "error": kind, "message": str(message), "command": command}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def _config(args):
    config = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        config.simulation.seed = args.seed
    return config


def _out(args, config):
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out, result):
    result = {"status": "ok", **result}
    text = json.dumps(result, indent=2, sort_keys=True, default=float)
    (out / "result.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_psf_report(args):
    config = _config(args)
    if args.no_compounded_exact:
        config.psf["compounded_exact"] = False
    out = _out(args, config)
    return _finish(out, {"command": "psf-report", "table": run_psf_report(config, out)})


def cmd_flow_sim(args):
    config = _config(args)
    if args.K is not None:
        config.recon.K = args.K
    if args.noise is not None:
        config.simulation.noise_levels = args.noise
    out = _out(args, config)
    return _finish(out, {"command": "flow-sim", "table": run_flow_experiment(config, out)})


def _load_casorati(path):
    af = read_array(path)
    data = af.data
    if data.ndim == 3:
        # (t, z, x) frame stack
        return build_casorati(list(data)), af
    if data.ndim == 2:
        return CasoratiMatrix(data), af
    raise ValueError(f"expected a 2-D Casorati matrix or a 3-D frame stack, got shape {data.shape}")


def cmd_svd_filter(args):
    config = _config(args)
    out = _out(args, config)
    S, _ = _load_casorati(args.input)
    K = config.recon.K if args.K is None else args.K
    factors = svd_factors(S)
    pd = power_doppler(S, K, factors)
    write_array(out / "power_doppler.ufa", ArrayFile(pd.image, provenance={"K": K, "input": str(args.input)}))
    write_array(out / "singular_values.ufa", ArrayFile(factors.s, axes=("k",)))
    if pd.image_shape:
        write_heatmap(out / "power_doppler.pgm", pd.db(), units="dB", title=f"K={K}")
    return _finish(out, {"command": "svd-filter", "K": K, "shape": list(S.shape),
                         "total_power": float(pd.values.sum())})


def cmd_doppler(args):
    config = _config(args)
    out = _out(args, config)
    params = config.params().with_(n_frames=args.n_frames, prf=args.prf)
    if args.input:
        S, _ = _load_casorati(args.input)
        S.times = np.arange(S.shape[1]) / args.prf
        pixel = args.pixel
    else:
        vx, vz = (0.0, args.speed) if args.direction == "axial" else (args.speed, 0.0)
        depth = 0.02
        duration = params.n_frames / params.prf
        start = np.array([-vx * duration / 2, depth - vz * duration / 2])
        traj = clutter_flow(start, params.frame_times[:, None], AffineFlow.translation(vx, vz))
        grid = ImagingGrid(0.0, depth, 1e-4, 1e-4, 1, 1)
        frames = [fast_frame(ScattererSet(p[None]), grid, params, kernel=args.kernel) for p in traj]
        S = build_casorati(frames, params.frame_times)
        pixel = 0
    freqs, spectrum = doppler_spectrum(S, pixel)
    peak = int(np.abs(spectrum).argmax())
    write_array(out / "spectrum.ufa", ArrayFile(spectrum, axes=("frequency",),
                                                provenance={"f0": float(freqs[0]), "df": float(freqs[1] - freqs[0])}))
    return _finish(out, {"command": "doppler", "peak_frequency": float(freqs[peak]),
                         "bin_width": float(freqs[1] - freqs[0]),
                         "expected_axial": float(-2 * params.wavenumber * args.speed)})


def _grid_1d(args):
    zs = np.arange(args.mz) * args.dz
    ts = np.arange(args.mt) * args.dt
    return zs, ts


def _kernels_1d(args, config):
    return cov.kernel_pair(config.params(), args.mz * args.dz)


def cmd_covariance_1d(args):
    config = _config(args)
    out = _out(args, config)
    zs, ts = _grid_1d(args)
    model = cov.ModelSpec(args.model, args.velocity, args.sigma if args.model == "blood" else 0.0,
                          args.intensity, args.diffusion)
    V = cov.assemble_V(model, zs, ts, _kernels_1d(args, config))
    lam = np.linalg.eigvalsh(V.V)
    write_array(out / "V.ufa", ArrayFile(V.V, axes=("v", "v"), provenance={"model": model.label}))
    result = {"command": "covariance-1d", "size": V.V.shape[0],
              "min_eigenvalue_ratio": float(lam.min() / lam.max()) if lam.max() > 0 else 0.0}
    if args.samples:
        draws = cov.sample_gaussian(V, args.samples, config.simulation.seed)
        w = draws.reshape(args.samples, -1)
        v = np.empty((2 * w.shape[1], args.samples), dtype=complex)
        v[0::2], v[1::2] = w.T, w.T.conj()
        emp = v @ v.conj().T / args.samples
        result["relative_frobenius_error"] = float(np.linalg.norm(emp - V.V) / np.linalg.norm(V.V))
    return _finish(out, result)


def cmd_singvals(args):
    config = _config(args)
    out = _out(args, config)
    zs, ts = _grid_1d(args)
    models = [cov.ModelSpec(f"clutter_{v:g}", v) for v in args.clutter_speeds]
    models.append(cov.ModelSpec("blood", args.blood_speed, args.sigma, diffusion=args.diffusion))
    res = cov.singular_spectrum_experiment(models, args.realizations, zs, ts, _kernels_1d(args, config),
                                           seed=config.simulation.seed)
    samples = {k: v for k, v in res.items() if isinstance(v, cov.SingularSpectrumSample)}
    for label, sample in samples.items():
        write_array(out / f"singular_values_{label}.ufa", ArrayFile(sample.values, axes=("realization", "k")))
    return _finish(out, {"command": "singvals", "ks_vs_noise": res["ks_noise"],
                         "tail_ratio": {k: s.tail_ratio for k, s in samples.items()},
                         "tail_statistic": {k: cov.tail_statistic(s) for k, s in samples.items()}})


def cmd_audit_appendix(args):
    config = _config(args)
    out = _out(args, config)
    depths = args.depths or config.psf["audit_depths"]
    rows = [{k: float(v) for k, v in taylor_error_audit(z, config.params()).__dict__.items()} for z in depths]
    return _finish(out, {"command": "audit-appendix", "audit": rows})


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")

    parser = _Parser(prog="ultrafast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("psf-report", parents=[common], help="kernels, spectra and error tables")
    p.add_argument("--no-compounded-exact", action="store_true", help="skip the slow compounded quadrature")
    p.set_defaults(func=cmd_psf_report)

    p = sub.add_parser("flow-sim", parents=[common], help="simulate a flow movie and filter it")
    p.add_argument("--K", type=int)
    p.add_argument("--noise", type=float, nargs="+", help="noise levels as fractions of clutter RMS")
    p.set_defaults(func=cmd_flow_sim)

    p = sub.add_parser("svd-filter", parents=[common], help="power doppler of a saved Casorati matrix")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_svd_filter)

    p = sub.add_parser("doppler", parents=[common], help="temporal spectrum of a pixel")
    p.add_argument("--input", type=Path, help="Casorati matrix or frame stack; simulates a mover if absent")
    p.add_argument("--pixel", type=int, default=0)
    p.add_argument("--direction", choices=("axial", "lateral"), default="axial")
    p.add_argument("--speed", type=float, default=1e-2)
    p.add_argument("--n-frames", type=int, default=256)
    p.add_argument("--prf", type=float, default=1000.0)
    p.add_argument("--kernel", choices=("sinc", "separable"), default="sinc")
    p.set_defaults(func=cmd_doppler)

    for name, func, helptext in (("covariance-1d", cmd_covariance_1d, "assemble the 1-D augmented covariance"),
                                 ("singvals", cmd_singvals, "singular value distributions of the 1-D model")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--mz", type=int, default=32)
        p.add_argument("--mt", type=int, default=16)
        p.add_argument("--dz", type=float, default=2.5e-4)
        p.add_argument("--dt", type=float, default=1e-3)
        p.add_argument("--sigma", type=float, default=1e-3)
        p.add_argument("--diffusion", choices=("additive", "scaled"), default="additive")
        p.set_defaults(func=func)
    cv = sub.choices["covariance-1d"]
    cv.add_argument("--model", choices=("clutter", "blood"), default="clutter")
    cv.add_argument("--velocity", type=float, default=1e-2)
    cv.add_argument("--intensity", type=float, default=1.0)
    cv.add_argument("--samples", type=int, default=0)
    sv = sub.choices["singvals"]
    sv.add_argument("--clutter-speeds", type=float, nargs="+", default=[5e-3, 1e-2, 2e-2])
    sv.add_argument("--blood-speed", type=float, default=1e-2)
    sv.add_argument("--realizations", type=int, default=400)

    p = sub.add_parser("audit-appendix", parents=[common], help="truncation error audit along z = z'")
    p.add_argument("--depths", type=float, nargs="+")
    p.set_defaults(func=cmd_audit_appendix)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # reported as a machine-readable record
        _emit_error(type(exc).__name__, exc, args.command)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
