"""End-to-end pipelines behind the command line: PSF report and flow experiment."""
from __future__ import annotations

import json
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import AffineFlow, VesselGeometry, build_ensemble
from .forward import fast_frame
from .io import ArrayFile, write_array, write_heatmap
from .params import ImagingGrid, PeriodicBox
from .psf import (
    psf_spectrum,
    relative_linf,
    resolution_report,
    sample_kernel,
    taylor_error_audit,
)
from .recon import CasoratiMatrix, contrast, power_doppler, svd_factors

__all__ = [
    "FlowSequence",
    "FlowResult",
    "simulate_flow",
    "vessel_mask",
    "reconstruct",
    "top_fraction_inside",
    "run_psf_report",
    "run_flow_experiment",
]


class _Staging:
    """Write into a scratch directory and move files into ``out`` only on success."""

    def __init__(self, out):
        self.out = Path(out)

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for item in sorted(self.tmp.iterdir()):
                    target = self.out / item.name
                    if target.exists():
                        shutil.rmtree(target) if target.is_dir() else target.unlink()
                    item.rename(target)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _dump_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_kernel(path, kernel, name):
    af = ArrayFile(kernel.values, axes=("z", "x"), units={"spacing": "m"},
                   provenance={"kind": kernel.kind, "name": name, "origin": list(map(float, kernel.origin)),
                               "spacing": list(map(float, kernel.spacing)), "depth": kernel.depth,
                               "theta": kernel.theta, "Theta": kernel.Theta, "F": kernel.params.F})
    write_array(path, af)


def run_psf_report(config, out):
    """Sample kernels, their spectra, parameter sweeps and the truncation audit.

    Writes ``kernel_*.ufa``, ``spectrum_*.ufa``, ``error_table.json`` and
    ``audit.json`` into ``out``; nothing is left behind if a step fails.
    Returns the error table.
    """
    params = config.params()
    settings = config.psf
    hw, depth = settings["half_width"], settings["depth"]
    with _Staging(out) as tmp:
        kernels = {kind: sample_kernel(kind, params, hw, depth=depth)
                   for kind in ("exact", "first_order", "separable", "compounded_separable")}
        if settings.get("compounded_exact", True):
            kernels["compounded_exact"] = sample_kernel("compounded_exact", params, hw, depth=depth)
        for kind, kernel in kernels.items():
            _write_kernel(tmp / f"kernel_{kind}.ufa", kernel, kind)
        for kind in ("exact", "separable"):
            spectrum, fx, fz = psf_spectrum(kernels[kind])
            write_array(tmp / f"spectrum_{kind}.ufa",
                        ArrayFile(spectrum, axes=("xi_z", "xi_x"), units={"frequency": "1/m"},
                                  provenance={"fx0": float(fx[0]), "fz0": float(fz[0]),
                                              "dfx": float(fx[1] - fx[0]), "dfz": float(fz[1] - fz[0])}))
        for F in settings["F_sweep"]:
            k = sample_kernel("exact", params.with_(F=F), hw, depth=depth)
            _write_kernel(tmp / f"kernel_exact_F{F:g}.ufa", k, f"F={F:g}")
        for theta in settings["theta_sweep"]:
            k = sample_kernel("exact", params, hw, depth=depth, theta=theta)
            _write_kernel(tmp / f"kernel_exact_theta{theta:g}.ufa", k, f"theta={theta:g}")

        exact = kernels["exact"]
        rows = []
        for kind in ("first_order", "separable"):
            rep = resolution_report(kernels[kind], exact)
            rows.append({"reference": "exact", "kernel": kind, "relative_Linf_error": rep.relative_Linf_error,
                         "horizontal_res": rep.horizontal_res, "vertical_res": rep.vertical_res})
        if "compounded_exact" in kernels:
            rows.append({"reference": "compounded_exact", "kernel": "compounded_separable",
                         "relative_Linf_error": relative_linf(kernels["compounded_exact"].values,
                                                              kernels["compounded_separable"].values)})
        audit = []
        for z in settings["audit_depths"]:
            rec = taylor_error_audit(z, params)
            audit.append({k: float(v) for k, v in rec.__dict__.items()})
        table = {"kernels": rows, "audit": audit}
        _dump_json(tmp / "error_table.json", table)
    return table


@dataclass
class FlowSequence:
    """Simulated clutter and blood image sequences of shape ``(m_t, nz, nx)``."""

    grid: ImagingGrid
    times: np.ndarray
    clutter: np.ndarray
    blood: np.ndarray
    mask: np.ndarray
    noise: np.ndarray
    vessels: list = field(default_factory=list)

    def frames(self, noise_level=0.0):
        """Sum of both populations plus noise at ``noise_level`` times the clutter RMS."""
        rms = np.sqrt(np.mean(np.abs(self.clutter) ** 2))
        return self.clutter + self.blood + noise_level * rms * self.noise


def vessel_mask(vessels, grid, flow, times, box=None):
    """Pixels covered by some vessel, carried by the tissue flow, at any frame.

    With a periodic ``box`` the neighbouring lattice copies count too.
    """
    X, Z = grid.mesh()
    mask = np.zeros(grid.shape, dtype=bool)
    shifts = [(0.0, 0.0)] if box is None else \
        [(i * box.Lx, j * box.Lz) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    for t in times:
        for sx, sz in shifts:
            zu = Z + sz - flow.w3(t)
            xu = X + sx - flow.w2(t) - flow.w1(t) * zu
            pts = np.stack([xu, zu], axis=-1)
            for vessel in vessels:
                mask |= vessel.contains(pts)
    return mask


def _vessels_from_spec(medium):
    return [VesselGeometry(tuple(v["start"]), tuple(v["end"]), v["radius"], v.get("v_max", medium.v_max))
            for v in medium.vessels]


def _flow_from_spec(flow_spec, box, duration):
    if flow_spec.w:
        return AffineFlow.from_dict(flow_spec.w)
    if flow_spec.mean_speed == 0:
        return AffineFlow.identity()
    return AffineFlow.slow_drift(flow_spec.mean_speed, box, duration)


def simulate_flow(config, vessels=None):
    """Simulate tissue and blood sequences for ``config`` (vessels override the config's)."""
    params = config.params()
    med, sim = config.medium, config.simulation
    box = PeriodicBox(*med.box)
    n = sim.grid_n
    grid = ImagingGrid(box.x0, box.z0, box.Lx / n, box.Lz / n, n, n)
    times = params.frame_times
    duration = times[-1] + params.dt if times.size else 0.0
    flow = _flow_from_spec(config.flow, box, duration)
    vessels = _vessels_from_spec(med) if vessels is None else vessels

    seeds = np.random.SeedSequence(sim.seed).generate_state(len(vessels) + 2)
    area_mm2 = box.area * 1e6
    norm = med.density_per_mm2 * area_mm2
    clutter = build_ensemble("clutter", int(round(norm)), params, flow, box=box, seed=seeds[0],
                             intensity=med.C_c)
    bloods = [build_ensemble("blood", int(round(med.density_per_mm2 * v.area * 1e6)), params, flow,
                             vessel=v, sigma=med.sigma, seed=s, intensity=med.C_b)
              for v, s in zip(vessels, seeds[1:-1])]

    def render(ensembles):
        seq = np.zeros((times.size,) + grid.shape, dtype=complex)
        for ens in ensembles:
            for j in range(times.size):
                seq[j] += fast_frame(ens.frame(j, norm=norm), grid, params, periodized=True, box=box,
                                     norm=1.0, kernel=sim.kernel).values
        return seq

    rng = np.random.default_rng(seeds[-1])
    noise = (rng.standard_normal((times.size,) + grid.shape)
             + 1j * rng.standard_normal((times.size,) + grid.shape)) / np.sqrt(2)
    return FlowSequence(grid=grid, times=times, clutter=render([clutter]), blood=render(bloods),
                        mask=vessel_mask(vessels, grid, flow, times, box), noise=noise, vessels=vessels)


def top_fraction_inside(values, mask, quantile=0.9):
    """Fraction of pixels at or above the ``quantile`` of ``values`` that lie in ``mask``."""
    values = np.asarray(values).ravel()
    top = values >= np.quantile(values, quantile)
    return float(np.asarray(mask).ravel()[top].mean())


@dataclass
class FlowResult:
    power: object
    singular_values: np.ndarray
    contrast: float
    top_decile_inside: float


def reconstruct(seq, K=20, noise_level=0.0):
    """SVD filter one sequence and score its power doppler map against the vessel mask."""
    frames = seq.frames(noise_level)
    S = CasoratiMatrix(frames.reshape(frames.shape[0], -1).T, seq.times, seq.grid.shape)
    factors = svd_factors(S)
    pd = power_doppler(S, K, factors)
    return FlowResult(pd, factors.s, contrast(pd, seq.mask.ravel()),
                      top_fraction_inside(pd.values, seq.mask))


def run_flow_experiment(config, out):
    """Simulate, filter and score a flow sequence; write maps, spectra and tables.

    Returns the contrast table (one row per noise level).
    """
    sim, rec = config.simulation, config.recon
    seq = simulate_flow(config)
    with _Staging(out) as tmp:
        frames = seq.frames(0.0)
        write_array(tmp / "frames.ufa", ArrayFile(frames, axes=("t", "z", "x"),
                                                  provenance={"seed": sim.seed, "noise": 0.0}))
        write_array(tmp / "mask.ufa", ArrayFile(seq.mask.astype(float), axes=("z", "x")))
        rows = []
        for level in sim.noise_levels:
            res = reconstruct(seq, rec.K, level)
            tag = f"noise{level:g}"
            write_array(tmp / f"power_doppler_{tag}.ufa", ArrayFile(res.power.image, axes=("z", "x"),
                                                                     provenance={"K": rec.K, "noise": level}))
            write_heatmap(tmp / f"power_doppler_{tag}.pgm", res.power.db(), units="dB",
                          title=f"power doppler K={rec.K} noise={level:g}")
            write_array(tmp / f"singular_values_{tag}.ufa", ArrayFile(res.singular_values, axes=("k",)))
            rows.append({"noise": level, "K": rec.K, "contrast": res.contrast,
                         "contrast_db": float(10 * np.log10(res.contrast)) if res.contrast > 0 else None,
                         "top_decile_inside": res.top_decile_inside})
        sweep = []
        frames0 = frames.reshape(frames.shape[0], -1).T
        S = CasoratiMatrix(frames0, seq.times, seq.grid.shape)
        factors = svd_factors(S)
        for K in rec.sweep:
            if K <= factors.s.size:
                pd = power_doppler(S, K, factors)
                sweep.append({"K": K, "contrast": contrast(pd, seq.mask.ravel()),
                              "top_decile_inside": top_fraction_inside(pd.values, seq.mask)})
        table = {"noise_sweep": rows, "K_sweep": sweep}
        _dump_json(tmp / "contrast_table.json", table)
    return table
