import json

import numpy as np
import pytest

from ultrafast.dynamics import AffineFlow, VesselGeometry
from ultrafast.experiments import (
    reconstruct,
    run_flow_experiment,
    run_psf_report,
    simulate_flow,
    top_fraction_inside,
    vessel_mask,
)
from ultrafast.forward import ScattererSet, fast_frame
from ultrafast.io import ExperimentConfig
from ultrafast.params import ImagingGrid, PeriodicBox
from ultrafast.recon import build_casorati, contrast, power_doppler


def _config(**sim):
    d = ExperimentConfig().to_dict()
    d["simulation"].update(grid_n=16, n_frames=16, noise_levels=[0.0], **sim)
    d["medium"]["density_per_mm2"] = 40.0
    d["recon"].update(K=4, sweep=[0, 4])
    d["psf"].update(half_width=2.5e-4, compounded_exact=False, theta_sweep=[0.0], audit_depths=[0.02])
    return ExperimentConfig.from_dict(d).validate()


def test_psf_report_sweeps_every_aperture(tmp_path):
    with pytest.warns(UserWarning):
        table = run_psf_report(_config(), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert sum(n.startswith("kernel_exact_F") for n in names) == 4
    assert {r["kernel"] for r in table["kernels"]} == {"first_order", "separable"}
    assert json.loads((tmp_path / "error_table.json").read_text()) == json.loads(json.dumps(table))


def test_flow_experiment_tables(tmp_path):
    table = run_flow_experiment(_config(), tmp_path)
    assert [r["K"] for r in table["K_sweep"]] == [0, 4]
    row = table["noise_sweep"][0]
    assert 0.0 <= row["top_decile_inside"] <= 1.0 and row["contrast"] > 0


def test_simulation_is_seeded():
    a, b = simulate_flow(_config(seed=3)), simulate_flow(_config(seed=3))
    assert np.array_equal(a.frames(0.1), b.frames(0.1))
    assert not np.array_equal(a.blood, simulate_flow(_config(seed=4)).blood)


def test_noise_is_relative_to_clutter():
    seq = simulate_flow(_config())
    diff = seq.frames(0.5) - seq.frames(0.0)
    rms = np.sqrt(np.mean(np.abs(seq.clutter) ** 2))
    assert np.sqrt(np.mean(np.abs(diff) ** 2)) == pytest.approx(0.5 * rms, rel=0.05)


def test_static_mask_matches_vessel():
    box = PeriodicBox(-1e-3, 19e-3, 2e-3, 2e-3)
    g = ImagingGrid(box.x0, box.z0, 1e-4, 1e-4, 20, 20)
    v = VesselGeometry.axial(0.0, 19e-3, 21e-3, 3e-4)
    m = vessel_mask([v], g, AffineFlow.identity(), [0.0])
    assert np.array_equal(m, v.mask(g))
    moved = vessel_mask([v], g, AffineFlow.translation(vx=1e-2), [0.0, 0.05])
    assert moved.sum() > m.sum()


def test_top_fraction():
    values = np.arange(100.0)
    mask = values >= 90
    assert top_fraction_inside(values, mask) == 1.0
    assert top_fraction_inside(values, ~mask) == 0.0


def test_no_particles_gives_zero_power():
    g = ImagingGrid(-2e-4, 0.02, 1e-4, 1e-4, 5, 5)
    frames = [fast_frame(ScattererSet(np.zeros((0, 2))), g) for _ in range(6)]
    pd = power_doppler(build_casorati(frames), 2)
    assert not np.any(pd.values)
    mask = np.zeros(25, bool)
    mask[:5] = True
    assert np.isnan(contrast(pd, mask))


def test_reconstruct_scores():
    seq = simulate_flow(_config())
    res = reconstruct(seq, K=4)
    assert res.singular_values.size == 16
    assert res.power.image.shape == (16, 16)
