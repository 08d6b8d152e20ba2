import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultrafast.forward import (
    BeamformedImage,
    GridMismatchError,
    ScattererSet,
    WindowTooShortError,
    beamform,
    compound,
    fast_frame,
    periodized_lateral_factor,
    receptor_positions,
    simulate_rf,
    trapezoid_weights,
)
from ultrafast.params import AcquisitionParams, ImagingGrid, PeriodicBox, pulse_eval
from ultrafast.psf import compounded_psf, exact_psf, relative_linf

P = AcquisitionParams()
DEPTH = 0.02
STEP = P.c0 / (8 * P.nu0)


def _grid(half=8, center=(0.0, DEPTH), step=STEP):
    return ImagingGrid(center[0] - half * step, center[1] - half * step, step, step, 2 * half + 1, 2 * half + 1)


def test_receptors_at_half_wavelength():
    r = receptor_positions(P)
    assert np.allclose(np.diff(r), P.wavelength / 2)
    assert r[0] >= -P.array_half_length - 1e-12 and r[-1] <= P.array_half_length + 1e-12


def test_empty_medium_gives_zero_traces():
    rf = simulate_rf(ScattererSet(np.zeros((0, 2))), grid=_grid())
    assert rf.traces.shape[0] == receptor_positions(P).size
    assert not np.any(rf.traces)


def test_single_scatterer_echo_time():
    z0 = 0.015
    rf = simulate_rf(ScattererSet([[0.0, z0]]))
    centre = np.argmin(np.abs(rf.receptors))
    peak = rf.times[np.abs(rf.traces[centre]).argmax()]
    # oracle: dense evaluation of |f''| around the expected delay
    dense = np.linspace(-1e-6, 1e-6, 200001)
    offset = dense[np.abs(pulse_eval(dense, 2)).argmax()]
    assert abs(peak - (2 * z0 / P.c0 + offset)) <= 1 / rf.fs
    assert abs(offset) < 1e-10


def test_rf_linearity():
    a = ScattererSet([[0.0, 0.02], [1e-3, 0.021]], [1.0, 0.5])
    b = ScattererSet([[-5e-4, 0.0195]], [2.0])
    window = (2.4e-5, 3.6e-5)
    both = simulate_rf(a.union(b), window=window).traces
    parts = simulate_rf(a, window=window).traces + simulate_rf(b, window=window).traces
    assert np.allclose(both, parts, rtol=0, atol=1e-12 * np.abs(both).max())


def test_window_too_short():
    with pytest.raises(WindowTooShortError):
        simulate_rf(ScattererSet([[0.0, 0.02]]), window=(0.0, 1e-5))


def test_zero_rf_gives_zero_image():
    g = _grid(4)
    rf = simulate_rf(ScattererSet(np.zeros((0, 2))), grid=g)
    assert not np.any(beamform(rf, grid=g).values)


def test_beamforming_is_linear():
    g = _grid(4)
    a = ScattererSet([[0.0, DEPTH]])
    b = ScattererSet([[2e-4, DEPTH + 1e-4]], [0.7])
    img = lambda s: beamform(simulate_rf(s, grid=g, window=(2.4e-5, 3.6e-5)), grid=g).values
    both = img(a.union(b))
    assert np.allclose(both, img(a) + img(b), rtol=0, atol=1e-10 * np.abs(both).max())


@pytest.mark.parametrize("theta", [0.0, 0.1])
def test_beamformed_delta_matches_exact_kernel(theta):
    g = _grid(6)
    src = (1e-4, DEPTH)
    img = beamform(simulate_rf(ScattererSet([src]), theta, grid=g), grid=g)
    X, Z = g.mesh()
    ref = exact_psf(X, Z, src[0], src[1], theta)
    assert relative_linf(ref, img.values) <= 0.03
    assert not img.clipped


def test_beamform_records_clipping():
    p = P.with_(array_half_length=2e-3)
    g = _grid(2)
    img = beamform(simulate_rf(ScattererSet([[0.0, DEPTH]]), 0.0, p, grid=g), p, grid=g)
    assert img.clipped


def test_rf_shift_covariance():
    g = _grid(8)
    img = lambda z: beamform(simulate_rf(ScattererSet([[0.0, z]]), grid=g), grid=g).values
    a, b = img(DEPTH), img(DEPTH + STEP)
    err = np.linalg.norm(b[1:] - a[:-1]) / np.linalg.norm(a[:-1])
    assert err <= 0.02


def test_compound_identity_and_constants():
    g = _grid(2)
    im = BeamformedImage(np.arange(25, dtype=complex).reshape(5, 5), g, angles=(0.0,))
    assert np.array_equal(compound([im]).values, im.values)
    consts = [BeamformedImage(np.full((5, 5), 3 + 1j), g, angles=(t,)) for t in (-0.2, -0.1, 0.0, 0.1, 0.2)]
    assert np.allclose(compound(consts).values, 3 + 1j)


def test_compound_errors():
    g, h = _grid(2), _grid(3)
    a = BeamformedImage(np.zeros(g.shape, complex), g, angles=(-0.1,))
    b = BeamformedImage(np.zeros(h.shape, complex), h, angles=(0.1,))
    with pytest.raises(GridMismatchError):
        compound([a, b])
    with pytest.raises(ValueError):
        compound([a, BeamformedImage(np.zeros(g.shape, complex), g, angles=(0.2,))])


def test_trapezoid_weights():
    w = trapezoid_weights(np.linspace(-1, 1, 5))
    assert np.allclose(w, np.array([0.5, 1, 1, 1, 0.5]) / 4)


def test_compounded_rf_matches_compounded_exact_kernel():
    g = _grid(5)
    angles = P.compounding_angles(33)
    src = ScattererSet([[0.0, DEPTH]])
    images = [beamform(simulate_rf(src, th, grid=g), grid=g) for th in angles]
    X, Z = g.mesh()
    ref = compounded_psf(X, Z - DEPTH, P.Theta, mode="exact", depth=DEPTH)
    assert relative_linf(ref, compound(images).values) <= 0.03


def test_fast_frame_single_particle_peak():
    g = _grid(3)
    p = P.with_(Theta=0.0)
    img = fast_frame(ScattererSet([[0.0, DEPTH]]), g, p, intensity=2.5, kernel="sinc")
    assert img.values[3, 3] == pytest.approx(2.5 * 2 * np.pi * P.nu0**2 * P.F, rel=1e-12)
    assert img.provenance == "convolution"


@pytest.mark.parametrize("kernel", ["sinc", "separable"])
def test_fast_frame_colocated_particles_scale_as_sqrt_n(kernel):
    g = _grid(3)
    one = fast_frame(ScattererSet([[0.0, DEPTH]]), g, kernel=kernel).values
    many = fast_frame(ScattererSet(np.tile([[0.0, DEPTH]], (9, 1))), g, kernel=kernel).values
    assert np.allclose(many, 3 * one)


def test_fast_frame_empty_and_linear():
    g = _grid(3)
    assert not np.any(fast_frame(ScattererSet(np.zeros((0, 2))), g).values)
    s = ScattererSet([[0.0, DEPTH], [1e-4, DEPTH + 5e-5]], [1.0, 0.3])
    a = fast_frame(s, g, norm=1.0).values
    assert np.allclose(fast_frame(s.scaled(2.0), g, norm=1.0).values, 2 * a)


def test_fast_frame_matches_direct_kernel_sum():
    rng = np.random.default_rng(1)
    g = _grid(6)
    pts = np.column_stack([rng.uniform(-4e-4, 4e-4, 7), DEPTH + rng.uniform(-4e-4, 4e-4, 7)])
    w = rng.uniform(0.5, 1.5, 7)
    X, Z = g.mesh()
    for kernel in ("sinc", "separable"):
        ref = sum(wk * compounded_psf(X - x, Z - z, mode=kernel) for (x, z), wk in zip(pts, w))
        got = fast_frame(ScattererSet(pts, w), g, norm=1.0, kernel=kernel).values
        assert np.allclose(got, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_periodized_lateral_factor_matches_lattice_sum():
    Lx = 2e-3
    dx = np.linspace(-Lx / 2, Lx / 2, 41)
    k = P.wavenumber
    B = lambda x: np.sinc(2 * k * P.F * x) * np.sinc(2 * k * P.Theta * x)
    ls = np.arange(-20000, 20001)
    ref = B(dx[:, None] - ls[None, :] * Lx).sum(axis=1)
    got = periodized_lateral_factor(dx, Lx, P)
    assert np.allclose(got, ref, atol=1e-5)


def test_periodized_frame_is_periodic():
    box = PeriodicBox(-1e-3, 19e-3, 2e-3, 2e-3)
    g = ImagingGrid(box.x0, box.z0, box.Lx / 16, box.Lz / 16, 16, 16)
    s = ScattererSet([[0.3e-3, 19.5e-3], [-0.8e-3, 20.6e-3]])
    shifted = ScattererSet(s.positions + [box.Lx, -box.Lz])
    for kernel in ("sinc", "separable"):
        a = fast_frame(s, g, periodized=True, box=box, kernel=kernel).values
        b = fast_frame(shifted, g, periodized=True, box=box, kernel=kernel).values
        assert np.allclose(a, b, atol=1e-9 * np.abs(a).max())


@settings(max_examples=15, deadline=None)
@given(st.integers(-4, 4), st.integers(-4, 4))
def test_fast_frame_shift_covariance(i, j):
    g = _grid(8)
    s = ScattererSet([[0.0, DEPTH], [1.5e-4, DEPTH - 1e-4]])
    a = fast_frame(s, g, kernel="sinc").values
    b = fast_frame(ScattererSet(s.positions + [i * STEP, j * STEP]), g, kernel="sinc").values
    sz = slice(max(j, 0), g.nz + min(j, 0))
    sx = slice(max(i, 0), g.nx + min(i, 0))
    tz = slice(max(-j, 0), g.nz + min(-j, 0))
    tx = slice(max(-i, 0), g.nx + min(-i, 0))
    assert np.allclose(b[sz, sx], a[tz, tx], atol=1e-9 * np.abs(a).max())


def test_energy_locality_of_compounded_image():
    g = ImagingGrid(-2e-3, DEPTH - 2e-3, 2e-5, 2e-5, 201, 201)
    img = fast_frame(ScattererSet([[0.0, DEPTH]]), g, kernel="separable").values
    X, Z = g.mesh()
    inside = (np.abs(X) <= 5e-4) & (np.abs(Z - DEPTH) <= 5e-4)
    energy = np.abs(img) ** 2
    assert energy[inside].sum() >= 0.8 * energy.sum()


def test_scatterer_set_validation():
    with pytest.raises(ValueError):
        ScattererSet([[0.0, np.nan]])
    with pytest.raises(ValueError):
        ScattererSet([[0.0, 0.02]], [1.0, 2.0])
    with pytest.raises(ValueError):
        ScattererSet([[0.0, 0.02]], label="tissue")


def test_pitch_and_sampling_self_convergence():
    g = _grid(5)
    src = ScattererSet([[1e-4, DEPTH], [-2e-4, DEPTH + 1e-4]])
    base = beamform(simulate_rf(src, 0.1, grid=g), grid=g).values
    fine = beamform(simulate_rf(src, 0.1, grid=g, fs=16 * P.nu0, pitch=P.wavelength / 4), grid=g).values
    assert np.linalg.norm(fine - base) / np.linalg.norm(fine) < 0.01
