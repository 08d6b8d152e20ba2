"""Born-approximation RF simulation, delay-and-sum beamforming and compounding.

Two routes lead from a medium to an image.  The RF route simulates receptor
traces with :func:`simulate_rf` and beamforms them with :func:`beamform`;
:func:`compound` then averages over emission angles.  The convolutional
route, :func:`fast_frame`, sums a compounded kernel over the particles and
is the one used for long dynamic sequences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import AcquisitionParams, ImagingGrid, PeriodicBox, pulse_eval, travel_time
from .psf import _depth_factor, compounded_psf

__all__ = [
    "WindowTooShortError",
    "GridMismatchError",
    "ScattererSet",
    "RFRecord",
    "BeamformedImage",
    "receptor_positions",
    "simulate_rf",
    "beamform",
    "compound",
    "trapezoid_weights",
    "fast_frame",
    "periodized_lateral_factor",
]

# |f''| is below 1e-15 of its peak outside |nu0 t| <= 6 tau
_SUPPORT = 6.0


class WindowTooShortError(ValueError):
    """An echo extends beyond the sampled time window."""


class GridMismatchError(ValueError):
    """Images or frames live on different pixel grids."""


@dataclass
class ScattererSet:
    """Weighted point scatterers; ``positions`` has shape ``(N, 2)`` as ``(x, z)``."""

    positions: np.ndarray
    weights: np.ndarray | None = None
    label: str = "generic"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if self.weights is None:
            self.weights = np.ones(len(self.positions))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != self.positions.shape[0]:
            raise ValueError("one weight per scatterer is required")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("scatterer positions must be finite")
        if self.label not in ("blood", "clutter", "generic"):
            raise ValueError(f"unknown label {self.label!r}")

    def __len__(self):
        return self.positions.shape[0]

    def union(self, other):
        return ScattererSet(np.vstack([self.positions, other.positions]),
                            np.concatenate([self.weights, other.weights]), "generic")

    def scaled(self, factor):
        return ScattererSet(self.positions, self.weights * factor, self.label)


@dataclass
class RFRecord:
    """Traces ``u^s(u_r, t_n)``: one row per receptor, uniform sampling in time."""

    traces: np.ndarray
    receptors: np.ndarray
    times: np.ndarray
    theta: float = 0.0

    @property
    def fs(self):
        return 1.0 / (self.times[1] - self.times[0])


@dataclass
class BeamformedImage:
    values: np.ndarray
    grid: ImagingGrid
    provenance: str = "rf"
    angles: tuple = (0.0,)
    clipped: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(f"values {self.values.shape} do not match grid {self.grid.shape}")


def receptor_positions(params, pitch=None):
    """Receptor abscissas over ``[-A, A]``; half-wavelength pitch by default."""
    pitch = params.c0 / (2 * params.nu0) if pitch is None else pitch
    n = int(np.floor(params.array_half_length / pitch + 1e-9))
    return pitch * np.arange(-n, n + 1)


def _echo_times(points, receptors, theta, params):
    return travel_time(points[:, 0, None], points[:, 1, None], receptors[None, :], theta, params.c0)


def simulate_rf(scatterers, theta=0.0, params=None, grid=None, window=None, fs=None, pitch=None,
                chunk=64):
    """Simulate the scattered field at the receptors for a plane wave at angle ``theta``.

    Parameters
    ----------
    scatterers : ScattererSet
    theta : float
    params : AcquisitionParams, optional
    grid : ImagingGrid, optional
        If given, the default window also covers every pixel's travel time
        so the record can be beamformed on this grid.
    window : (float, float), optional
        Explicit ``(t_start, t_stop)`` in seconds.
    fs : float, optional
        Sampling rate; defaults to ``8 nu0``.

    Raises
    ------
    WindowTooShortError
        If some echo support does not fit in ``window``.
    """
    params = params or AcquisitionParams()
    grid = grid or params.grid
    fs = 8 * params.nu0 if fs is None else fs
    receptors = receptor_positions(params, pitch)
    half = _SUPPORT * params.tau / params.nu0

    pts = scatterers.positions
    if np.any(pts[:, 1] <= 0):
        raise ValueError("scatterers must have positive depth")
    bounds = []
    if len(pts):
        tk = _echo_times(pts, receptors, theta, params)
        bounds.append((tk.min() - half, tk.max() + half))
    if grid is not None:
        corners = np.array([[grid.x[i], grid.z[j]] for i in (0, -1) for j in (0, -1)])
        near = np.column_stack([np.clip(receptors, grid.x[0], grid.x[-1]), np.full(receptors.size, grid.z[0])])
        tp = np.concatenate([_echo_times(corners, receptors, theta, params).ravel(),
                             _echo_times(near, receptors, theta, params).ravel()])
        bounds.append((tp.min() - half, tp.max() + half))
    if window is None:
        if not bounds:
            raise ValueError("need scatterers, a grid or an explicit window")
        window = (min(b[0] for b in bounds), max(b[1] for b in bounds))
    elif len(pts):
        if tk.min() - half < window[0] or tk.max() + half > window[1]:
            raise WindowTooShortError(
                f"echoes span [{tk.min() - half:.4e}, {tk.max() + half:.4e}] s, window is "
                f"[{window[0]:.4e}, {window[1]:.4e}] s")

    times = window[0] + np.arange(int(np.ceil((window[1] - window[0]) * fs)) + 1) / fs
    traces = np.zeros((receptors.size, times.size), dtype=complex)
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        w = scatterers.weights[start:start + chunk]
        delay = _echo_times(p, receptors, theta, params)                     # (k, r)
        dist = np.hypot(p[:, 0, None] - receptors[None, :], p[:, 1, None])   # (k, r)
        for j in range(p.shape[0]):
            lo = np.searchsorted(times, delay[j].min() - half)
            hi = np.searchsorted(times, delay[j].max() + half, side="right")
            t = times[lo:hi]
            contrib = pulse_eval(t[None, :] - delay[j][:, None], 2, params)
            traces[:, lo:hi] -= w[j] / (4 * np.pi * dist[j])[:, None] * contrib
    return RFRecord(traces=traces, receptors=receptors, times=times, theta=float(theta))


def _aperture_weights(x, z, receptors, F, limit):
    # length of each receptor cell inside [x - F z, x + F z] clipped to the array
    pitch = receptors[1] - receptors[0] if receptors.size > 1 else 1.0
    lo = np.maximum(x - F * z, -limit)[:, None]
    hi = np.minimum(x + F * z, limit)[:, None]
    left = np.maximum(receptors[None, :] - pitch / 2, lo)
    right = np.minimum(receptors[None, :] + pitch / 2, hi)
    return np.clip(right - left, 0.0, None)


def beamform(rf, params=None, grid=None, chunk=2048):
    """Delay-and-sum image ``s_theta(x) = int u^s(u, tau_x(u)) du`` over the aperture.

    The aperture integral is a sum over receptor cells, with partial cells at
    the aperture edges.  Traces are interpolated linearly after demodulation
    by ``exp(-2 pi i nu0 t)``, and remodulated at the interpolated time.
    Apertures reaching beyond the array are clipped; this is recorded in
    ``clipped``.
    """
    params = params or AcquisitionParams()
    grid = grid or params.grid
    if grid is None:
        raise ValueError("a pixel grid is required")
    nu0 = params.nu0
    A = params.array_half_length
    rec = rf.receptors
    pitch = rec[1] - rec[0] if rec.size > 1 else 1.0
    limit = min(A, rec[-1] + pitch / 2)
    baseband = rf.traces * np.exp(-2j * np.pi * nu0 * rf.times)[None, :]
    t0, dt, nt = rf.times[0], rf.times[1] - rf.times[0], rf.times.size

    X, Z = grid.mesh()
    x, z = X.ravel(), Z.ravel()
    out = np.zeros(x.size, dtype=complex)
    clipped = bool(np.any(x - params.F * z < -limit) or np.any(x + params.F * z > limit))
    for start in range(0, x.size, chunk):
        sl = slice(start, start + chunk)
        w = _aperture_weights(x[sl], z[sl], rec, params.F, limit)
        pix, r = np.nonzero(w)
        t = travel_time(x[sl][pix], z[sl][pix], rec[r], rf.theta, params.c0)
        pos = (t - t0) / dt
        if pos.size and (pos.min() < 0 or pos.max() > nt - 1):
            raise WindowTooShortError("RF window does not cover all pixel travel times")
        i0 = np.minimum(np.floor(pos).astype(int), nt - 2)
        frac = pos - i0
        val = (1 - frac) * baseband[r, i0] + frac * baseband[r, i0 + 1]
        val *= np.exp(2j * np.pi * nu0 * t) * w[pix, r]
        out[sl] = np.bincount(pix, val.real, minlength=w.shape[0]) + \
            1j * np.bincount(pix, val.imag, minlength=w.shape[0])
    return BeamformedImage(values=out.reshape(grid.shape), grid=grid, provenance="rf",
                           angles=(rf.theta,), clipped=clipped)


def trapezoid_weights(angles):
    """Normalised trapezoid weights for sorted, uniformly spaced angles."""
    angles = np.asarray(angles, dtype=float)
    w = np.ones(angles.size)
    if angles.size > 1:
        w[[0, -1]] = 0.5
    return w / w.sum()


def compound(images):
    """Angle-compounded image: trapezoid average over the angles of ``images``.

    Raises
    ------
    GridMismatchError
        If the images do not share a grid.
    """
    images = list(images)
    if not images:
        raise ValueError("no images to compound")
    grid = images[0].grid
    if any(im.grid != grid for im in images):
        raise GridMismatchError("all images must share one grid")
    angles = np.array([im.angles[0] for im in images])
    if not np.allclose(np.sort(angles), -np.sort(angles)[::-1], atol=1e-12):
        raise ValueError("angles must be symmetric about 0")
    order = np.argsort(angles)
    weights = trapezoid_weights(angles[order])
    values = sum(w * images[i].values for w, i in zip(weights, order))
    return BeamformedImage(values=values, grid=grid, provenance=images[0].provenance,
                           angles=tuple(angles[order]),
                           clipped=any(im.clipped for im in images))


def _lateral_spectrum(xi, a, b):
    # Fourier transform of sinc(2 pi a x) * sinc(2 pi b x): convolution of two boxes
    xi = np.abs(np.asarray(xi, dtype=float))
    if b == 0:
        return np.where(xi < a, 1.0, np.where(np.isclose(xi, a), 0.5, 0.0)) / (2 * a)
    overlap = np.minimum(xi + a, b) - np.maximum(xi - a, -b)
    return np.clip(overlap, 0.0, None) / (4 * a * b)


def _lateral_series(Lx, params, Theta):
    k = params.wavenumber
    a, b = k * params.F, k * Theta
    n_max = int(np.ceil((a + b) * Lx))
    n = np.arange(-n_max, n_max + 1)
    return n, _lateral_spectrum(n / Lx, a, b) / Lx


def periodized_lateral_factor(dx, Lx, params, Theta=None):
    """``sum_l B(dx - l Lx)`` with ``B(x) = sinc(2 pi k F x) sinc(2 pi k Theta x)``.

    ``B`` has a compactly supported spectrum, so the lattice sum is a finite
    Fourier series and is evaluated exactly.
    """
    Theta = params.Theta if Theta is None else Theta
    n, coef = _lateral_series(Lx, params, Theta)
    dx = np.asarray(dx, dtype=float)
    phase = np.exp(2j * np.pi * np.multiply.outer(dx, n) / Lx)
    return (phase @ coef).real


def _sinc(y):
    return np.sinc(np.asarray(y) / np.pi)


def _frame_sinc(points, weights, grid, params, Theta, box):
    # rank-structured evaluation: s = A (diag w) B^T
    k = params.wavenumber
    dz = grid.z[:, None] - points[None, :, 1]
    dx = grid.x[:, None] - points[None, :, 0]
    if box is None:
        A = _depth_factor(dz, params)
        B = _sinc(2 * np.pi * k * params.F * dx) * _sinc(2 * np.pi * k * Theta * dx)
    else:
        A = sum(_depth_factor(dz - l * box.Lz, params) for l in (-1, 0, 1))
        # the lattice sum is a short Fourier series, so B factors through it too
        n, coef = _lateral_series(box.Lx, params, Theta)
        Ex = np.exp(2j * np.pi * np.multiply.outer(grid.x, n) / box.Lx)
        Ea = np.exp(-2j * np.pi * np.multiply.outer(points[:, 0], n) / box.Lx)
        B = ((Ex * coef) @ Ea.T).real
    return (A * weights[None, :]) @ B.T


def _frame_direct(points, weights, grid, params, Theta, box, chunk=256):
    X, Z = grid.mesh()
    out = np.zeros(X.shape, dtype=complex)
    shifts = [(0.0, 0.0)] if box is None else \
        [(i * box.Lx, j * box.Lz) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        w = weights[start:start + chunk]
        for sx, sz in shifts:
            dx = X[..., None] - p[:, 0] - sx
            dz = Z[..., None] - p[:, 1] - sz
            out += (compounded_psf(dx, dz, Theta, params, mode="separable") * w).sum(axis=-1)
    return out


def fast_frame(scatterers, grid=None, params=None, periodized=False, box=None, intensity=1.0,
               norm=None, Theta=None, kernel="separable"):
    """Image of a medium by direct summation of a compounded kernel over particles.

    Computes ``s(x) = intensity * norm**-0.5 * sum_k w_k g(x - a_k)``.

    Parameters
    ----------
    scatterers : ScattererSet
    grid : ImagingGrid
    periodized : bool
        Use the kernel periodized on ``box`` (default: the box tiled by the grid).
    norm : float, optional
        Particle count in the normalisation; defaults to ``len(scatterers)``.
        Pass a common value when summing several populations.
    kernel : {"separable", "sinc"}
        ``"separable"`` is the first-order kernel times the compounding sinc;
        periodization then sums the 3x3 nearest lattice copies.  ``"sinc"`` is
        the fully factorised kernel, evaluated as a matrix product, with an
        exact lateral lattice sum.
    """
    params = params or AcquisitionParams()
    grid = grid or params.grid
    Theta = params.Theta if Theta is None else Theta
    if grid is None:
        raise ValueError("a pixel grid is required")
    n = len(scatterers)
    if n == 0:
        return BeamformedImage(np.zeros(grid.shape, dtype=complex), grid, "convolution",
                               tuple(params.compounding_angles()))
    norm = n if norm is None else norm
    if periodized and box is None:
        box = PeriodicBox.around(grid)
    box = box if periodized else None
    points = scatterers.positions if box is None else box.wrap(scatterers.positions)
    if kernel == "sinc":
        values = _frame_sinc(points, scatterers.weights, grid, params, Theta, box)
    elif kernel == "separable":
        values = _frame_direct(points, scatterers.weights, grid, params, Theta, box)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    values = values * (intensity / np.sqrt(norm))
    return BeamformedImage(values=values, grid=grid, provenance="convolution",
                           angles=(-Theta, Theta) if Theta else (0.0,),
                           meta={"kernel": kernel, "periodized": bool(periodized)})
