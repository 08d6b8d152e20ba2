"""Point spread functions of plane-wave imaging.

Four kernels are provided:

* :func:`exact_psf` integrates the beamforming kernel over the aperture by
  fixed-panel Gauss-Legendre quadrature;
* :func:`first_order_psf` linearises the round-trip phase at the aperture
  edges, giving a convolution kernel in ``x - x'``;
* :func:`separable_psf` further freezes ``F`` and ``theta`` inside the
  envelope, giving a product of a depth term and a lateral ``sinc``;
* :func:`compounded_psf` averages over emission angles in ``[-Theta, Theta]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .params import AcquisitionParams, chi_tilde, pulse_eval, travel_time

__all__ = [
    "QuadratureError",
    "SampledKernel",
    "ResolutionReport",
    "AuditRecord",
    "exact_psf",
    "first_order_psf",
    "separable_psf",
    "compounded_psf",
    "sample_kernel",
    "psf_spectrum",
    "relative_linf",
    "widths_at_level",
    "nominal_resolution",
    "resolution_report",
    "taylor_error_audit",
]

KINDS = ("exact", "first_order", "separable", "compounded_exact",
         "compounded_separable", "compounded_sinc")

# below this lateral offset the first-order kernel switches to its analytic limit
_SINGULAR_DX = 1e-9
_GL_ORDER = 2


class QuadratureError(RuntimeError):
    """The refinement estimate of an aperture integral exceeded its tolerance."""


def _sinc(y):
    """Unnormalised ``sin(y) / y`` with value 1 at 0."""
    return np.sinc(np.asarray(y) / np.pi)


def _panel_count(x, z, xp, zp, theta, params):
    # phase excursion of the integrand over the aperture, in pulse periods
    nodes = np.linspace(-1.0, 1.0, 65)
    u = x[..., None] + params.F * z[..., None] * nodes
    h = travel_time(x[..., None], z[..., None], u, theta, params.c0) - \
        travel_time(xp[..., None], zp[..., None], u, theta, params.c0)
    slope = np.abs(np.diff(h, axis=-1)).max(initial=0.0)
    span_periods = slope * (nodes.size - 1) * params.nu0
    # at most 1/16 of a period per panel
    return max(4, int(np.ceil(16 * span_periods)))


def _aperture_integral(x, z, xp, zp, theta, params, n_panels, chunk=4096):
    nodes, weights = leggauss(_GL_ORDER)
    edges = np.linspace(-1.0, 1.0, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * nodes).ravel()
    w = (half[:, None] * weights).ravel()

    out = np.empty(x.shape, dtype=complex)
    flat = [a.ravel() for a in (x, z, xp, zp)]
    res = out.reshape(-1)
    for start in range(0, res.size, chunk):
        sl = slice(start, start + chunk)
        xs, zs, xps, zps = (a[sl, None] for a in flat)
        halfwidth = params.F * zs
        u = xs + halfwidth * s
        h = travel_time(xs, zs, u, theta, params.c0) - travel_time(xps, zps, u, theta, params.c0)
        r = np.hypot(xps - u, zps)
        integrand = pulse_eval(h, 2, params) / (4 * np.pi * r)
        res[sl] = -(integrand * w).sum(axis=-1) * halfwidth[:, 0]
    return out


def exact_psf(x, z, x_prime, z_prime, theta=0.0, params=None, rtol=1e-3):
    """Kernel ``g_theta(x, x')``: image at ``(x, z)`` of a unit scatterer at ``(x', z')``.

    The aperture integral over ``u in [x - F z, x + F z]`` is evaluated with
    fixed Gauss-Legendre panels resolving 1/16 of a pulse period each, then
    once more with twice the panels; the refined value is returned.

    Raises
    ------
    QuadratureError
        If the two evaluations differ by more than ``rtol`` times the largest
        modulus in the batch.
    """
    params = params or AcquisitionParams()
    x, z, xp, zp = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, z, x_prime, z_prime)))
    if np.any(z <= 0) or np.any(zp <= 0):
        raise ValueError("depths must be positive")
    if params.F == 0:
        out = np.zeros(x.shape, dtype=complex)
        return out[()] if out.ndim == 0 else out
    n = _panel_count(x, z, xp, zp, theta, params)
    coarse = _aperture_integral(x, z, xp, zp, theta, params, n)
    fine = _aperture_integral(x, z, xp, zp, theta, params, 2 * n)
    scale = np.abs(fine).max(initial=0.0)
    if scale > 0 and np.abs(fine - coarse).max() > rtol * scale:
        raise QuadratureError(
            f"aperture quadrature did not converge ({np.abs(fine - coarse).max() / scale:.2e} relative)")
    return fine[()] if fine.ndim == 0 else fine


def first_order_psf(dx, dz, theta=0.0, params=None):
    """Convolution kernel obtained from first-order phases at the aperture edges."""
    params = params or AcquisitionParams()
    dx, dz = np.broadcast_arrays(np.asarray(dx, dtype=float), np.asarray(dz, dtype=float))
    c0, F = params.c0, params.F
    root = np.sqrt(1.0 + F**2)
    a = 1.0 + root * np.cos(theta)
    b_minus = root * np.sin(theta) - F
    b_plus = root * np.sin(theta) + F

    singular = np.abs(dx) < _SINGULAR_DX
    safe = np.where(singular, 1.0, dx)
    t_minus = (a * dz + b_minus * safe) / (c0 * root)
    t_plus = (a * dz + b_plus * safe) / (c0 * root)
    regular = c0 / (4 * np.pi * safe) * (pulse_eval(t_minus, 1, params) - pulse_eval(t_plus, 1, params))
    # analytic limit at dx = 0
    G = F / root
    limit = -2 * G / (4 * np.pi) * pulse_eval(a * dz / (c0 * root), 2, params)
    out = np.where(singular, limit, regular)
    return out[()] if out.ndim == 0 else out


def _depth_factor(dz, params):
    k = params.wavenumber
    return -1j * params.nu0**2 * params.F * chi_tilde(2 * k * dz, params.tau) * np.exp(4j * np.pi * k * dz)


def _lateral_factor(dx, theta, params):
    k = params.wavenumber
    return np.exp(2j * np.pi * k * theta * dx) * _sinc(2 * np.pi * k * params.F * dx)


def separable_psf(dx, dz, theta=0.0, params=None):
    """Separable approximation ``depth(dz) * lateral(dx)`` of the kernel."""
    params = params or AcquisitionParams()
    dx = np.asarray(dx, dtype=float)
    dz = np.asarray(dz, dtype=float)
    out = _depth_factor(dz, params) * _lateral_factor(dx, theta, params)
    return out[()] if np.ndim(out) == 0 else out


def compounded_psf(dx, dz, Theta=None, params=None, mode="separable", depth=0.02, n_angles=33):
    """Angle-compounded kernel over ``theta in [-Theta, Theta]``.

    ``mode`` selects the building block:

    ``"separable"``
        first-order kernel at ``theta = 0`` times ``sinc(2 pi nu0 Theta dx / c0)``;
    ``"sinc"``
        :func:`separable_psf` at ``theta = 0`` times the same ``sinc``, a
        product of a depth factor and a lateral factor;
    ``"exact"``
        trapezoid average of :func:`exact_psf` over ``n_angles`` angles, for a
        scatterer at lateral position 0 and depth ``depth``.
    """
    params = params or AcquisitionParams()
    Theta = params.Theta if Theta is None else Theta
    if Theta < 0:
        raise ValueError("Theta must be nonnegative")
    k = params.wavenumber
    dx = np.asarray(dx, dtype=float)
    dz = np.asarray(dz, dtype=float)
    if mode == "separable":
        out = first_order_psf(dx, dz, 0.0, params) * _sinc(2 * np.pi * k * Theta * dx)
    elif mode == "sinc":
        out = separable_psf(dx, dz, 0.0, params) * _sinc(2 * np.pi * k * Theta * dx)
    elif mode == "exact":
        angles = np.zeros(1) if Theta == 0 else np.linspace(-Theta, Theta, n_angles)
        weights = np.ones(angles.size)
        if angles.size > 1:
            weights[[0, -1]] = 0.5
        weights /= weights.sum()
        out = sum(w * exact_psf(dx, depth + dz, 0.0, depth, th, params)
                  for w, th in zip(weights, angles))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out[()] if np.ndim(out) == 0 else out


@dataclass
class SampledKernel:
    """A PSF sampled on a uniform grid; ``values[i, j]`` is at ``(x[j], z[i])``.

    Coordinates are displacements from the scatterer.
    """

    values: np.ndarray
    origin: tuple
    spacing: tuple
    kind: str
    params: AcquisitionParams = field(default_factory=AcquisitionParams)
    depth: float = 0.02
    theta: float = 0.0
    Theta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")

    @property
    def x(self):
        return self.origin[0] + self.spacing[0] * np.arange(self.values.shape[1])

    @property
    def z(self):
        return self.origin[1] + self.spacing[1] * np.arange(self.values.shape[0])

    def normalized(self):
        return self.values / np.abs(self.values).max()


def sample_kernel(kind, params=None, half_width=1e-3, spacing=None, depth=0.02,
                  theta=0.0, Theta=None, half_width_z=None):
    """Sample a kernel on a square patch of displacements around the scatterer.

    The default spacing ``c0 / (16 nu0)`` gives 16 samples per wavelength.
    """
    params = params or AcquisitionParams()
    spacing = params.c0 / (16 * params.nu0) if spacing is None else spacing
    Theta = params.Theta if Theta is None else Theta
    half_width_z = half_width if half_width_z is None else half_width_z
    nx = int(round(half_width / spacing))
    nz = int(round(half_width_z / spacing))
    dxs = spacing * np.arange(-nx, nx + 1)
    dzs = spacing * np.arange(-nz, nz + 1)
    DX, DZ = np.meshgrid(dxs, dzs)
    if kind == "exact":
        values = exact_psf(DX, depth + DZ, 0.0, depth, theta, params)
    elif kind == "first_order":
        values = first_order_psf(DX, DZ, theta, params)
    elif kind == "separable":
        values = separable_psf(DX, DZ, theta, params)
    elif kind.startswith("compounded_"):
        values = compounded_psf(DX, DZ, Theta, params, mode=kind[len("compounded_"):], depth=depth)
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return SampledKernel(values=np.asarray(values, dtype=complex), origin=(dxs[0], dzs[0]),
                         spacing=(spacing, spacing), kind=kind, params=params, depth=depth,
                         theta=theta, Theta=Theta if kind.startswith("compounded") else 0.0)


def psf_spectrum(kernel):
    """Approximate continuous Fourier transform of a sampled kernel.

    Returns
    -------
    spectrum : ndarray, shape ``kernel.values.shape``
        ``dx * dz * DFT`` with the origin phase applied, zero frequency centered.
    fx, fz : ndarray
        Frequency axes in cycles per meter.
    """
    values = np.asarray(kernel.values, dtype=complex)
    dx, dz = kernel.spacing
    nz, nx = values.shape
    fx = np.fft.fftshift(np.fft.fftfreq(nx, dx))
    fz = np.fft.fftshift(np.fft.fftfreq(nz, dz))
    spec = np.fft.fftshift(np.fft.fft2(values)) * dx * dz
    phase = np.exp(-2j * np.pi * (fz[:, None] * kernel.origin[1] + fx[None, :] * kernel.origin[0]))
    return spec * phase, fx, fz


def relative_linf(a, b):
    """Peak-normalised relative L-infinity distance ``max |a/|a|max - b/|b|max|``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("kernels must share a grid")
    return float(np.abs(a / np.abs(a).max() - b / np.abs(b).max()).max())


def widths_at_level(kernel, level=0.5):
    """Full widths (lateral, axial) of ``|values|`` at ``level`` times the peak.

    Measured along the row and the column through the peak, with linear
    interpolation of the crossing points.  ``level=0.5`` is the -6 dB width.
    """
    mag = np.abs(np.asarray(kernel.values))
    iz, ix = np.unravel_index(mag.argmax(), mag.shape)
    peak = mag[iz, ix]
    return (_profile_width(mag[iz, :], ix, level * peak, kernel.spacing[0]),
            _profile_width(mag[:, ix], iz, level * peak, kernel.spacing[1]))


def _profile_width(profile, center, threshold, step):
    def crossing(direction):
        i = center
        while 0 <= i + direction < profile.size and profile[i + direction] >= threshold:
            i += direction
        j = i + direction
        if not 0 <= j < profile.size:
            return i * step
        frac = (profile[i] - threshold) / (profile[i] - profile[j])
        return (i + direction * frac) * step
    return crossing(+1) - crossing(-1)


@dataclass
class ResolutionReport:
    vertical_res: float
    horizontal_res: float
    relative_Linf_error: float = 0.0


def nominal_resolution(params=None):
    """``(vertical, horizontal)`` resolution ``(0.8 c0/nu0, c0/(2 F nu0))``."""
    params = params or AcquisitionParams()
    return 0.8 * params.c0 / params.nu0, params.c0 / (2 * params.F * params.nu0)


def resolution_report(kernel, reference=None, level=0.5):
    horizontal, vertical = widths_at_level(kernel, level)
    err = 0.0 if reference is None else relative_linf(reference.values, kernel.values)
    return ResolutionReport(vertical_res=vertical, horizontal_res=horizontal, relative_Linf_error=err)


@dataclass
class AuditRecord:
    """Outcome of the truncation-error audit along ``z = z'``.

    ``max_abs_error`` compares the kernel with exact edge phases against its
    linearised form; ``quadrature_max_abs_error`` compares the full aperture
    quadrature against the linearised form (informational).
    """

    depth: float
    max_abs_error: float
    center_magnitude: float
    relative_error: float
    argmax_offset: float
    quadrature_max_abs_error: float
    quadrature_relative_error: float


def _edge_phase_kernel(x, z, params):
    # first-order kernel with the exact (untruncated) edge phases w_+-(x)
    c0, F = params.c0, params.F
    root = np.sqrt(1 + F**2)
    w_plus = (root * z - np.hypot(z, x + F * z)) / c0
    w_minus = (root * z - np.hypot(z, x - F * z)) / c0
    return c0 / (4 * np.pi * x) * (pulse_eval(w_plus, 1, params) - pulse_eval(w_minus, 1, params))


def taylor_error_audit(z, params=None, near=5e-3, far=5e-2, n_near=20001, n_far=4501,
                       n_quadrature=401):
    """Measure the error of linearising the edge phases along the line ``z = z'``.

    Evaluated at ``theta = 0`` for lateral offsets in ``(0, near]`` (dense)
    and ``(near, far]``.  The center magnitude is the analytic limit
    ``2 G |f''(0)| / (4 pi)`` with ``G = F / sqrt(1 + F^2)``.

    Raises
    ------
    ValueError
        If ``z < 1e-2`` m, outside the audited regime.
    """
    params = params or AcquisitionParams()
    if z < 1e-2:
        raise ValueError("audit requires depth z >= 1e-2 m")
    x = np.concatenate([np.linspace(near / n_near, near, n_near),
                        np.linspace(near, far, n_far)[1:]])
    err = np.abs(_edge_phase_kernel(x, z, params) - first_order_psf(x, 0.0, 0.0, params))
    G = params.F / np.sqrt(1 + params.F**2)
    center = float(abs(2 * G / (4 * np.pi) * pulse_eval(0.0, 2, params)))

    xq = np.linspace(0.0, near, n_quadrature)
    quad = exact_psf(xq, z, 0.0, z, 0.0, params)
    quad_err = float(np.abs(quad - first_order_psf(xq, 0.0, 0.0, params)).max())
    return AuditRecord(depth=z, max_abs_error=float(err.max()), center_magnitude=center,
                       relative_error=float(err.max() / center), argmax_offset=float(x[err.argmax()]),
                       quadrature_max_abs_error=quad_err, quadrature_relative_error=quad_err / center)
