"""Physical parameters, the emitted pulse and its derivatives, travel times.

The incident waveform is a Gaussian-modulated complex exponential

    f(t) = exp(2 pi i nu0 t) * chi(nu0 t),    chi(u) = exp(-u**2 / tau**2)

and ``f'(t) = nu0 exp(2 pi i nu0 t) chi_tilde(nu0 t)`` with
``chi_tilde = 2 pi i chi + chi'``.  Everything is double precision: ``|f''|``
reaches ~1e15 for the default parameters.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "AcquisitionParams",
    "ImagingGrid",
    "PeriodicBox",
    "chi",
    "chi_prime",
    "chi_tilde",
    "chi_tilde_prime",
    "pulse_eval",
    "travel_time",
]


@dataclass(frozen=True)
class ImagingGrid:
    """Uniform pixel grid; images are stored as ``(nz, nx)`` arrays."""

    x0: float
    z0: float
    dx: float
    dz: float
    nx: int
    nz: int

    def __post_init__(self):
        if self.dx <= 0 or self.dz <= 0:
            raise ValueError("grid spacing must be positive")
        if self.nx < 1 or self.nz < 1:
            raise ValueError("grid must contain at least one pixel")
        if self.z0 <= 0:
            raise ValueError("all pixel depths must be positive")

    @classmethod
    def centered(cls, center_x, center_z, half_width, spacing):
        """Square grid of odd size whose middle pixel sits at the center."""
        n = int(round(half_width / spacing))
        return cls(x0=center_x - n * spacing, z0=center_z - n * spacing,
                   dx=spacing, dz=spacing, nx=2 * n + 1, nz=2 * n + 1)

    @property
    def x(self):
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def z(self):
        return self.z0 + self.dz * np.arange(self.nz)

    @property
    def shape(self):
        return (self.nz, self.nx)

    def mesh(self):
        """Return ``(X, Z)`` coordinate arrays of shape ``(nz, nx)``."""
        return np.meshgrid(self.x, self.z)


@dataclass(frozen=True)
class PeriodicBox:
    """Rectangle ``[x0, x0 + Lx) x [z0, z0 + Lz)`` with periodic identification."""

    x0: float
    z0: float
    Lx: float
    Lz: float

    def __post_init__(self):
        if self.Lx <= 0 or self.Lz <= 0:
            raise ValueError("box sides must be positive")

    @classmethod
    def around(cls, grid):
        """Box tiled exactly by the pixels of ``grid`` (pixel centers at cell starts)."""
        return cls(grid.x0, grid.z0, grid.nx * grid.dx, grid.nz * grid.dz)

    @property
    def area(self):
        return self.Lx * self.Lz

    @property
    def lengths(self):
        return np.array([self.Lx, self.Lz])

    @property
    def origin(self):
        return np.array([self.x0, self.z0])

    def wrap(self, points):
        """Map points of shape ``(..., 2)`` into the box."""
        points = np.asarray(points, dtype=float)
        return self.origin + np.mod(points - self.origin, self.lengths)

    def uniform(self, rng, n):
        return self.origin + rng.random((n, 2)) * self.lengths


@dataclass(frozen=True)
class AcquisitionParams:
    """Physical constants and acquisition settings.

    Parameters
    ----------
    c0 : float
        Background sound speed in m/s.
    nu0 : float
        Pulse center frequency in 1/s.
    tau : float
        Dimensionless pulse width.
    F : float
        Aperture parameter; receptors in ``[x - F z, x + F z]`` image ``(x, z)``.
    theta_list : tuple of float
        Plane-wave emission angles (radians).
    Theta : float
        Half range of the angles used for compounding.
    array_half_length : float
        Half length ``A`` of the receptor array, in m.
    prf : float
        Frame rate in 1/s; frame times are ``j / prf``.
    n_frames : int
        Number of frames of a dynamic acquisition.
    """

    c0: float = 1.5e3
    nu0: float = 6e6
    tau: float = 1.0
    F: float = 0.4
    theta_list: tuple = (0.0,)
    Theta: float = 0.25
    array_half_length: float = 0.02
    prf: float = 1000.0
    n_frames: int = 128
    grid: ImagingGrid | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.c0 <= 0 or self.nu0 <= 0 or self.tau <= 0:
            raise ValueError("c0, nu0 and tau must be positive")
        if self.F < 0 or self.Theta < 0:
            raise ValueError("F and Theta must be nonnegative")
        if self.prf <= 0 or self.n_frames < 1:
            raise ValueError("prf must be positive and n_frames >= 1")
        object.__setattr__(self, "theta_list", tuple(float(t) for t in self.theta_list))
        if not 0.25 <= self.F <= 0.5:
            warnings.warn(f"aperture parameter F={self.F} outside the usual range [0.25, 0.5]",
                          stacklevel=3)
        if self.Theta > 0.25 or any(abs(t) > 0.25 for t in self.theta_list):
            warnings.warn("plane-wave angles beyond 0.25 rad", stacklevel=3)

    @property
    def wavelength(self):
        return self.c0 / self.nu0

    @property
    def wavenumber(self):
        """``nu0 / c0`` in cycles per meter."""
        return self.nu0 / self.c0

    @property
    def frame_times(self):
        return np.arange(self.n_frames) / self.prf

    @property
    def dt(self):
        return 1.0 / self.prf

    def with_(self, **changes):
        return replace(self, **changes)

    def compounding_angles(self, n_angles=33):
        """Uniform angles over ``[-Theta, Theta]`` (a single 0 when Theta is 0)."""
        if self.Theta == 0 or n_angles == 1:
            return np.zeros(1)
        return np.linspace(-self.Theta, self.Theta, n_angles)


def chi(u, tau=1.0):
    return np.exp(-(np.asarray(u) / tau) ** 2)


def chi_prime(u, tau=1.0):
    u = np.asarray(u)
    return -2.0 * u / tau**2 * chi(u, tau)


def chi_tilde(u, tau=1.0):
    """``2 pi i chi(u) + chi'(u)``."""
    u = np.asarray(u)
    c = chi(u, tau)
    return (2j * np.pi - 2.0 * u / tau**2) * c


def chi_tilde_prime(u, tau=1.0):
    u = np.asarray(u)
    c = chi(u, tau)
    d1 = -2.0 * u / tau**2 * c
    d2 = (4.0 * u**2 / tau**4 - 2.0 / tau**2) * c
    return 2j * np.pi * d1 + d2


def pulse_eval(t, order=0, params=None):
    """Evaluate the pulse ``f`` or one of its first two derivatives at ``t``.

    Parameters
    ----------
    t : float or array_like
        Time in seconds.
    order : {0, 1, 2}
    params : AcquisitionParams, optional

    Returns
    -------
    complex or ndarray of complex
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    params = params or AcquisitionParams()
    nu0, tau = params.nu0, params.tau
    u = nu0 * np.asarray(t, dtype=float)
    carrier = np.exp(2j * np.pi * u)
    if order == 0:
        out = carrier * chi(u, tau)
    elif order == 1:
        out = nu0 * carrier * chi_tilde(u, tau)
    else:
        out = nu0**2 * carrier * (2j * np.pi * chi_tilde(u, tau) + chi_tilde_prime(u, tau))
    return out[()] if out.ndim == 0 else out


def travel_time(x, z, u, theta=0.0, c0=1.5e3):
    """Round-trip time from the plane wave front to ``(x, z)`` and back to ``(u, 0)``.

    All arguments broadcast.  ``k_theta = (sin theta, cos theta)`` exactly.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    return (x * np.sin(theta) + z * np.cos(theta) + np.hypot(x - u, z)) / c0
