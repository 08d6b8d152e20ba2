"""One-dimensional Gaussian limit of the dynamic speckle model.

A moving medium of many i.i.d. particles imaged through a periodic kernel
``g`` gives, in the limit, a complex Gaussian Casorati matrix ``S`` whose
second moments depend only on two correlation kernels

    C_gg(z)    = L^-1 int g(y) g(z + y) dy,
    C_ggbar(z) = L^-1 int g(y) conj(g(z + y)) dy.

With ``Delta = z_i - z_i' + D(t_j') - D(t_j)`` the displacement between the
two samples, ``E[S_ij S_i'j'] = C^2 E C_gg(Delta)`` and
``E[S_ij conj(S_i'j')] = C^2 E C_ggbar(-Delta)``.  The expectation is over the
Brownian part of ``D``; it is trivial for tissue, which moves rigidly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.stats import ks_2samp

from .params import AcquisitionParams
from .psf import _depth_factor, first_order_psf

__all__ = [
    "QuadratureOrderError",
    "DenseLimitError",
    "PSDError",
    "CorrelationKernel",
    "ModelSpec",
    "AugmentedCovariance",
    "SingularSpectrumSample",
    "periodic_kernel_1d",
    "correlation_kernel",
    "kernel_pair",
    "clutter_covariance",
    "blood_covariance",
    "assemble_V",
    "sample_gaussian",
    "singular_spectrum_experiment",
    "tail_statistic",
]

DENSE_LIMIT = 4096


class QuadratureOrderError(RuntimeError):
    """Doubling the Gauss-Hermite order moved the result beyond tolerance."""


class DenseLimitError(ValueError):
    """The requested covariance matrix is too large for dense storage."""


class PSDError(ValueError):
    """A covariance matrix has eigenvalues that are too negative."""


def periodic_kernel_1d(params=None, period=4e-3, n=None, mode="sinc"):
    """Sample the depth profile of the compounded kernel at ``x = 0``, periodized.

    Returns samples ``sum_l g(y_k + l L)`` at ``y_k = k L / n``.
    ``mode="sinc"`` uses the factorised kernel (its depth factor);
    ``mode="separable"`` uses the first-order kernel.
    """
    params = params or AcquisitionParams()
    if n is None:
        n = 1 << int(np.ceil(np.log2(16 * period / params.wavelength)))
    if mode not in ("sinc", "separable"):
        raise ValueError(f"unknown mode {mode!r}")
    y = period * np.arange(n) / n
    yc = np.mod(y + period / 2, period) - period / 2
    # the envelope is negligible beyond 4 tau pulse lengths
    reach = 4 * params.tau * params.c0 / params.nu0
    r = int(np.ceil(reach / period))
    g = np.zeros(n, dtype=complex)
    for l in range(-r, r + 1):
        shifted = yc + l * period
        if mode == "sinc":
            g += _depth_factor(shifted, params)
        else:
            g += first_order_psf(np.zeros_like(shifted), shifted, 0.0, params)
    return g


@dataclass
class CorrelationKernel:
    """A periodic correlation kernel as a Fourier series, with its samples on ``z_l = l L / n``.

    ``variant="gg"`` stores ``sum_m coef_m exp(+2 pi i m z / L)``, the
    ``"g_gbar"`` variant ``sum_m coef_m exp(-2 pi i m z / L)``.
    """

    values: np.ndarray
    period: float
    variant: str
    modes: np.ndarray
    coef: np.ndarray

    @property
    def sign(self):
        return 1.0 if self.variant == "gg" else -1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        phase = np.exp(self.sign * 2j * np.pi * np.multiply.outer(z, self.modes) / self.period)
        return phase @ self.coef


def _symmetric_coefficients(g):
    # modes -n/2..n/2; an even-length Nyquist term is split between +-n/2 so
    # that every mode has its mirror and off-grid evaluation stays a Gram form
    n = g.size
    ghat = np.fft.fftshift(np.fft.fft(g) / n)
    modes = np.arange(n) - n // 2
    if n % 2 == 0:
        ghat = np.append(ghat, ghat[0] / 2)
        ghat[0] /= 2
        modes = np.append(modes, n // 2)
    return modes, ghat


def correlation_kernel(g, variant, period, rtol=1e-14):
    """Circular correlation of a periodic kernel sampled on ``n`` uniform points.

    Fourier modes below ``rtol`` of the largest are dropped from the series.
    """
    g = np.asarray(g, dtype=complex)
    n = g.size
    modes, ghat = _symmetric_coefficients(g)
    if variant == "gg":
        coef = ghat[::-1] * ghat
    elif variant == "g_gbar":
        coef = np.abs(ghat) ** 2 + 0j
    else:
        raise ValueError("variant must be 'gg' or 'g_gbar'")
    peak = np.abs(coef).max(initial=0.0)
    keep = np.abs(coef) > rtol * peak if peak > 0 else np.zeros(modes.size, dtype=bool)
    kernel = CorrelationKernel(values=np.zeros(n, dtype=complex), period=period, variant=variant,
                               modes=modes[keep], coef=coef[keep])
    kernel.values = kernel(period * np.arange(n) / n)
    return kernel


def kernel_pair(params=None, period=4e-3, n=None, mode="sinc"):
    """``(C_gg, C_ggbar)`` for the periodized depth profile."""
    g = periodic_kernel_1d(params, period, n, mode)
    return correlation_kernel(g, "gg", period), correlation_kernel(g, "g_gbar", period)


def clutter_covariance(z, z_prime, t, t_prime, v_c, C_c, kernels):
    """``(pseudo-covariance, covariance)`` of tissue samples ``S(z, t)``, ``S(z', t')``.

    Arguments broadcast.  Tissue translates rigidly at ``v_c``.
    """
    gg, ggbar = kernels
    delta = np.asarray(z) - np.asarray(z_prime) + v_c * (np.asarray(t_prime) - np.asarray(t))
    return C_c**2 * gg(delta), C_c**2 * ggbar(-delta)


def _gaussian_average(kernel, mean, std, order):
    x, w = hermgauss(order)
    nodes = mean[..., None] + np.sqrt(2.0) * std[..., None] * x
    return (kernel(nodes) * w).sum(axis=-1) / np.sqrt(np.pi)


def blood_covariance(z, z_prime, t, t_prime, v_b, sigma_b, C_b, kernels, diffusion="additive",
                     order=64, rtol=1e-4):
    """``(pseudo-covariance, covariance)`` of blood samples.

    The displacement between the two times is ``v_b dt + sigma_b B_dt``
    (``diffusion="additive"``) or ``v_b (dt + sigma_b B_dt)``
    (``diffusion="scaled"``), with ``B_dt ~ N(0, |dt|)``.  The Gaussian
    average uses Gauss-Hermite quadrature of the given order, checked against
    twice the order.

    Raises
    ------
    QuadratureOrderError
        If the two orders differ by more than ``rtol`` times the lag-0 value.
    """
    if sigma_b < 0:
        raise ValueError("sigma_b must be nonnegative")
    if diffusion not in ("additive", "scaled"):
        raise ValueError("diffusion must be 'additive' or 'scaled'")
    gg, ggbar = kernels
    z, z_prime, t, t_prime = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, z_prime, t, t_prime)))
    dt = t_prime - t
    delta = z - z_prime + v_b * dt
    scale = sigma_b if diffusion == "additive" else v_b * sigma_b
    std = scale * np.sqrt(np.abs(dt))
    out = []
    for kernel, sign in ((gg, 1.0), (ggbar, -1.0)):
        coarse = _gaussian_average(kernel, sign * delta, std, order)
        fine = _gaussian_average(kernel, sign * delta, std, 2 * order)
        ref = abs(kernel(0.0))
        if ref > 0 and np.abs(fine - coarse).max(initial=0.0) > rtol * ref:
            raise QuadratureOrderError(
                f"Gauss-Hermite order {order} insufficient: change {np.abs(fine - coarse).max() / ref:.2e}")
        out.append(C_b**2 * fine)
    return out[0], out[1]


@dataclass(frozen=True)
class ModelSpec:
    """One population of the 1D model: rigid drift ``velocity`` plus Brownian ``sigma``."""

    label: str
    velocity: float
    sigma: float = 0.0
    intensity: float = 1.0
    diffusion: str = "additive"


@dataclass
class AugmentedCovariance:
    """``V = E[v v^H]`` for ``v = (w_1, conj w_1, w_2, conj w_2, ...)``.

    ``w_p = S[i, j]`` with ``p = i * m_t + j``.
    """

    V: np.ndarray
    m_x: int
    m_t: int
    models: tuple = ()

    @property
    def covariance(self):
        return self.V[0::2, 0::2]

    @property
    def pseudo_covariance(self):
        return self.V[0::2, 1::2]


def _pair_table(model, dz, dt, kernels, order):
    # (pseudo, cov) at every combination of distinct depth and time lags
    DZ, DT = np.meshgrid(dz, dt, indexing="ij")
    zero = np.zeros_like(DZ)
    if model.sigma == 0:
        return clutter_covariance(DZ, zero, zero, DT, model.velocity, model.intensity, kernels)
    return blood_covariance(DZ, zero, zero, DT, model.velocity, model.sigma, model.intensity, kernels,
                            diffusion=model.diffusion, order=order)


def assemble_V(models, zs, ts, kernels, dense_limit=DENSE_LIMIT, order=64):
    """Augmented covariance of the sum of independent populations on a (z, t) grid.

    Entries are computed once per distinct pair of lags ``(z_i - z_i', t_j' - t_j)``.
    """
    if isinstance(models, ModelSpec):
        models = [models]
    zs = np.asarray(zs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    m_x, m_t = zs.size, ts.size
    n = m_x * m_t
    if n > dense_limit:
        raise DenseLimitError(f"{m_x} x {m_t} samples exceed the dense limit {dense_limit}")
    dz, iz = np.unique(np.round(zs[:, None] - zs[None, :], 15), return_inverse=True)
    dt, it = np.unique(np.round(ts[None, :] - ts[:, None], 15), return_inverse=True)
    iz = iz.reshape(m_x, m_x)
    it = it.reshape(m_t, m_t)
    I = np.repeat(np.arange(m_x), m_t)
    J = np.tile(np.arange(m_t), m_x)
    rows, cols = iz[I[:, None], I[None, :]], it[J[:, None], J[None, :]]

    P = np.zeros((n, n), dtype=complex)
    R = np.zeros((n, n), dtype=complex)
    for model in models:
        pseudo, cov = _pair_table(model, dz, dt, kernels, order)
        P += pseudo[rows, cols]
        R += cov[rows, cols]
    V = np.empty((2 * n, 2 * n), dtype=complex)
    V[0::2, 0::2] = R
    V[0::2, 1::2] = P
    V[1::2, 0::2] = P.conj()
    V[1::2, 1::2] = R.conj()
    V = (V + V.conj().T) / 2
    return AugmentedCovariance(V=V, m_x=m_x, m_t=m_t, models=tuple(models))


def _sqrt_psd(V, tol):
    lam, Q = np.linalg.eigh(V)
    top = max(lam.max(initial=0.0), 0.0)
    if lam.size and lam.min() < -tol * top:
        raise PSDError(f"smallest eigenvalue {lam.min():.3e} below -{tol:g} x {top:.3e}")
    return (Q * np.sqrt(np.clip(lam, 0.0, None))) @ Q.conj().T


def sample_gaussian(cov, n_samples, seed=None, tol=1e-8, root=None):
    """Draw Casorati matrices distributed as the Gaussian limit.

    Returns an array of shape ``(n_samples, m_x, m_t)``.  The unit vector
    ``X`` carries ``(xi1 + i xi2) / sqrt 2`` and its conjugate in each
    pair of slots, so every draw of ``sqrt(V) X`` is conjugate-consistent.

    Raises
    ------
    PSDError
        If ``V`` has an eigenvalue below ``-tol`` times the largest.
    """
    rng = np.random.default_rng(seed)
    root = _sqrt_psd(cov.V, tol) if root is None else root
    n = cov.m_x * cov.m_t
    xi = rng.standard_normal((2, n, n_samples))
    X = np.empty((2 * n, n_samples), dtype=complex)
    X[0::2] = (xi[0] + 1j * xi[1]) / np.sqrt(2)
    X[1::2] = (xi[0] - 1j * xi[1]) / np.sqrt(2)
    w = (root @ X)[0::2]
    return w.T.reshape(n_samples, cov.m_x, cov.m_t)


@dataclass
class SingularSpectrumSample:
    """Singular values, one row per realization, in nonincreasing order."""

    values: np.ndarray
    label: str
    entry_variance: float
    m_x: int

    def histogram(self, bins=50, range=None):
        return np.histogram(self.values.ravel(), bins=bins, range=range)

    @property
    def tail_ratio(self):
        """Mean of ``sigma_1 / median(sigma)``."""
        return float(np.mean(self.values[:, 0] / np.median(self.values, axis=1)))


def tail_statistic(sample):
    """Mean largest singular value relative to the noise scale ``sqrt(m_x E|S_ij|^2)``."""
    return float(np.mean(sample.values[:, 0]) / np.sqrt(sample.entry_variance * sample.m_x))


def singular_spectrum_experiment(models, n_realizations, zs, ts, kernels, seed=0, noise_matched_to=None):
    """Singular-value samples of each model and of matched white noise.

    Parameters
    ----------
    models : list of ModelSpec
    noise_matched_to : str, optional
        Label of the model whose entry variance the white noise copies;
        defaults to the first model labelled ``"blood"`` (else the first).

    Returns
    -------
    dict
        ``label -> SingularSpectrumSample`` with an extra ``"noise"`` entry,
        and ``"ks_noise"`` mapping each label to the Kolmogorov-Smirnov
        distance between its pooled singular values and the noise ones.
    """
    ss = np.random.SeedSequence(seed)
    streams = ss.spawn(len(models) + 1)
    zs = np.asarray(zs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    out = {}
    for model, stream in zip(models, streams):
        cov = assemble_V(model, zs, ts, kernels)
        draws = sample_gaussian(cov, n_realizations, stream)
        var = float(np.real(np.trace(cov.covariance)) / cov.covariance.shape[0])
        sv = np.linalg.svd(draws, compute_uv=False)
        out[model.label] = SingularSpectrumSample(sv, model.label, var, zs.size)

    if noise_matched_to is None:
        noise_matched_to = next((m.label for m in models if m.label.startswith("blood")), models[0].label)
    var = out[noise_matched_to].entry_variance
    rng = np.random.default_rng(streams[-1])
    noise = np.sqrt(var / 2) * (rng.standard_normal((n_realizations, zs.size, ts.size))
                                + 1j * rng.standard_normal((n_realizations, zs.size, ts.size)))
    out["noise"] = SingularSpectrumSample(np.linalg.svd(noise, compute_uv=False), "noise", var, zs.size)
    noise_values = out["noise"].values.ravel()
    out["ks_noise"] = {label: float(ks_2samp(s.values.ravel(), noise_values).statistic)
                       for label, s in out.items() if isinstance(s, SingularSpectrumSample) and label != "noise"}
    return out
