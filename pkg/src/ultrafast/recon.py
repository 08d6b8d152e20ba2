"""Casorati matrices, SVD clutter filtering, power doppler and doppler spectra."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .forward import GridMismatchError

__all__ = [
    "CONTRAST_CAP",
    "CasoratiMatrix",
    "SVDFactors",
    "PowerDopplerMap",
    "SVDClutterFilter",
    "build_casorati",
    "svd_factors",
    "power_doppler",
    "power_doppler_residual",
    "contrast",
    "doppler_spectrum",
]

# reported when the mean outside the mask is 0 but the mean inside is not
CONTRAST_CAP = 1e12


@dataclass
class CasoratiMatrix:
    """``S[i, j] = s(x_i, t_j)``: one row per pixel, one column per frame.

    Pixels are in row-major order of the ``(nz, nx)`` image, so a column
    reshaped to ``image_shape`` is the frame.
    """

    S: np.ndarray
    times: np.ndarray | None = None
    image_shape: tuple | None = None
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=complex)
        if self.S.ndim != 2:
            raise ValueError("Casorati matrix must be 2-dimensional")
        if self.times is None:
            self.times = np.arange(self.S.shape[1], dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size != self.S.shape[1]:
            raise ValueError("one time per column is required")

    @property
    def shape(self):
        return self.S.shape

    @property
    def dt(self):
        steps = np.diff(self.times)
        if steps.size and not np.allclose(steps, steps[0], rtol=1e-9):
            raise ValueError("frame times are not uniform")
        return float(steps[0]) if steps.size else 1.0


def build_casorati(frames, times=None):
    """Stack frames (``BeamformedImage`` or 2-D arrays) as columns.

    Raises
    ------
    GridMismatchError
        If the frames do not share a grid (or a shape).
    """
    frames = list(frames)
    if not frames:
        raise ValueError("no frames")
    grids = [getattr(f, "grid", None) for f in frames]
    values = [np.asarray(getattr(f, "values", f)) for f in frames]
    if any(g != grids[0] for g in grids) or any(v.shape != values[0].shape for v in values):
        raise GridMismatchError("all frames must share one grid")
    coords = None
    if grids[0] is not None:
        X, Z = grids[0].mesh()
        coords = np.column_stack([X.ravel(), Z.ravel()])
    S = np.stack([v.ravel() for v in values], axis=1)
    return CasoratiMatrix(S, times, values[0].shape, coords)


@dataclass
class SVDFactors:
    """Thin SVD ``S = U diag(s) Vh``."""

    s: np.ndarray
    U: np.ndarray
    Vh: np.ndarray

    def reconstruct(self, K=None):
        K = self.s.size if K is None else K
        return (self.U[:, :K] * self.s[:K]) @ self.Vh[:K]


def _matrix(S):
    return S.S if isinstance(S, CasoratiMatrix) else np.asarray(S, dtype=complex)


def svd_factors(S):
    U, s, Vh = np.linalg.svd(_matrix(S), full_matrices=False)
    return SVDFactors(s, U, Vh)


@dataclass
class PowerDopplerMap:
    """Per-pixel energies ``sum_{k > K} sigma_k^2 |u_k(i)|^2``."""

    values: np.ndarray
    K: int
    image_shape: tuple | None = None
    meta: dict = field(default_factory=dict)

    @property
    def image(self):
        return self.values.reshape(self.image_shape) if self.image_shape else self.values

    def db(self):
        """Decibels relative to the smallest positive value (``-inf`` at zeros)."""
        positive = self.values[self.values > 0]
        if positive.size == 0:
            return np.full(self.values.shape, -np.inf)
        with np.errstate(divide="ignore"):
            out = 10 * np.log10(self.values / positive.min())
        return out.reshape(self.image_shape) if self.image_shape else out


def _check_K(K, rank):
    if not 0 <= K <= rank:
        raise ValueError(f"K={K} outside [0, {rank}]")


def power_doppler(S, K=20, factors=None):
    """Power doppler from the singular vectors beyond the first ``K``."""
    factors = factors or svd_factors(S)
    _check_K(K, factors.s.size)
    values = (np.abs(factors.U[:, K:]) ** 2 * factors.s[K:] ** 2).sum(axis=1)
    shape = S.image_shape if isinstance(S, CasoratiMatrix) else None
    return PowerDopplerMap(values, K, shape)


def power_doppler_residual(S, K=20, factors=None):
    """Row energies of ``S - S_K``, the residual of the best rank-``K`` fit."""
    factors = factors or svd_factors(S)
    _check_K(K, factors.s.size)
    residual = _matrix(S) - factors.reconstruct(K)
    shape = S.image_shape if isinstance(S, CasoratiMatrix) else None
    return PowerDopplerMap((np.abs(residual) ** 2).sum(axis=1), K, shape)


class SVDClutterFilter(TransformerMixin, BaseEstimator):
    """Remove the ``K`` dominant temporal components of a Casorati matrix.

    Rows are pixels (samples) and columns frames (features).  ``fit`` learns
    the top-``K`` right singular vectors; ``transform`` projects them out,
    which for the fitted matrix gives ``S - S_K``.

    Parameters
    ----------
    K : int
        Number of singular components attributed to tissue.
    """

    def __init__(self, K=20):
        self.K = K

    def fit(self, X, y=None):
        S = _matrix(X)
        if S.ndim != 2:
            raise ValueError("expected a 2-D Casorati matrix")
        factors = svd_factors(S)
        _check_K(self.K, factors.s.size)
        self.singular_values_ = factors.s
        self.components_ = factors.Vh[: self.K]
        self.n_features_in_ = S.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        S = _matrix(X)
        if S.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} frames, got {S.shape[1]}")
        V = self.components_
        return S - (S @ V.conj().T) @ V

    def power_doppler(self, X):
        """Row energies of the filtered matrix."""
        values = (np.abs(self.transform(X)) ** 2).sum(axis=1)
        shape = X.image_shape if isinstance(X, CasoratiMatrix) else None
        return PowerDopplerMap(values, self.K, shape)


def contrast(pd_map, mask):
    """Mean power inside ``mask`` over mean power outside.

    Returns ``CONTRAST_CAP`` when only the outside mean vanishes and ``nan``
    when both do.
    """
    values = np.asarray(getattr(pd_map, "values", pd_map), dtype=float).ravel()
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.shape != values.shape:
        raise ValueError("mask and map differ in size")
    if mask.all() or not mask.any():
        raise ValueError("mask must be nonempty inside and outside")
    inside, outside = values[mask].mean(), values[~mask].mean()
    if outside == 0:
        return float("nan") if inside == 0 else CONTRAST_CAP
    return float(min(inside / outside, CONTRAST_CAP))


def doppler_spectrum(S, pixel, window="hann"):
    """Windowed temporal spectrum of one pixel.

    Returns
    -------
    freqs : ndarray
        Frequencies in 1/s, increasing, zero in the middle.
    spectrum : ndarray of complex
    """
    if not isinstance(S, CasoratiMatrix):
        S = CasoratiMatrix(S)
    row = S.S[pixel]
    m_t = row.size
    if window == "hann":
        w = np.hanning(m_t)
    elif window in (None, "boxcar"):
        w = np.ones(m_t)
    else:
        raise ValueError(f"unknown window {window!r}")
    freqs = np.fft.fftshift(np.fft.fftfreq(m_t, S.dt))
    return freqs, np.fft.fftshift(np.fft.fft(row * w))
