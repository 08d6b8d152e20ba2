"""Particle motion: affine tissue flow, Poiseuille blood flow, SDE integration.

Tissue (clutter) particles follow a global affine map

    phi_c(u, t) = [[1, w1(t)], [0, 1]] u + (w2(t), w3(t))

and blood particles follow the Euler-Maruyama discretisation of

    db = v(b) dt + sigma dB,

with ``v`` the Poiseuille profile of their vessel.  The tissue motion is then
applied on top, ``a_b(t) = phi_c(b(t), t)``.

Every particle owns a Philox stream keyed by ``(seed, particle index)``, so
trajectories do not depend on how the ensemble is chunked or ordered.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .forward import ScattererSet
from .params import AcquisitionParams, PeriodicBox

__all__ = [
    "Motion",
    "AffineFlow",
    "VesselGeometry",
    "ParticleEnsemble",
    "clutter_flow",
    "poiseuille_velocity",
    "euler_maruyama_step",
    "particle_rng",
    "build_ensemble",
]


@dataclass(frozen=True)
class Motion:
    """Scalar ``w(t) = slope t + amp (sin(2 pi freq t + phase) - sin(phase))``; ``w(0) = 0``."""

    slope: float = 0.0
    amp: float = 0.0
    freq: float = 0.0
    phase: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.slope * t + self.amp * (np.sin(2 * np.pi * self.freq * t + self.phase) - np.sin(self.phase))

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return self.slope + self.amp * 2 * np.pi * self.freq * np.cos(2 * np.pi * self.freq * t + self.phase)

    def scaled(self, factor):
        return Motion(self.slope * factor, self.amp * factor, self.freq, self.phase)


@dataclass(frozen=True)
class AffineFlow:
    """Shear ``w1`` and translations ``w2`` (lateral), ``w3`` (axial)."""

    w1: Motion = field(default_factory=Motion)
    w2: Motion = field(default_factory=Motion)
    w3: Motion = field(default_factory=Motion)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def translation(cls, vx=0.0, vz=0.0):
        return cls(Motion(), Motion(slope=vx), Motion(slope=vz))

    @classmethod
    def slow_drift(cls, mean_speed, box, duration, n_space=32, n_time=256):
        """Slowly varying translation plus shear, rescaled to a prescribed mean speed.

        The mean is of ``|d phi_c / dt|`` over ``box x [0, duration]``.
        """
        # equal lateral and axial drift so neither vessel orientation is favoured
        shape = cls(Motion(amp=0.02, freq=1.0),
                    Motion(slope=1.0, amp=0.25 / (2 * np.pi * 0.8), freq=0.8),
                    Motion(slope=1.0, amp=0.25 / (2 * np.pi * 0.6), freq=0.6, phase=np.pi / 3))
        speed = shape.mean_speed(box, duration, n_space, n_time)
        return shape.scaled(mean_speed / speed) if speed > 0 else shape

    def scaled(self, factor):
        return AffineFlow(self.w1.scaled(factor), self.w2.scaled(factor), self.w3.scaled(factor))

    def velocity(self, u, t):
        u = np.asarray(u, dtype=float)
        vx = self.w1.rate(t) * u[..., 1] + self.w2.rate(t)
        vz = np.broadcast_to(self.w3.rate(t), vx.shape)
        return np.stack([vx, vz], axis=-1)

    def mean_speed(self, box, duration, n_space=32, n_time=256):
        xs = box.x0 + box.Lx * (np.arange(n_space) + 0.5) / n_space
        zs = box.z0 + box.Lz * (np.arange(n_space) + 0.5) / n_space
        ts = duration * (np.arange(n_time) + 0.5) / n_time
        X, Z = np.meshgrid(xs, zs)
        u = np.stack([X.ravel(), Z.ravel()], axis=-1)
        speeds = [np.linalg.norm(self.velocity(u, t), axis=-1).mean() for t in ts]
        return float(np.mean(speeds))

    def to_dict(self):
        return {k: asdict(v) for k, v in (("w1", self.w1), ("w2", self.w2), ("w3", self.w3))}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: Motion(**data[k]) for k in ("w1", "w2", "w3") if k in data})


def clutter_flow(u, t, flow):
    """Apply ``phi_c(., t)`` to points ``u`` of shape ``(..., 2)``."""
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    x = u[..., 0] + flow.w1(t) * u[..., 1] + flow.w2(t)
    z = u[..., 1] + flow.w3(t)
    return np.stack([x, z], axis=-1)


@dataclass(frozen=True)
class VesselGeometry:
    """Straight vessel from ``start`` to ``end`` with radius ``radius``."""

    start: tuple
    end: tuple
    radius: float
    v_max: float = 1e-2

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("vessel radius must be positive")
        if self.length == 0:
            raise ValueError("vessel centerline has zero length")

    @classmethod
    def axial(cls, x, z_min, z_max, radius, v_max=1e-2):
        """Vessel along the depth axis, flowing toward larger depth."""
        return cls((x, z_min), (x, z_max), radius, v_max)

    @classmethod
    def lateral(cls, z, x_min, x_max, radius, v_max=1e-2):
        return cls((x_min, z), (x_max, z), radius, v_max)

    @property
    def length(self):
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def axis(self):
        return (np.asarray(self.end, dtype=float) - np.asarray(self.start, dtype=float)) / self.length

    @property
    def normal(self):
        a = self.axis
        return np.array([-a[1], a[0]])

    @property
    def area(self):
        return 2 * self.radius * self.length

    def local(self, p):
        """Axial coordinate ``s`` and signed transverse offset ``r`` of points."""
        d = np.asarray(p, dtype=float) - np.asarray(self.start, dtype=float)
        return d @ self.axis, d @ self.normal

    def from_local(self, s, r):
        return np.asarray(self.start) + np.multiply.outer(s, self.axis) + np.multiply.outer(r, self.normal)

    def contains(self, p):
        s, r = self.local(p)
        return (np.abs(r) < self.radius) & (s >= 0) & (s <= self.length)

    def mask(self, grid):
        X, Z = grid.mesh()
        return self.contains(np.stack([X, Z], axis=-1))

    def uniform(self, rng, n):
        s = rng.random(n) * self.length
        r = (2 * rng.random(n) - 1) * self.radius
        return self.from_local(s, r)

    def mean_speed(self, cross_section="pipe"):
        """Mean of the Poiseuille profile: ``v_max / 2`` over a circular pipe
        section, ``2 v_max / 3`` over a diameter (the planar strip)."""
        if cross_section == "pipe":
            return self.v_max / 2
        if cross_section == "strip":
            return 2 * self.v_max / 3
        raise ValueError(f"unknown cross section {cross_section!r}")


def poiseuille_velocity(p, vessel):
    """``v_max (1 - (r/R)^2)`` along the vessel axis for ``|r| < R``, zero outside."""
    _, r = vessel.local(p)
    speed = np.where(np.abs(r) < vessel.radius, vessel.v_max * (1 - (r / vessel.radius) ** 2), 0.0)
    return np.multiply.outer(speed, vessel.axis)


def euler_maruyama_step(b, t, dt, vessel, sigma, rng=None, noise=None):
    """One step ``b + dt v(b) + sqrt(dt) sigma X`` with ``X`` standard normal in R^2.

    ``noise`` overrides the draw from ``rng``; it must have the shape of ``b``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = np.asarray(b, dtype=float)
    if noise is None:
        noise = (rng if rng is not None else np.random.default_rng()).standard_normal(b.shape)
    return b + dt * poiseuille_velocity(b, vessel) + np.sqrt(dt) * sigma * noise


def particle_rng(seed, index):
    """Counter-based generator for one particle."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class ParticleEnsemble:
    """Trajectories ``a_k(t_j)`` of shape ``(N, m_t, 2)``."""

    trajectories: np.ndarray
    times: np.ndarray
    intensity: float
    label: str
    seed: int
    box: PeriodicBox | None = None

    def __len__(self):
        return self.trajectories.shape[0]

    def frame(self, j, norm=None):
        """Scatterers at frame ``j`` with weights ``intensity / sqrt(norm)``."""
        norm = len(self) if norm is None else norm
        w = np.full(len(self), self.intensity / np.sqrt(norm)) if len(self) else np.zeros(0)
        return ScattererSet(self.trajectories[:, j, :], w, self.label)


def _initial_and_noise(seed, n, n_steps, sampler):
    starts = np.empty((n, 2))
    noise = np.empty((n, n_steps, 2))
    for k in range(n):
        rng = particle_rng(seed, k)
        starts[k] = sampler(rng)
        noise[k] = rng.standard_normal((n_steps, 2))
    return starts, noise


def _confine(b, vessel):
    # axial exits re-enter upstream at the same transverse offset; walls reflect
    s, r = vessel.local(b)
    s = np.mod(s, vessel.length)
    R = vessel.radius
    r = np.mod(r + R, 4 * R)
    r = np.where(r > 2 * R, 4 * R - r, r) - R
    return vessel.from_local(s, r)


def build_ensemble(label, n, params=None, flow=None, box=None, vessel=None, sigma=0.0, seed=0,
                   intensity=1.0, times=None):
    """Sample an ensemble of ``n`` particles and their trajectories at frame times.

    Clutter particles start uniform on ``box`` and move with ``flow``.  Blood
    particles start uniform on the vessel, follow the SDE relative to the
    tissue, then the tissue motion is applied.
    """
    params = params or AcquisitionParams()
    flow = flow or AffineFlow.identity()
    times = params.frame_times if times is None else np.asarray(times, dtype=float)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if label not in ("blood", "clutter"):
        raise ValueError("label must be 'blood' or 'clutter'")
    if label == "blood" and vessel is None:
        raise ValueError("blood ensembles need a vessel")
    if label == "clutter" and box is None:
        raise ValueError("clutter ensembles need a box")

    m_t = times.size
    if label == "clutter":
        starts = np.empty((n, 2))
        for k in range(n):
            starts[k] = box.uniform(particle_rng(seed, k), 1)[0]
        rel = np.repeat(starts[:, None, :], m_t, axis=1)
    else:
        starts, noise = _initial_and_noise(seed, n, max(m_t - 1, 0), lambda rng: vessel.uniform(rng, 1)[0])
        rel = np.empty((n, m_t, 2))
        if m_t:
            rel[:, 0] = starts
        for j in range(m_t - 1):
            dt = times[j + 1] - times[j]
            step = euler_maruyama_step(rel[:, j], times[j], dt, vessel, sigma, noise=noise[:, j])
            rel[:, j + 1] = _confine(step, vessel)
    traj = clutter_flow(rel, times[None, :], flow) if n else np.zeros((0, m_t, 2))
    return ParticleEnsemble(traj, times, intensity, label, seed, box)
