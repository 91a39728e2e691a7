"""Synthetic phased-array acquisition: phantoms, coils, correlated noise.

Spatial coordinates are normalized to [-1, 1] on both axes regardless of
grid size, so specs are resolution independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import check_covariance, check_mask, check_stack

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "CoilSpec",
    "NoiseSpec",
    "make_phantom",
    "make_sensitivities",
    "make_mask",
    "make_noise_covariance",
    "sample_noise",
    "synthesize_acquisition",
    "random_phantom_spec",
]


@dataclass(frozen=True)
class Ellipse:
    """One phantom ellipse: center, semi-axes and rotation in normalized coords."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0  # radians, counterclockwise
    amplitude: complex = 1.0

    def contains(self, x, y):
        """Boolean inside-test, vectorized over coordinate arrays."""
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = c * (x - self.cx) + s * (y - self.cy)
        v = -s * (x - self.cx) + c * (y - self.cy)
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    grid_size: int
    ellipses: tuple = ()
    background: complex = 0.0

    def __post_init__(self):
        if self.grid_size < 8:
            raise ValueError(f"grid_size must be >= 8, got {self.grid_size}")
        if len(self.ellipses) < 1:
            raise ValueError("phantom needs at least one ellipse")


@dataclass(frozen=True)
class CoilSpec:
    """Synthetic coil array: Gaussian falloff around per-channel centers."""

    centers: tuple  # ((x, y), ...) in normalized coords
    falloff: float = 1.05
    phases: tuple = ()  # per-channel constant phase, radians

    def __post_init__(self):
        if len(self.centers) < 2:
            raise ValueError("coil array needs at least 2 channels")
        if self.falloff <= 0:
            raise ValueError("falloff width must be positive")
        if self.phases and len(self.phases) != len(self.centers):
            raise ValueError("phases length must match centers")

    @property
    def n_channels(self):
        return len(self.centers)

    @classmethod
    def ring(cls, m, radius=1.1, falloff=1.05, phases=None):
        """m channels evenly spaced on a circle just outside the FOV."""
        ang = 2 * np.pi * np.arange(m) / m
        centers = tuple((radius * np.cos(t), radius * np.sin(t)) for t in ang)
        if phases is None:
            phases = tuple(float(t) for t in ang)
        return cls(centers=centers, falloff=falloff, phases=tuple(phases))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 1.0
    rho_min: float = 0.0
    rho_max: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho_min <= self.rho_max < 1.0):
            raise ValueError(f"need 0 <= rho_min <= rho_max < 1, got [{self.rho_min}, {self.rho_max}]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _grid(h, w):
    y = np.linspace(-1.0, 1.0, h)
    x = np.linspace(-1.0, 1.0, w)
    return np.meshgrid(x, y)  # (X, Y), each (h, w)


def make_phantom(spec):
    """Render a PhantomSpec to a complex (N, N) image.

    Each voxel is the sum of the amplitudes of the ellipses containing it,
    plus the background amplitude.  Deterministic.
    """
    n = spec.grid_size
    x, y = _grid(n, n)
    img = np.full((n, n), complex(spec.background), dtype=np.complex128)
    for e in spec.ellipses:
        img += np.where(e.contains(x, y), complex(e.amplitude), 0.0)
    return img


def make_sensitivities(spec, shape):
    """Gaussian-falloff sensitivities s_i = exp(-d_i^2 / 2w^2) exp(i phi_i)."""
    h, w = shape
    x, y = _grid(h, w)
    phases = spec.phases if spec.phases else (0.0,) * spec.n_channels
    sens = np.empty((spec.n_channels, h, w), dtype=np.complex128)
    for i, ((cx, cy), phi) in enumerate(zip(spec.centers, phases)):
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        sens[i] = np.exp(-d2 / (2.0 * spec.falloff**2)) * np.exp(1j * phi)
    return sens


def make_mask(img, threshold_frac=0.1):
    """Threshold-derived mask: |img| above a fraction of its peak."""
    mag = np.abs(np.asarray(img))
    peak = mag.max()
    if peak == 0:
        raise ValueError("cannot derive mask from an all-zero image")
    return mag > threshold_frac * peak


def make_noise_covariance(sens, phantom, mask, spec, rng):
    """Channel covariance matching the synthetic-noise protocol.

    Per-channel (per-axis) std tau_i = mean_{mask} |s_i * x| * 2^{-1/2} * sigma;
    off-diagonals tau_i tau_j rho_ij with rho_ij uniform in [rho_min, rho_max].
    The result is projected onto the PSD cone by clamping eigenvalues at 0.
    """
    sens = check_stack(sens)
    mask = check_mask(mask, phantom.shape)
    m = sens.shape[0]
    signal = np.abs(sens * np.asarray(phantom)[None])
    tau = signal[:, mask].mean(axis=1) * (2.0**-0.5) * spec.sigma
    rho = rng.uniform(spec.rho_min, spec.rho_max, size=(m, m))
    rho = np.triu(rho, 1)
    rho = rho + rho.T + np.eye(m)
    psi = rho * np.outer(tau, tau)
    evals, vecs = np.linalg.eigh(psi)
    if evals[0] < 0:
        psi = (vecs * np.maximum(evals, 0.0)) @ vecs.T
        psi = 0.5 * (psi + psi.T)
    return psi.astype(np.complex128)


def _noise_factor(psi):
    """Lower-triangular-ish factor L with L L^H = psi, tolerant of PSD-singular input."""
    psi = np.asarray(psi, dtype=np.complex128)
    try:
        return np.linalg.cholesky(psi + 0j)
    except np.linalg.LinAlgError:
        evals, vecs = np.linalg.eigh(psi)
        scale = max(float(evals[-1]), 1.0)
        if evals[0] < -1e-10 * scale:
            raise ValueError(f"covariance is not PSD (min eigenvalue {evals[0]:g})")
        return vecs * np.sqrt(np.maximum(evals, 0.0))


def sample_noise(psi, shape, rng):
    """Draw a correlated complex noise stack of shape (m, H, W).

    Real and imaginary axes are sampled independently as L z with z i.i.d.
    standard normal, so each axis has covariance psi across channels.
    """
    m = np.asarray(psi).shape[0]
    psi = check_covariance(psi, m)
    L = _noise_factor(psi)
    h, w = shape
    zr = rng.standard_normal((m, h * w))
    zi = rng.standard_normal((m, h * w))
    n = L @ zr + 1j * (L @ zi)
    return n.reshape(m, h, w)


def synthesize_acquisition(phantom, sens, psi, rng):
    """Per-channel images y_i = s_i * x + n_i with correlated noise."""
    sens = check_stack(sens)
    phantom = np.asarray(phantom)
    if sens.shape[1:] != phantom.shape:
        raise ValueError(f"sensitivity shape {sens.shape} does not match phantom {phantom.shape}")
    return sens * phantom[None] + sample_noise(psi, phantom.shape, rng)


def random_phantom_spec(grid_size, rng, n_ellipses=(2, 5)):
    """Random piecewise-constant phantom: a head ellipse plus interior blobs."""
    lo, hi = n_ellipses
    k = int(rng.integers(lo, hi + 1))
    ellipses = [Ellipse(0.0, 0.0, 0.85, 0.8, 0.0, 0.8)]
    for _ in range(k):
        ellipses.append(
            Ellipse(
                cx=rng.uniform(-0.4, 0.4),
                cy=rng.uniform(-0.4, 0.4),
                a=rng.uniform(0.1, 0.45),
                b=rng.uniform(0.1, 0.45),
                angle=rng.uniform(0, np.pi),
                amplitude=rng.uniform(-0.4, 0.6),
            )
        )
    return PhantomSpec(grid_size=grid_size, ellipses=tuple(ellipses))
