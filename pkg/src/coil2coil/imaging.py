"""Coil-combination math and analytic noise propagation.

Images are numpy arrays: a channel stack is complex with shape (m, H, W),
a sensitivity map is complex with the same shape, a channel noise
covariance is an (m, m) Hermitian PSD matrix (covariance per real/imaginary
axis), and a mask is boolean (H, W).  All voxelwise arithmetic is
elementwise (Hadamard).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VoxelStats",
    "coil_combine",
    "magnitude",
    "effective_sensitivity",
    "propagate_noise_stats",
    "check_stack",
    "check_mask",
    "check_covariance",
]


def check_stack(stack, sens=None):
    """Validate a (m, H, W) channel stack and, optionally, a matching map."""
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ValueError(f"channel stack must be (m, H, W) with m >= 1, got {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("channel stack contains non-finite values")
    if sens is not None:
        sens = np.asarray(sens)
        if sens.shape != stack.shape:
            raise ValueError(f"sensitivity shape {sens.shape} != stack shape {stack.shape}")
    return stack


def check_mask(mask, shape):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} != image shape {tuple(shape)}")
    if not mask.any():
        raise ValueError("mask has no true voxels")
    return mask


def check_covariance(psi, m, tol=1e-10):
    """Validate an (m, m) Hermitian PSD channel covariance."""
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.shape != (m, m):
        raise ValueError(f"covariance must be ({m}, {m}), got {psi.shape}")
    if not np.allclose(psi, psi.conj().T, atol=tol):
        raise ValueError("covariance is not Hermitian")
    evals = np.linalg.eigvalsh(psi)
    scale = max(float(evals[-1]), 1.0)
    if evals[0] < -tol * scale:
        raise ValueError(f"covariance is not PSD (min eigenvalue {evals[0]:g})")
    return psi


def _check_group(group, m):
    group = sorted(set(int(i) for i in group))
    if not group:
        raise ValueError("channel group is empty")
    if group[0] < 0 or group[-1] >= m:
        raise ValueError(f"channel index out of range for m={m}: {group}")
    return group


@dataclass(frozen=True)
class VoxelStats:
    """Per-voxel variance/covariance of two combined magnitude images.

    var_j, var_k are the noise variances of the two group combinations and
    cov_jk their covariance, each a real (H, W) array.
    """

    var_j: np.ndarray
    var_k: np.ndarray
    cov_jk: np.ndarray

    def __post_init__(self):
        for name in ("var_j", "var_k"):
            v = getattr(self, name)
            if np.any(v < -1e-12):
                raise ValueError(f"{name} has negative entries")
        # Cauchy-Schwarz, with slack for roundoff
        bound = self.var_j * self.var_k
        if np.any(self.cov_jk**2 > bound * (1 + 1e-9) + 1e-12):
            raise ValueError("covariance violates Cauchy-Schwarz bound")


def coil_combine(stack, sens, group):
    """Matched-filter combination sum_i conj(s_i) * y_i over a channel group.

    Returns a complex (H, W) image.
    """
    stack = check_stack(stack, sens)
    sens = np.asarray(sens)
    group = _check_group(group, stack.shape[0])
    return np.einsum("chw,chw->hw", sens[group].conj(), stack[group])


def magnitude(img):
    """Voxelwise absolute value, returned as a real image."""
    return np.abs(np.asarray(img))


def effective_sensitivity(sens, group):
    """Per-voxel gain sum_i |s_i|^2 of a group combination (real, >= 0)."""
    sens = np.asarray(sens)
    group = _check_group(group, sens.shape[0])
    return np.sum(np.abs(sens[group]) ** 2, axis=0)


def propagate_noise_stats(sens, psi, group_j, group_k):
    """Analytic per-voxel noise statistics of two combined magnitude images.

    For disjoint channel groups J and K, the magnitude-domain noise of the
    two combinations (at high SNR, where the noise is effectively the
    projection of the complex combined noise onto the shared signal phase)
    has per-voxel variance

        var_j = Re( sum_{a,b in J} conj(s_a) psi_ab s_b )

    and likewise for K, with the covariance summed over J x K.
    """
    sens = check_stack(sens)
    m = sens.shape[0]
    gj = _check_group(group_j, m)
    gk = _check_group(group_k, m)
    if set(gj) & set(gk):
        raise ValueError(f"groups overlap: {sorted(set(gj) & set(gk))}")
    psi = check_covariance(psi, m)

    def quad(ga, gb):
        block = psi[np.ix_(ga, gb)]
        return np.einsum("ahw,ab,bhw->hw", sens[ga].conj(), block, sens[gb]).real

    var_j = np.maximum(quad(gj, gj), 0.0)
    var_k = np.maximum(quad(gk, gk), 0.0)
    cov_jk = quad(gj, gk)
    # clip roundoff past the Cauchy-Schwarz bound
    bound = np.sqrt(var_j * var_k)
    cov_jk = np.clip(cov_jk, -bound, bound)
    return VoxelStats(var_j=var_j, var_k=var_k, cov_jk=cov_jk)
