"""Training-pair generation: channel split, combination, noise whitening,
and sensitivity bookkeeping.

The label is decorrelated from the input by the 2x2 generalized
least-squares transform: with per-voxel noise variances v_j, v_k and
covariance c of the two combined images,

    label' = alpha * input + beta * label
    alpha  = -c   / sqrt(v_j v_k - c^2)
    beta   =  v_j / sqrt(v_j v_k - c^2)

which zeroes the input/label noise covariance while preserving
var(label') = v_j.  Sensitivity normalization is carried as the pair's
(sens_in, sens_label) maps and applied inside the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import (
    VoxelStats,
    check_mask,
    check_stack,
    coil_combine,
    effective_sensitivity,
    magnitude,
    propagate_noise_stats,
)

__all__ = [
    "ChannelSplit",
    "WhiteningMaps",
    "TrainingPair",
    "split_channels",
    "whitening_coefficients",
    "make_training_pair",
    "combine_all",
    "empirical_noise_correlation",
]


@dataclass(frozen=True)
class ChannelSplit:
    """Disjoint balanced partition of channel indices into two groups."""

    group_j: tuple
    group_k: tuple

    def __post_init__(self):
        j, k = set(self.group_j), set(self.group_k)
        if j & k:
            raise ValueError("split groups overlap")
        m = len(j) + len(k)
        if j | k != set(range(m)):
            raise ValueError("split groups must cover channels 0..m-1")
        if abs(len(j) - len(k)) > 1:
            raise ValueError("split groups must be balanced within one channel")


@dataclass(frozen=True)
class WhiteningMaps:
    """Per-voxel whitening coefficients; n_fallback counts degenerate voxels."""

    alpha: np.ndarray
    beta: np.ndarray
    n_fallback: int = 0


@dataclass(frozen=True)
class TrainingPair:
    image_in: np.ndarray  # I_input, real (H, W)
    image_label: np.ndarray  # whitened label, real (H, W)
    sens_in: np.ndarray  # effective sensitivity of the input combination
    sens_label: np.ndarray  # effective sensitivity of the label
    mask: np.ndarray
    coverage_j: float = 1.0  # masked fraction with usable input sensitivity
    coverage_k: float = 1.0
    n_fallback: int = 0


def split_channels(m, rng):
    """Uniformly random balanced partition of m >= 2 channels."""
    if m < 2:
        raise ValueError(f"need at least 2 channels to split, got {m}")
    perm = rng.permutation(m)
    nj = m // 2
    if m % 2 == 1 and rng.integers(2):
        nj = m - nj
    return ChannelSplit(
        group_j=tuple(sorted(int(i) for i in perm[:nj])),
        group_k=tuple(sorted(int(i) for i in perm[nj:])),
    )


def whitening_coefficients(stats: VoxelStats, eps=1e-9):
    """Per-voxel (alpha, beta) of the GLS decorrelation.

    Voxels with a degenerate 2x2 covariance (determinant below eps times
    v_j*v_k, or v_k = 0) fall back to pure variance matching: alpha = 0,
    beta = sqrt(v_j / v_k) when v_k > 0, else beta = 1.
    """
    vj, vk, c = stats.var_j, stats.var_k, stats.cov_jk
    det = vj * vk - c**2
    good = (det > eps * vj * vk) & (vk > 0)
    root = np.sqrt(np.where(good, det, 1.0))
    alpha = np.where(good, -c / root, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta_fb = np.where(vk > 0, np.sqrt(np.where(vk > 0, vj / np.maximum(vk, 1e-300), 1.0)), 1.0)
    beta = np.where(good, vj / root, beta_fb)
    return WhiteningMaps(alpha=alpha, beta=beta, n_fallback=int(np.count_nonzero(~good)))


def combine_all(stack, sens):
    """Full matched-filter combination magnitude |sum_i conj(s_i) y_i|."""
    stack = check_stack(stack, sens)
    return magnitude(coil_combine(stack, sens, range(stack.shape[0])))


def make_training_pair(stack, sens, psi, split, mask, whiten=True, sens_floor=1e-3):
    """Build a noise-independent training pair from one acquisition.

    With whiten on, the label is alpha*I_input + beta*I_label with the GLS
    coefficients computed from analytically propagated noise statistics,
    and its sensitivity map is combined the same way.  With whiten off the
    raw second-group combination is used (ablation).
    """
    stack = check_stack(stack, sens)
    mask = check_mask(mask, stack.shape[1:])
    gj, gk = split.group_j, split.group_k
    if len(gj) + len(gk) != stack.shape[0]:
        raise ValueError("split does not match channel count")

    img_in = magnitude(coil_combine(stack, sens, gj))
    img_lab = magnitude(coil_combine(stack, sens, gk))
    s_j = effective_sensitivity(sens, gj)
    s_k = effective_sensitivity(sens, gk)

    n_fallback = 0
    if whiten:
        stats = propagate_noise_stats(sens, psi, gj, gk)
        wmaps = whitening_coefficients(stats)
        label = wmaps.alpha * img_in + wmaps.beta * img_lab
        s_label = wmaps.alpha * s_j + wmaps.beta * s_k
        n_fallback = wmaps.n_fallback
    else:
        label = img_lab
        s_label = s_k

    if np.any(s_label[mask] <= 0):
        import warnings

        warnings.warn("degenerate pair: label sensitivity <= 0 inside mask", stacklevel=2)

    cov_j = float(np.mean(s_j[mask] >= sens_floor * s_j.max()))
    cov_k = float(np.mean(s_k[mask] >= sens_floor * s_k.max()))
    return TrainingPair(
        image_in=img_in,
        image_label=label,
        sens_in=s_j,
        sens_label=s_label,
        mask=mask,
        coverage_j=cov_j,
        coverage_k=cov_k,
        n_fallback=n_fallback,
    )


def empirical_noise_correlation(phantom, sens, psi, split, mask, n_real, rng, whiten=True, chunk=500):
    """Monte-Carlo check of pair noise independence.

    Draws n_real noise realizations of the acquisition, builds the
    (optionally whitened) input/label magnitudes for each, and returns the
    mean absolute per-voxel correlation between them inside the mask.
    """
    from .simulate import _noise_factor

    phantom = np.asarray(phantom)
    sens = check_stack(sens)
    m, h, w = sens.shape
    mask = check_mask(mask, (h, w))
    gj, gk = list(split.group_j), list(split.group_k)

    if whiten:
        wmaps = whitening_coefficients(propagate_noise_stats(sens, psi, gj, gk))
        alpha, beta = wmaps.alpha, wmaps.beta
    else:
        alpha, beta = np.zeros((h, w)), np.ones((h, w))

    L = _noise_factor(np.asarray(psi, dtype=np.complex128))
    clean = sens * phantom[None]
    uj = sens[gj].conj().reshape(len(gj), -1)
    uk = sens[gk].conj().reshape(len(gk), -1)
    cj = np.einsum("cv,cv->v", uj, clean[gj].reshape(len(gj), -1))
    ck = np.einsum("cv,cv->v", uk, clean[gk].reshape(len(gk), -1))
    a_flat, b_flat = alpha.ravel(), beta.ravel()

    sa = np.zeros(h * w)
    sb = np.zeros(h * w)
    saa = np.zeros(h * w)
    sbb = np.zeros(h * w)
    sab = np.zeros(h * w)
    done = 0
    while done < n_real:
        r = min(chunk, n_real - done)
        zr = rng.standard_normal((m, r * h * w))
        zi = rng.standard_normal((m, r * h * w))
        noise = (L @ zr + 1j * (L @ zi)).reshape(m, r, h * w)
        ej = np.einsum("cv,crv->rv", uj, noise[gj])
        ek = np.einsum("cv,crv->rv", uk, noise[gk])
        img_in = np.abs(cj[None] + ej)
        img_lab = a_flat[None] * img_in + b_flat[None] * np.abs(ck[None] + ek)
        sa += img_in.sum(axis=0)
        sb += img_lab.sum(axis=0)
        saa += (img_in**2).sum(axis=0)
        sbb += (img_lab**2).sum(axis=0)
        sab += (img_in * img_lab).sum(axis=0)
        done += r

    n = float(n_real)
    va = saa / n - (sa / n) ** 2
    vb = sbb / n - (sb / n) ** 2
    cov = sab / n - (sa / n) * (sb / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where((va > 0) & (vb > 0), cov / np.sqrt(np.maximum(va * vb, 1e-300)), 0.0)
    return float(np.mean(np.abs(corr.reshape(h, w)[mask])))
