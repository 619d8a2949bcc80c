"""Symmetric / PSD matrix utilities.

All routines accept a single ``(d, d)`` matrix or a stack ``(..., d, d)`` and
act matrix-by-matrix, so the simulation core can call them on a whole batch of
trajectories at once.
"""
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidInput, NotPSD

__all__ = [
    "SpectralDecomposition",
    "symmetrize",
    "as_sym",
    "spectral_decompose",
    "default_clip_tol",
    "psd_power",
    "regularized_control",
    "extrapolation_control",
]


class SpectralDecomposition(NamedTuple):
    """Eigenvalues in descending order and the matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        lam, v = self.eigenvalues, self.eigenvectors
        return symmetrize((v * lam[..., None, :]) @ np.swapaxes(v, -1, -2))


def symmetrize(a):
    """Return ``(a + a^T) / 2`` over the last two axes."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def as_sym(a):
    """Validate a square (stack of) matrix and return its symmetric part.

    Raises
    ------
    InvalidInput
        If the array is not square in its last two axes, is empty, or holds
        non-finite entries.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] < 1:
        raise InvalidInput(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    return symmetrize(a)


def _eigh(s):
    """``np.linalg.eigh`` with a closed-form path for stacks of 2x2 matrices.

    Batched LAPACK calls on many tiny matrices are dominated by per-matrix
    overhead; for ``d = 2`` a single Jacobi rotation gives the same ascending
    eigenvalues and orthonormal columns to rounding accuracy.
    """
    if s.shape[-1] != 2:
        return np.linalg.eigh(s)
    a, b, c = s[..., 0, 0], s[..., 0, 1], s[..., 1, 1]
    m = 0.5 * (a + c)
    h = 0.5 * (a - c)
    r = np.hypot(h, b)
    phi = 0.5 * np.arctan2(b, h)
    cs, sn = np.cos(phi), np.sin(phi)
    lam = np.stack([m - r, m + r], axis=-1)
    v = np.stack([np.stack([-sn, cs], axis=-1), np.stack([cs, sn], axis=-1)], axis=-1)
    return lam, v


def spectral_decompose(s):
    """Eigen-decompose a symmetric matrix, eigenvalues sorted descending."""
    s = as_sym(s)
    lam, v = np.linalg.eigh(s)
    return SpectralDecomposition(lam[..., ::-1].copy(), v[..., ::-1].copy())


def default_clip_tol(eigenvalues):
    """``1e-12 * max(1, lambda_max)``, per matrix of a stack."""
    lam_max = np.max(np.abs(eigenvalues), axis=-1)
    return 1e-12 * np.maximum(1.0, lam_max)


def _eig_power(lam, p, clip_tol):
    """Raise clipped eigenvalues to ``p``; ``0 ** p := 0`` for ``p < 0``."""
    lam = np.where(np.abs(lam) <= clip_tol[..., None], 0.0, lam)
    if p == 0:
        return np.ones_like(lam)
    if not float(p).is_integer() and np.any(lam < 0):
        raise NotPSD(f"negative eigenvalue {lam.min():.3e} with fractional power {p}")
    if p > 0:
        return lam ** p
    out = np.zeros_like(lam)
    nz = lam != 0
    out[nz] = lam[nz] ** p
    return out


def psd_power(s, p, clip_tol=None):
    """Matrix power of a symmetric PSD matrix with pseudoinverse semantics.

    Eigenvalues within ``clip_tol`` of zero are set to exactly zero before
    powering, and zero eigenvalues stay zero for negative ``p``, so that
    ``psd_power(S, -1)`` is the Moore-Penrose pseudoinverse.

    Parameters
    ----------
    s : array_like, shape (..., d, d)
    p : float
    clip_tol : float or None
        Absolute clipping threshold. ``None`` uses ``1e-12 * max(1, lam_max)``.

    Returns
    -------
    ndarray, shape (..., d, d)
    """
    if not np.isfinite(p):
        raise InvalidInput("power must be finite")
    if clip_tol is not None and clip_tol < 0:
        raise InvalidInput("clip_tol must be nonnegative")
    s = as_sym(s)
    lam, v = _eigh(s)
    tol = default_clip_tol(lam) if clip_tol is None else np.full(lam.shape[:-1], float(clip_tol))
    lam_p = _eig_power(lam, p, tol)
    return symmetrize((v * lam_p[..., None, :]) @ np.swapaxes(v, -1, -2))


def regularized_control(sigma, alpha, delta):
    """Regularized Eldan control ``(Sigma + delta**(1/alpha) I)**(-alpha)``.

    The shift is chosen so that the spectral norm of the result never exceeds
    ``1 / delta`` whatever ``alpha`` is. ``alpha == 0`` gives the identity.
    The power is evaluated in log space so that ``delta**(1/alpha)`` may
    underflow without producing infinities.
    """
    if not delta > 0:
        raise InvalidInput(f"delta must be positive, got {delta}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha must lie in [0, 1], got {alpha}")
    sigma = as_sym(sigma)
    d = sigma.shape[-1]
    if alpha == 0:
        return np.broadcast_to(np.eye(d), sigma.shape).copy()
    lam, v = _eigh(sigma)
    tol = default_clip_tol(lam)[..., None]
    if np.any(lam < -tol):
        raise NotPSD(f"covariance has negative eigenvalue {lam.min():.3e}")
    lam = np.where(lam <= tol, 0.0, lam)
    with np.errstate(divide="ignore"):
        log_shifted = np.logaddexp(np.log(lam), np.log(delta) / alpha)
    lam_p = np.exp(-alpha * log_shifted)
    return symmetrize((v * lam_p[..., None, :]) @ np.swapaxes(v, -1, -2))


def _shifted_inv_sqrt(s, shift, clip_tol):
    if shift > 0:
        lam, v = _eigh(s)
        lam = np.maximum(lam, 0.0)
        lam_p = 1.0 / np.sqrt(lam + shift)
        return symmetrize((v * lam_p[..., None, :]) @ np.swapaxes(v, -1, -2))
    return psd_power(s, -0.5, clip_tol)


def extrapolation_control(sigma, lam, delta, pseudoinverse: bool = False,
                          clip_tol: Optional[float] = None):
    """Controls ``(C, D)`` of the extrapolation coupling.

    ``C = (Sigma^+)^{1/2}`` and ``D = Sigma^{1/2} [(Sigma^{1/2} Lam Sigma^{1/2})^+]^{1/2}``,
    where each inverse square root is computed as ``(X + delta**2 I)^{-1/2}``.
    With ``pseudoinverse=True`` (or ``delta == 0``) the clip-based pure
    pseudoinverse is used instead. ``Sigma^{1/2}`` itself is never regularized.

    ``D`` is not symmetric unless ``Sigma`` and ``Lam`` commute, so both are
    returned as plain arrays.
    """
    sigma = as_sym(sigma)
    lam = as_sym(lam)
    if sigma.shape != lam.shape:
        raise InvalidInput(f"dimension mismatch {sigma.shape} vs {lam.shape}")
    if delta < 0:
        raise InvalidInput("delta must be nonnegative")
    shift = 0.0 if pseudoinverse else float(delta) ** 2
    root = psd_power(sigma, 0.5, clip_tol)
    c = _shifted_inv_sqrt(sigma, shift, clip_tol)
    inner = symmetrize(root @ lam @ root)
    d = root @ _shifted_inv_sqrt(inner, shift, clip_tol)
    return c, d
