"""Gaussian belief algebra over real or proper-complex scalars and small matrices.

Everything downstream (equalizer passes, EP refinement, oracles) is built from
the four operations here: a pivoted Hermitian solve, the Gaussian projection of
a discrete pmf, and division/product of scalar Gaussians in moment form.

Field convention: a "variance" is E[(x-mean)^2] in real mode and E[|x-mean|^2]
in proper-complex mode. With that reading every formula below is written once
and holds over both fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SingularMatrix(Exception):
    """Hermitian solve met an effectively singular matrix."""


class DegenerateDivision(Exception):
    """Gaussian division with numerically equal variances (no information left)."""


# Smallest pivot magnitude tolerated relative to the largest one.
PIVOT_RATIO = 1e-14
# Variance of the flat substitute belief, in units of E_s.
FLAT_VARIANCE_SCALE = 1e8
# Variance of the near-deterministic pseudo-factor that pins known-zero symbols.
BOUNDARY_VARIANCE_SCALE = 1e-10


@dataclass(frozen=True)
class GaussianBelief1D:
    """Scalar Gaussian in moment form.

    ``division_result=True`` marks the output of :func:`gaussian_divide_1d`,
    which is allowed to carry a negative variance; consumers must opt in to
    that explicitly. Everything else requires variance >= 0.
    """

    mean: complex
    variance: float
    division_result: bool = False

    def __post_init__(self):
        v = float(self.variance)
        if not np.isfinite(v):
            raise ValueError("variance must be finite")
        if v < 0 and not self.division_result:
            raise ValueError("negative variance only allowed on flagged division results")


@dataclass(frozen=True)
class GaussianBeliefND:
    """Small dense Gaussian over a state vector; covariance symmetrized on construction."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean))
        cov = np.asarray(self.covariance)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class DiscretePmf:
    """Probability mass function over constellation points."""

    alphabet: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        alphabet = np.atleast_1d(np.asarray(self.alphabet))
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if alphabet.shape != probs.shape:
            raise ValueError("alphabet and probs must have the same length")
        if np.any(probs < -1e-15):
            raise ValueError("negative probability")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("pmf not normalized")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "probs", probs)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M^H)/2. Standard hygiene after covariance updates."""
    return 0.5 * (m + m.conj().T)


def _ldl_pivot_magnitudes(d: np.ndarray) -> np.ndarray:
    """Eigenvalue magnitudes of the 1x1/2x2 blocks of an LDL^H block-diagonal D."""
    n = d.shape[0]
    mags = []
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0:
            w = np.linalg.eigvals(d[i : i + 2, i : i + 2])
            mags.extend(np.abs(w))
            i += 2
        else:
            mags.append(abs(d[i, i]))
            i += 1
    return np.asarray(mags, dtype=float)


def _ldl_block_solve(d: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    n = d.shape[0]
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0:
            out[i : i + 2] = np.linalg.solve(d[i : i + 2, i : i + 2], z[i : i + 2])
            i += 2
        else:
            out[i] = z[i] / d[i, i]
            i += 1
    return out


def hermitian_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs for Hermitian M via a pivoted LDL^H factorization.

    Works for indefinite M (the smoothing merge can subtract its way into
    indefiniteness before flooring). Raises SingularMatrix when the smallest
    pivot magnitude falls below PIVOT_RATIO times the largest.
    """
    m = np.asarray(m)
    rhs = np.asarray(rhs)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("M must be square")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.conj().T).max() > 1e-8 * scale:
        raise ValueError("M is not Hermitian within tolerance")
    ms = symmetrize(m)
    if not np.all(np.isfinite(ms)):
        raise SingularMatrix("non-finite entries")

    if ms.shape[0] == 1:
        piv = abs(ms[0, 0])
        if piv == 0.0:
            raise SingularMatrix("zero pivot")
        return rhs / ms[0, 0]

    lu, d, perm = scipy.linalg.ldl(ms, hermitian=True)
    mags = _ldl_pivot_magnitudes(d)
    if mags.min() < PIVOT_RATIO * mags.max():
        raise SingularMatrix(
            f"pivot ratio {mags.min():.3e}/{mags.max():.3e} below {PIVOT_RATIO:g}"
        )

    # Row-permuted triangular factor: A[perm][:, perm] = L_p D L_p^H.
    lp = lu[perm]
    squeeze = rhs.ndim == 1
    b = rhs[:, None] if squeeze else rhs
    bp = b[perm]
    z = scipy.linalg.solve_triangular(lp, bp, lower=True, unit_diagonal=True)
    w = _ldl_block_solve(d, z)
    v = scipy.linalg.solve_triangular(lp.conj().T, w, lower=False, unit_diagonal=True)
    x = np.empty_like(v)
    x[perm] = v
    return x[:, 0] if squeeze else x


def discrete_projection(p: DiscretePmf) -> GaussianBelief1D:
    """Mean and variance of a discrete pmf, as a Gaussian belief.

    A point mass projects to variance 0; callers floor it where needed.
    """
    mean = np.sum(p.probs * p.alphabet)
    var = float(np.sum(p.probs * np.abs(p.alphabet - mean) ** 2))
    if np.isrealobj(p.alphabet):
        mean = float(mean)
    return GaussianBelief1D(mean=mean, variance=var)


def gaussian_divide_1d(num: GaussianBelief1D, den: GaussianBelief1D) -> GaussianBelief1D:
    """Moments of num/den in precision form; the extrinsic-extraction primitive.

    The result is flagged and may legitimately carry a negative variance.
    Raises DegenerateDivision when the variances coincide to relative 1e-14,
    i.e. the quotient is (numerically) flat.
    """
    if not (num.variance > 0 and den.variance > 0):
        raise ValueError("division requires positive input variances")
    if abs(den.variance - num.variance) < 1e-14 * den.variance:
        raise DegenerateDivision("numerator and denominator variances coincide")
    prec = 1.0 / num.variance - 1.0 / den.variance
    variance = 1.0 / prec
    mean = variance * (num.mean / num.variance - den.mean / den.variance)
    return GaussianBelief1D(mean=mean, variance=variance, division_result=True)


def gaussian_product_moments_1d(a: GaussianBelief1D, b: GaussianBelief1D) -> GaussianBelief1D:
    """Moments of the normalized product of two scalar Gaussians."""
    if not (a.variance > 0 and b.variance > 0):
        raise ValueError("product requires positive input variances")
    variance = 1.0 / (1.0 / a.variance + 1.0 / b.variance)
    mean = variance * (a.mean / a.variance + b.mean / b.variance)
    return GaussianBelief1D(mean=mean, variance=variance)


def flat_belief(es: float = 1.0) -> GaussianBelief1D:
    """The substitute used when an extrinsic carries no information."""
    return GaussianBelief1D(mean=0.0, variance=FLAT_VARIANCE_SCALE * es)
