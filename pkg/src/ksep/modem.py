"""Constellations, bit mapping, LLR/prior conversion, and Gaussian soft demapping.

Constellations are always normalized to unit symbol energy so that variance
floors and flat-belief constants stated in symbol-energy units apply directly.
LLR frames are plain float arrays with the convention log p(bit=0)/p(bit=1).

PAM constellations are real, QAM complex; that choice also fixes the Gaussian
density used by the demapper unless a field override is passed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DiscretePmf, GaussianBelief1D

# Frames of bit LLRs are bare float arrays.
LlrFrame = np.ndarray

DEFAULT_LLR_CLIP = 5.0


class UnsupportedOrder(Exception):
    pass


class LengthMismatch(Exception):
    pass


@dataclass(frozen=True)
class Constellation:
    """M-ary alphabet with Gray bit labels and unit mean symbol energy.

    labels[i] holds the bit pattern (MSB first) of points[i]; label_index is
    the inverse lookup from packed label value to point index.
    """

    kind: str
    order: int
    points: np.ndarray
    labels: np.ndarray
    label_index: np.ndarray
    energy: float = 1.0

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def field(self) -> str:
        return "real" if np.isrealobj(self.points) else "complex"


def _gray_levels(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Ascending PAM levels 2i-size+1 with binary-reflected Gray labels."""
    idx = np.arange(size)
    levels = (2 * idx - size + 1).astype(float)
    gray = idx ^ (idx >> 1)
    nbits = max(1, int(np.log2(size)))
    bits = (gray[:, None] >> np.arange(nbits - 1, -1, -1)) & 1
    return levels, bits.astype(np.uint8)


def build_constellation(order: int, kind: str) -> Constellation:
    """Gray-labeled PAM or QAM alphabet, scaled to unit average energy.

    QAM grids are products of two Gray PAM axes: square when log2(order) is
    even, rectangular otherwise (128 becomes 16x8, wider axis in-phase).
    """
    kind = kind.lower()
    if order < 2 or order & (order - 1):
        raise UnsupportedOrder(f"order {order} is not a power of two >= 2")
    q = int(np.log2(order))

    if kind == "pam":
        levels, bits = _gray_levels(order)
        points = levels.astype(float)
        labels = bits
    elif kind == "qam":
        if order < 4:
            raise UnsupportedOrder("QAM needs at least 4 points")
        qi = (q + 1) // 2
        qq = q - qi
        li, bi = _gray_levels(1 << qi)
        lq, bq = _gray_levels(1 << qq)
        # I-axis index varies slowest; label = I bits then Q bits.
        points = (li[:, None] + 1j * lq[None, :]).ravel()
        labels = np.concatenate(
            [
                np.repeat(bi, 1 << qq, axis=0),
                np.tile(bq, (1 << qi, 1)),
            ],
            axis=1,
        )
    else:
        raise UnsupportedOrder(f"unknown kind {kind!r}")

    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    packed = labels @ (1 << np.arange(q - 1, -1, -1))
    label_index = np.empty(order, dtype=np.int64)
    label_index[packed] = np.arange(order)
    return Constellation(
        kind=kind,
        order=order,
        points=points,
        labels=labels,
        label_index=label_index,
        energy=1.0,
    )


def _bit_groups(bits: np.ndarray, q: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.size % q:
        raise LengthMismatch(f"{bits.size} bits not divisible by {q} bits/symbol")
    return bits.reshape(-1, q).astype(np.int64)


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Group bits per symbol and map through the Gray label table."""
    groups = _bit_groups(bits, c.bits_per_symbol)
    packed = groups @ (1 << np.arange(c.bits_per_symbol - 1, -1, -1))
    return c.points[c.label_index[packed]]


def hard_demap(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Nearest-point decisions back to bits; the noiseless inverse of map_bits."""
    symbols = np.asarray(symbols)
    idx = np.abs(symbols[:, None] - c.points[None, :]).argmin(axis=1)
    return c.labels[idx].ravel().astype(np.uint8)


def llrs_to_prior_matrix(llrs: LlrFrame, c: Constellation) -> np.ndarray:
    """(N, M) matrix of symbol priors from per-bit LLRs, bit-independence assumed."""
    q = c.bits_per_symbol
    llrs = np.asarray(llrs, dtype=float)
    per_symbol = llrs.reshape(-1, q) if llrs.size else llrs.reshape(0, q)
    # log sigmoid(+/-L) without overflow
    logp0 = -np.logaddexp(0.0, -per_symbol)
    logp1 = -np.logaddexp(0.0, per_symbol)
    lab = c.labels.astype(float)
    logprob = logp0 @ (1.0 - lab.T) + logp1 @ lab.T
    logprob -= logprob.max(axis=1, keepdims=True)
    probs = np.exp(logprob)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def llrs_to_priors(llrs: LlrFrame, c: Constellation) -> list[DiscretePmf]:
    probs = llrs_to_prior_matrix(llrs, c)
    return [DiscretePmf(alphabet=c.points, probs=row) for row in probs]


def _density_scale(field: str) -> float:
    # exponent is -|a-mu|^2 / (scale * variance)
    return 2.0 if field == "real" else 1.0


def demap_extrinsic_arrays(
    means: np.ndarray,
    variances: np.ndarray,
    c: Constellation,
    clip: float = DEFAULT_LLR_CLIP,
    field: str | None = None,
) -> LlrFrame:
    """Per-bit extrinsic LLRs from Gaussian symbol beliefs, clamped to +/-clip."""
    field = c.field if field is None else field
    means = np.asarray(means)
    variances = np.asarray(variances, dtype=float)
    if np.any(variances <= 0):
        raise ValueError("demapping requires positive variances")
    scale = _density_scale(field)
    logw = -np.abs(c.points[None, :] - means[:, None]) ** 2 / (scale * variances[:, None])
    logw -= logw.max(axis=1, keepdims=True)
    llrs = np.empty((means.size, c.bits_per_symbol), dtype=float)
    for b in range(c.bits_per_symbol):
        mask0 = c.labels[:, b] == 0
        w0 = np.logaddexp.reduce(logw[:, mask0], axis=1)
        w1 = np.logaddexp.reduce(logw[:, ~mask0], axis=1)
        llrs[:, b] = w0 - w1
    return np.clip(llrs.ravel(), -clip, clip)


def demap_extrinsic(
    q_e: list[GaussianBelief1D],
    c: Constellation,
    clip: float = DEFAULT_LLR_CLIP,
    field: str | None = None,
) -> LlrFrame:
    means = np.asarray([g.mean for g in q_e])
    variances = np.asarray([g.variance for g in q_e], dtype=float)
    return demap_extrinsic_arrays(means, variances, c, clip=clip, field=field)
