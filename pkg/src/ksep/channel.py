"""ISI channel simulation, random channel draws, and SNR bookkeeping.

Tap ordering convention (fixed for the whole package): ``taps[0]`` multiplies
the newest symbol, so the noiseless observation is the full linear convolution

    y_k = sum_j taps[j-1] * u_{k-j+1},   k = 1..N+L-1

with u zero outside 1..N. The sliding state is s_k = [u_{k-m}, ..., u_k]
(oldest first, m = L-1), which means the filter vector that dots with a state
is ``taps`` reversed; ChannelModel.state_filter provides it so equalizer code
never re-derives the flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelModel:
    taps: np.ndarray
    noise_variance: float
    field: str = "real"

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.taps))
        if taps.size < 1:
            raise ValueError("need at least one tap")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")
        if self.field not in ("real", "complex"):
            raise ValueError(f"unknown field {self.field!r}")
        if self.field == "real":
            if not np.isrealobj(taps):
                if np.abs(taps.imag).max() > 0:
                    raise ValueError("real mode requires real taps")
                taps = taps.real
            taps = taps.astype(float)
        else:
            taps = taps.astype(complex)
        object.__setattr__(self, "taps", taps)

    @property
    def length(self) -> int:
        return self.taps.size

    @property
    def memory(self) -> int:
        return self.taps.size - 1

    @property
    def state_filter(self) -> np.ndarray:
        """Row vector g with y_k = g . s_k; taps reversed to match state order."""
        return self.taps[::-1]


def sample_noise(ch: ChannelModel, size: int, rng: np.random.Generator) -> np.ndarray:
    sigma = np.sqrt(ch.noise_variance)
    if ch.field == "real":
        return rng.normal(0.0, sigma, size)
    # proper complex: half the variance in each part
    half = sigma / np.sqrt(2.0)
    return rng.normal(0.0, half, size) + 1j * rng.normal(0.0, half, size)


def transmit(u: np.ndarray, ch: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    """Full convolution with the taps plus field-matched Gaussian noise."""
    u = np.asarray(u)
    clean = np.convolve(u, ch.taps, mode="full")
    return clean + sample_noise(ch, clean.size, rng)


def random_channel(length: int, field: str, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. zero-mean Gaussian taps with per-tap variance 1/L (unit expected gain)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    sigma = np.sqrt(1.0 / length)
    if field == "real":
        return rng.normal(0.0, sigma, length)
    half = sigma / np.sqrt(2.0)
    return rng.normal(0.0, half, length) + 1j * rng.normal(0.0, half, length)


def ebn0_to_noise_variance(
    ebn0_db: float,
    es: float,
    bits_per_symbol: int,
    code_rate: float,
    field: str,
) -> float:
    """Noise variance for a given Eb/N0, assuming unit average channel gain.

    Eb = Es / (bits_per_symbol * code_rate). Complex mode: sigma_v^2 = Eb/10^(dB/10).
    Real mode halves that (a real observation carries half the two-sided density).
    """
    if es <= 0 or bits_per_symbol <= 0 or code_rate <= 0:
        raise ValueError("es, bits_per_symbol, code_rate must be positive")
    eb = es / (bits_per_symbol * code_rate)
    sigma2 = eb / (10.0 ** (ebn0_db / 10.0))
    if field == "real":
        sigma2 /= 2.0
    return sigma2
