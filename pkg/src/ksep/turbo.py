"""The equalizer <-> decoder loop: extrinsic exchange with scheduled damping.

Iteration t equalizes with symbol priors built from the decoder's previous
extrinsic LLRs (uniform at t=0), soft-demaps the equalizer extrinsics into
bit LLRs clipped at the configured bound, and runs BP. Decoder extrinsics,
never posteriors, feed the next round. A zero-syndrome decode ends the loop
early; the trace still carries one record per scheduled iteration so BER
accounting sees the frame at its settled state.

Codeword lengths that do not fill a whole number of symbols are padded with
known zero bits, which enter the receiver as strong fixed LLRs and are
excluded from decoding and error counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import ChannelModel
from .ep import EpConfig, ksep_equalize, project_priors
from .equalizers import (
    FactorSet,
    block_lmmse,
    exact_posterior_enumeration,
    extrinsic_arrays,
)
from .ldpc import LdpcCode, decode_bp
from .modem import (
    Constellation,
    demap_extrinsic_arrays,
    llrs_to_prior_matrix,
)
from .numerics import DiscretePmf

# prior LLR assigned to pad bits known to be zero at the receiver
KNOWN_BIT_LLR = 30.0

EQUALIZER_NAMES = ("ksep", "lmmse-smoother", "block-lmmse-oracle", "exact-oracle")


def beta_schedule(t: int) -> float:
    """Damping weight for outer iteration t: gentle at first, capped at 0.7."""
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    return min(np.exp(t / 1.5) / 10.0, 0.7)


@dataclass(frozen=True)
class TurboConfig:
    """Outer-loop protocol knobs; defaults reproduce the reference setup."""

    iterations: int = 5            # outer exchanges after the initial one
    ep_sweeps: int = 3
    variance_floor: float = 1e-8
    llr_clip: float = 5.0
    damping_schedule: Callable[[int], float] = beta_schedule
    bp_iterations: int = 100       # decoder budget per turbo iteration

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (self.llr_clip > 0):
            raise ValueError("llr_clip must be positive")
        if self.bp_iterations < 1:
            raise ValueError("bp_iterations must be >= 1")
        for t in range(self.iterations + 1):
            b = self.damping_schedule(t)
            if not (0.0 <= b <= 1.0):
                raise ValueError(f"damping_schedule({t}) = {b} outside [0, 1]")


@dataclass
class TurboIteration:
    """Diagnostics for one outer iteration."""

    index: int
    damping: float
    mean_abs_equalizer_llr: float
    decoder_converged: bool
    decoder_iterations: int
    bit_errors: int | None     # vs supplied truth, None when truth unknown
    seconds: float
    repeated: bool = False     # filled-in record after early decoder convergence


@dataclass
class TurboTrace:
    iterations: list[TurboIteration] = field(default_factory=list)
    converged_at: int | None = None


def symbols_for_code(n_code_bits: int, bits_per_symbol: int) -> tuple[int, int]:
    """(symbol count, pad bit count) for one codeword."""
    n_sym = -(-n_code_bits // bits_per_symbol)
    return n_sym, n_sym * bits_per_symbol - n_code_bits


def pad_codeword(codeword: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    """Append the known zero bits that square the codeword off to whole symbols."""
    _, pad = symbols_for_code(codeword.size, bits_per_symbol)
    if pad == 0:
        return np.asarray(codeword, dtype=np.uint8)
    return np.concatenate([np.asarray(codeword, dtype=np.uint8), np.zeros(pad, dtype=np.uint8)])


def _pmf_bit_llrs(log_pmf: np.ndarray, c: Constellation, clip: float) -> np.ndarray:
    """Per-bit LLRs from per-symbol log pmfs (N, M), clipped."""
    n_sym = log_pmf.shape[0]
    llrs = np.empty((n_sym, c.bits_per_symbol))
    for j in range(c.bits_per_symbol):
        mask0 = c.labels[:, j] == 0
        l0 = np.logaddexp.reduce(log_pmf[:, mask0], axis=1)
        l1 = np.logaddexp.reduce(log_pmf[:, ~mask0], axis=1)
        llrs[:, j] = l0 - l1
    return np.clip(llrs.ravel(), -clip, clip)


def _gaussian_extrinsics(equalizer, y, ch, c, probs, ep_cfg):
    """Equalizer dispatch for the Gaussian-output variants."""
    if equalizer in ("ksep", "lmmse-smoother"):
        if equalizer == "lmmse-smoother":
            ep_cfg = EpConfig(sweeps=0, variance_floor=ep_cfg.variance_floor, damping=ep_cfg.damping)
        out = ksep_equalize(y, ch, (c.points, probs), ep_cfg)
        return out.extrinsic_means, out.extrinsic_variances
    # dense oracle: project priors, solve the whole block, divide out the prior
    mu, var = project_priors(c.points, probs, ep_cfg.variance_floor)
    t = FactorSet(mu, var, ch.memory, symbol_energy=1.0, variance_floor=ep_cfg.variance_floor)
    means, variances = block_lmmse(y, ch, t.means, t.variances)
    e_mean, e_var, _ = extrinsic_arrays(means, variances, t)
    return e_mean, e_var


def turbo_equalize(
    y: np.ndarray,
    ch: ChannelModel,
    code: LdpcCode,
    c: Constellation,
    cfg: TurboConfig,
    true_codeword: np.ndarray | None = None,
    equalizer: str = "ksep",
) -> tuple[np.ndarray, TurboTrace]:
    """Run the full receiver on one frame; returns (info bits, trace)."""
    if equalizer not in EQUALIZER_NAMES:
        raise ValueError(f"unknown equalizer {equalizer!r}")
    n_sym, pad = symbols_for_code(code.n, c.bits_per_symbol)
    if y.size != n_sym + ch.memory:
        raise ValueError(f"expected {n_sym + ch.memory} observations, got {y.size}")

    padded_bits = n_sym * c.bits_per_symbol
    prior_llrs = np.zeros(padded_bits)
    prior_llrs[code.n :] = KNOWN_BIT_LLR

    trace = TurboTrace()
    decoded = None
    for t in range(cfg.iterations + 1):
        started = time.perf_counter()
        damping = cfg.damping_schedule(t)
        probs = llrs_to_prior_matrix(prior_llrs, c)
        ep_cfg = EpConfig(
            sweeps=cfg.ep_sweeps, variance_floor=cfg.variance_floor, damping=damping
        )
        if equalizer == "exact-oracle":
            priors = [DiscretePmf(c.points, row) for row in probs]
            res = exact_posterior_enumeration(y, ch, priors, c, detail=False)
            post = np.stack([p.probs for p in res.symbol_pmfs])
            log_ext = np.log(np.maximum(post, 1e-300)) - np.log(np.maximum(probs, 1e-300))
            eq_llrs = _pmf_bit_llrs(log_ext, c, cfg.llr_clip)
        else:
            e_mean, e_var = _gaussian_extrinsics(equalizer, y, ch, c, probs, ep_cfg)
            eq_llrs = demap_extrinsic_arrays(e_mean, e_var, c, clip=cfg.llr_clip)
        decoded = decode_bp(code, eq_llrs[: code.n], max_iter=cfg.bp_iterations)
        errors = (
            None
            if true_codeword is None
            else int(np.count_nonzero(decoded.hard_bits != true_codeword))
        )
        trace.iterations.append(
            TurboIteration(
                index=t,
                damping=damping,
                mean_abs_equalizer_llr=float(np.mean(np.abs(eq_llrs[: code.n]))),
                decoder_converged=decoded.converged,
                decoder_iterations=decoded.iterations_used,
                bit_errors=errors,
                seconds=time.perf_counter() - started,
            )
        )
        if decoded.converged:
            trace.converged_at = t
            for t_rest in range(t + 1, cfg.iterations + 1):
                trace.iterations.append(
                    TurboIteration(
                        index=t_rest,
                        damping=cfg.damping_schedule(t_rest),
                        mean_abs_equalizer_llr=trace.iterations[-1].mean_abs_equalizer_llr,
                        decoder_converged=True,
                        decoder_iterations=0,
                        bit_errors=errors,
                        seconds=0.0,
                        repeated=True,
                    )
                )
            break
        if t < cfg.iterations:
            # extrinsic discipline: only the decoder's extrinsic goes back
            prior_llrs[: code.n] = np.clip(
                decoded.extrinsic_llrs, -cfg.llr_clip, cfg.llr_clip
            )

    return decoded.hard_bits[code.info_positions], trace
