"""Expectation-propagation refinement of the smoother's prior factors.

The smoother treats each symbol's prior as Gaussian. Here those factors are
iteratively re-fit so that smoother-extrinsic times factor matches the
moments of smoother-extrinsic times the true discrete prior (the tilted
distribution). One sweep refines every symbol from the same smoother output
(synchronous schedule); damping and a hard revert on negative variances keep
the factors usable. The delivered result is always one extra smoother run
with the final factors.

Scalar ops (tilted_moments, moment_match, damp, negative_variance_control)
define the semantics; ksep_equalize applies the identical arithmetic
vectorized across the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, equalizers
from .channel import ChannelModel
from .equalizers import FactorSet, SmootherOutput
from .modem import _density_scale
from .numerics import DiscretePmf, GaussianBelief1D

MATCH_TOLERANCE = 1e-14


@dataclass(frozen=True)
class EpConfig:
    """Knobs of the refinement loop.

    sweeps: refinement passes before the delivering smoother run (0 disables
    refinement entirely, leaving a plain smoother). damping: weight on the
    new factor in the precision-domain blend, supplied per turbo iteration.
    """

    sweeps: int = 3
    variance_floor: float = 1e-8
    damping: float = 0.1

    def __post_init__(self):
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if not (self.variance_floor > 0):
            raise ValueError("variance_floor must be positive")
        if not (0.0 <= self.damping <= 1.0):
            raise ValueError("damping must lie in [0, 1]")


@dataclass(frozen=True)
class TiltedMoments:
    mean: complex
    variance: float


def tilted_moments(
    q_e: GaussianBelief1D, p: DiscretePmf, eps: float, field: str | None = None
) -> TiltedMoments:
    """Moments of the discrete prior reweighted by the Gaussian extrinsic.

    Log-domain with max subtraction; the variance is floored at eps so a
    point mass never produces a zero-variance factor.
    """
    if not (q_e.variance > 0):
        raise ValueError("extrinsic variance must be positive")
    if field is None:
        field = "real" if np.isrealobj(p.alphabet) else "complex"
    scale = _density_scale(field) * q_e.variance
    logw = np.log(np.maximum(p.probs, 1e-300)) - np.abs(p.alphabet - q_e.mean) ** 2 / scale
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mean = np.sum(w * p.alphabet)
    var = float(np.sum(w * np.abs(p.alphabet - mean) ** 2))
    if np.isrealobj(p.alphabet):
        mean = float(mean)
    return TiltedMoments(mean=mean, variance=max(var, eps))


def moment_match(q_e: GaussianBelief1D, tilted: TiltedMoments):
    """Factor moments that make extrinsic * factor reproduce the tilted moments.

    Returns (mean, variance); the variance may come out negative, which the
    damping/reversion stages handle. Returns None (no update, caller keeps
    the old factor) when the two variances coincide to relative 1e-14.
    """
    v_e = q_e.variance
    v_p = tilted.variance
    if abs(v_e - v_p) < MATCH_TOLERANCE * v_e:
        return None
    var = v_p * v_e / (v_e - v_p)
    mean = var * (tilted.mean / v_p - q_e.mean / v_e)
    return (mean, var)


def damp(old, new, beta: float):
    """Convex blend of old and new factors in precision coordinates."""
    if beta == 0.0:
        return old
    if beta == 1.0:
        return new
    mu_o, v_o = old
    mu_n, v_n = new
    p_o = 1.0 / v_o
    p_n = 1.0 / v_n
    p = beta * p_n + (1.0 - beta) * p_o
    wm = beta * mu_n * p_n + (1.0 - beta) * mu_o * p_o
    return (wm / p, 1.0 / p)


def negative_variance_control(damped, old):
    """Keep the damped factor unless its variance went negative (or broke)."""
    mean, var = damped
    if var < 0 or not np.isfinite(var) or not np.all(np.isfinite(mean)):
        return old
    return damped


def _as_prior_matrix(priors):
    """Accept a list of DiscretePmf (shared alphabet) or an (alphabet, matrix) pair."""
    if isinstance(priors, tuple):
        alphabet, probs = priors
        return np.atleast_1d(np.asarray(alphabet)), np.atleast_2d(np.asarray(probs, dtype=float))
    alphabet = priors[0].alphabet
    probs = np.stack([p.probs for p in priors])
    return alphabet, probs


def project_priors(alphabet: np.ndarray, probs: np.ndarray, eps: float):
    """Per-symbol Gaussian projection (mean, floored variance) of discrete priors.

    Same compiled route as the equalizer loop, so reductions that compare the
    two are bit-identical.
    """
    alph = np.ascontiguousarray(alphabet)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    _, mu, var = _kernels.prep_factors_kernel(probs, alph, np.abs(alph) ** 2, eps)
    return mu, var


def ksep_equalize(y: np.ndarray, ch: ChannelModel, priors, cfg: EpConfig) -> SmootherOutput:
    """Smoothing equalizer with EP-refined symbol factors.

    Factors start as the Gaussian projection of each symbol's discrete
    prior. Each sweep runs the full smoother, then refines all factors in
    parallel from its extrinsics; a final smoother run delivers the output,
    so cfg.sweeps + 1 smoother invocations total.
    """
    alphabet, probs = _as_prior_matrix(priors)
    eps = cfg.variance_floor
    beta = cfg.damping
    scale = _density_scale(ch.field)
    m = ch.memory

    # factor means live in the channel's field even for a real alphabet
    dtype = np.complex128 if ch.field == "complex" else np.float64
    alph_arr = np.ascontiguousarray(alphabet, dtype=dtype)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    energies = np.abs(alph_arr) ** 2
    es = float(np.mean(energies))  # alphabet energy, 1 for built constellations
    logp, mu, var = _kernels.prep_factors_kernel(probs, alph_arr, energies, eps)
    for _ in range(cfg.sweeps):
        # sweep outputs are consumed right here, so let the smoother reuse its
        # output buffers; only the delivering run below hands out fresh arrays
        out = equalizers.kalman_smoother_equalize(
            y, ch, FactorSet(mu, var, m, symbol_energy=es, variance_floor=eps),
            reuse_output=True,
        )
        # tilt, moment-match, damp, and revert-on-negative-variance for every
        # symbol at once; (mu, var) are updated in place
        _kernels.ep_update_kernel(
            out.extrinsic_means,
            out.extrinsic_variances,
            logp,
            alph_arr,
            energies,
            mu,
            var,
            beta,
            scale,
            eps,
            MATCH_TOLERANCE,
        )

    return equalizers.kalman_smoother_equalize(
        y, ch, FactorSet(mu, var, m, symbol_energy=es, variance_floor=eps)
    )
