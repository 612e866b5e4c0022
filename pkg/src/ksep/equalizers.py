"""Gaussian equalization of an ISI channel over sliding symbol states.

Three routes to the same posterior live here and keep each other honest:

* forward_pass / backward_pass / smooth: covariance-domain reference ops,
  composed step by step through numerics.hermitian_solve. Slow, transparent,
  used by the oracle tests.
* kalman_smoother_equalize: the production path. Same recursion in
  information form, fused into the compiled kernel, O(N L^2) per pass.
* block_lmmse / exact_posterior_enumeration: independent oracles. The block
  solve never factors the problem sequentially; the enumeration never makes
  a Gaussian assumption.

State convention: s_k = [u_{k-m}, ..., u_k], newest symbol last; beliefs are
produced for k = 1..N+m by the passes and k = 1..N after merging. Known-zero
symbols outside 1..N are pinned by near-deterministic pseudo-factors instead
of shrinking the state, so one code path covers the edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .channel import ChannelModel
from .modem import Constellation, _density_scale
from .numerics import (
    BOUNDARY_VARIANCE_SCALE,
    FLAT_VARIANCE_SCALE,
    DegenerateDivision,
    DiscretePmf,
    GaussianBelief1D,
    GaussianBeliefND,
    SingularMatrix,
    gaussian_divide_1d,
    hermitian_solve,
    symmetrize,
)

ENUMERATION_GUARD = 1_000_000
# relative eigenvalue floor applied when a merged precision goes indefinite
EIG_FLOOR_SCALE = 1e-10
DEFAULT_FACTOR_FLOOR = 1e-8


class TooLarge(Exception):
    """Enumeration oracle refused: alphabet**N exceeds the desk-scale guard."""


@dataclass
class FactorSet:
    """Per-symbol Gaussian prior factors plus implicit boundary pseudo-factors.

    Interior variances are floored on construction; the known-zero symbols
    around the block get mean 0 and variance BOUNDARY_VARIANCE_SCALE * E_s.
    """

    means: np.ndarray
    variances: np.ndarray
    memory: int
    symbol_energy: float = 1.0
    variance_floor: float = DEFAULT_FACTOR_FLOOR

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means))
        variances = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if means.shape != variances.shape or means.ndim != 1:
            raise ValueError("means and variances must be 1-d and equally long")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if not np.all(np.isfinite(variances)):
            raise ValueError("factor variances must be finite")
        self.means = means
        self.variances = np.maximum(variances, self.variance_floor * self.symbol_energy)

    def __len__(self) -> int:
        return self.means.size

    @property
    def boundary_variance(self) -> float:
        return BOUNDARY_VARIANCE_SCALE * self.symbol_energy

    def factor(self, i: int) -> GaussianBelief1D:
        """Factor of symbol index i, 0-based; out-of-range means boundary."""
        if 0 <= i < len(self):
            return GaussianBelief1D(mean=self.means[i], variance=float(self.variances[i]))
        return GaussianBelief1D(mean=0.0, variance=self.boundary_variance)

    def padded_variances(self) -> np.ndarray:
        m = self.memory
        out = np.full(len(self) + 2 * m, self.boundary_variance)
        out[m : m + len(self)] = self.variances
        return out

    def padded_means(self, dtype=None) -> np.ndarray:
        m = self.memory
        dtype = self.means.dtype if dtype is None else dtype
        out = np.zeros(len(self) + 2 * m, dtype=dtype)
        out[m : m + len(self)] = self.means
        return out

    @classmethod
    def uniform(cls, n: int, memory: int, symbol_energy: float = 1.0, field: str = "real"):
        dtype = np.complex128 if field == "complex" else np.float64
        return cls(
            means=np.zeros(n, dtype=dtype),
            variances=np.full(n, float(symbol_energy)),
            memory=memory,
            symbol_energy=symbol_energy,
        )


@dataclass
class SmootherOutput:
    """Smoothed state beliefs plus the symbol-level quantities read off them."""

    state_means: np.ndarray        # (N, L)
    state_covariances: np.ndarray  # (N, L, L)
    symbol_means: np.ndarray       # (N,)
    symbol_variances: np.ndarray   # (N,)
    extrinsic_means: np.ndarray    # (N,)
    extrinsic_variances: np.ndarray
    extrinsic_flat: np.ndarray = field(default=None)  # bool mask of substitutions

    def __len__(self) -> int:
        return self.symbol_means.size

    def state_belief(self, i: int) -> GaussianBeliefND:
        return GaussianBeliefND(self.state_means[i], self.state_covariances[i])

    def symbol_belief(self, i: int) -> GaussianBelief1D:
        return GaussianBelief1D(self.symbol_means[i], float(self.symbol_variances[i]))

    def extrinsic_belief(self, i: int) -> GaussianBelief1D:
        return GaussianBelief1D(self.extrinsic_means[i], float(self.extrinsic_variances[i]))


def _field_dtype(ch: ChannelModel):
    return np.complex128 if ch.field == "complex" else np.float64


def _obs_information(ch: ChannelModel):
    """Rank-1 precision and filter vector contributed by one observation."""
    g = ch.state_filter
    inv_nv = 1.0 / ch.noise_variance
    return g, np.outer(np.conj(g), g) * inv_nv, inv_nv


def forward_pass(y: np.ndarray, ch: ChannelModel, t: FactorSet) -> list[GaussianBeliefND]:
    """Filtering beliefs over s_k for k = 1..N+m, covariance-domain reference.

    Each step drops the oldest state coordinate (marginalization, done in
    information form on the submatrix), appends the next symbol with its
    prior factor, and absorbs one observation.
    """
    dtype = _field_dtype(ch)
    y = np.asarray(y, dtype=dtype)
    L, m = ch.length, ch.memory
    n_sym = len(t)
    if y.size != n_sym + m:
        raise ValueError(f"expected {n_sym + m} observations, got {y.size}")
    g, G, inv_nv = _obs_information(ch)
    pad_var = t.padded_variances()
    pad_mean = t.padded_means(dtype)

    cov = np.eye(L, dtype=dtype) * t.boundary_variance
    mean = np.zeros(L, dtype=dtype)
    out: list[GaussianBeliefND] = []
    for k in range(1, y.size + 1):
        J = np.zeros((L, L), dtype=dtype)
        eta = np.zeros(L, dtype=dtype)
        if m > 0:
            j_sub = hermitian_solve(cov[1:, 1:], np.eye(L - 1, dtype=dtype))
            J[: L - 1, : L - 1] = j_sub
            eta[: L - 1] = j_sub @ mean[1:]
        pos = k + m - 1  # factor slot of the entering symbol
        J[L - 1, L - 1] += 1.0 / pad_var[pos]
        eta[L - 1] += pad_mean[pos] / pad_var[pos]
        J += G
        eta += np.conj(g) * (y[k - 1] * inv_nv)
        cov = symmetrize(hermitian_solve(J, np.eye(L, dtype=dtype)))
        mean = hermitian_solve(J, eta)
        out.append(GaussianBeliefND(mean, cov))
    return out


def _reverse_problem(y, ch: ChannelModel, t: FactorSet):
    ch_r = ChannelModel(
        taps=np.asarray(ch.taps)[::-1].copy(),
        noise_variance=ch.noise_variance,
        field=ch.field,
    )
    t_r = FactorSet(
        means=t.means[::-1].copy(),
        variances=t.variances[::-1].copy(),
        memory=t.memory,
        symbol_energy=t.symbol_energy,
        variance_floor=t.variance_floor,
    )
    return np.asarray(y)[::-1].copy(), ch_r, t_r


def _flip(b: GaussianBeliefND) -> GaussianBeliefND:
    return GaussianBeliefND(b.mean[::-1].copy(), b.covariance[::-1, ::-1].copy())


def backward_pass(y: np.ndarray, ch: ChannelModel, t: FactorSet) -> list[GaussianBeliefND]:
    """Beliefs over s_k from the future observations y_{k..N+m} only.

    Realized by filtering the time-reversed problem and flipping each state
    back into original coordinate order, so entry p of belief k still refers
    to u_{k-m+p}.
    """
    y_r, ch_r, t_r = _reverse_problem(y, ch, t)
    fwd_r = forward_pass(y_r, ch_r, t_r)
    K = len(fwd_r)
    return [_flip(fwd_r[K - k]) for k in range(1, K + 1)]


def smooth(
    q_fwd: list[GaussianBeliefND],
    q_bwd: list[GaussianBeliefND],
    y: np.ndarray,
    ch: ChannelModel,
    t: FactorSet,
) -> list[GaussianBeliefND]:
    """Merge the two filtering passes into posterior state beliefs, k = 1..N.

    Adding the two information forms double-counts exactly one observation
    and the prior factors of the L symbols in the state; both are subtracted.
    An indefinite merged precision (possible with refined factors) is
    eigenvalue-floored rather than rejected.
    """
    dtype = _field_dtype(ch)
    y = np.asarray(y, dtype=dtype)
    L, m = ch.length, ch.memory
    n_sym = len(t)
    if len(q_fwd) != n_sym + m or len(q_bwd) != n_sym + m:
        raise ValueError("pass lengths inconsistent with the factor set")
    g, G, inv_nv = _obs_information(ch)
    pad_var = t.padded_variances()
    pad_mean = t.padded_means(dtype)

    out: list[GaussianBeliefND] = []
    eye = np.eye(L, dtype=dtype)
    for k in range(1, n_sym + 1):
        jf = hermitian_solve(q_fwd[k - 1].covariance, eye)
        jb = hermitian_solve(q_bwd[k - 1].covariance, eye)
        eta = jf @ q_fwd[k - 1].mean + jb @ q_bwd[k - 1].mean
        J = jf + jb - G
        window = slice(k - 1, k - 1 + L)  # factor slots of symbols k-m..k
        J[np.arange(L), np.arange(L)] -= 1.0 / pad_var[window]
        eta -= np.conj(g) * (y[k - 1] * inv_nv)
        eta -= pad_mean[window] / pad_var[window]
        J = symmetrize(J)
        w = np.linalg.eigvalsh(J)
        if w[0] <= 0:
            w_all, v = np.linalg.eigh(J)
            floor = EIG_FLOOR_SCALE * np.trace(J).real
            w_all = np.maximum(w_all, floor)
            J = symmetrize((v * w_all) @ v.conj().T)
        cov = symmetrize(hermitian_solve(J, eye))
        mean = hermitian_solve(J, eta)
        out.append(GaussianBeliefND(mean, cov))
    return out


def marginalize_symbol(beliefs: list[GaussianBeliefND]) -> list[GaussianBelief1D]:
    """Symbol posterior u_k = last coordinate of the smoothed state belief."""
    out = []
    for b in beliefs:
        out.append(GaussianBelief1D(mean=b.mean[-1], variance=float(b.covariance[-1, -1].real)))
    return out


def extrinsic(
    q: GaussianBelief1D, t_k: GaussianBelief1D, symbol_energy: float = 1.0
) -> GaussianBelief1D:
    """Posterior divided by the symbol's own prior factor.

    A division that degenerates (variances numerically equal) or comes back
    with nonpositive variance carries no usable information and is replaced
    by the flat belief.
    """
    try:
        e = gaussian_divide_1d(q, t_k)
    except DegenerateDivision:
        return GaussianBelief1D(mean=0.0, variance=FLAT_VARIANCE_SCALE * symbol_energy)
    if not (e.variance > 0) or not np.isfinite(e.variance):
        return GaussianBelief1D(mean=0.0, variance=FLAT_VARIANCE_SCALE * symbol_energy)
    return GaussianBelief1D(mean=e.mean, variance=e.variance)


def extrinsic_arrays(
    means: np.ndarray,
    variances: np.ndarray,
    t: FactorSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized extrinsic extraction; the compiled route mirrors this
    double for double. Agrees with the scalar op to rounding.

    Returns (means, variances, substituted) where substituted marks symbols
    that received the flat belief.
    """
    v = np.asarray(variances, dtype=float)
    vt = t.variances
    mu = np.asarray(means)
    mut = t.means
    good = (vt - v) >= 1e-14 * vt  # positive and not degenerate
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1/(1/v - 1/vt) and the matching mean, with one division
        den = 1.0 / (vt - v)
        e_var = v * vt * den
        e_mean = vt * den * (mu - v * (mut / vt))
    flat_var = FLAT_VARIANCE_SCALE * t.symbol_energy
    e_var = np.where(good, e_var, flat_var)
    e_mean = np.where(good, e_mean, 0.0)
    return e_mean, e_var, ~good


# Single-slot buffer caches for the compiled smoother, keyed by problem shape.
# Large information arrays at long channel memory run to tens of megabytes;
# allocating them per call costs more in page faults than the filtering does.
# Hot loops (refinement sweeps, Monte-Carlo frames) reuse one shape for many
# calls, so one slot suffices. Outputs get a separate slot because handing a
# caller arrays that the next call overwrites is only safe when the caller
# opted in.
_scratch_slot: list = [None]
_output_slot: list = [None]


def _smoother_scratch(K: int, L: int, dtype) -> tuple:
    key = (K, L, np.dtype(dtype).char)
    slot = _scratch_slot[0]
    if slot is not None and slot[0] == key:
        return slot[1]
    Lt = max(L - 1, 1)
    bufs = (
        np.empty((K, L, L), dtype=dtype),  # forward information matrices
        np.empty((K, L), dtype=dtype),  # forward information vectors
        np.empty((K, L, L), dtype=dtype),  # reversed-pass information matrices
        np.empty((K, L), dtype=dtype),  # reversed-pass information vectors
        np.empty(L, dtype=dtype),  # noise-scaled conjugate taps
        np.empty((L, L), dtype=dtype),  # their outer product with the taps
        np.empty(L, dtype=dtype),  # same pair for the reversed taps
        np.empty((L, L), dtype=dtype),
        np.empty((Lt, Lt), dtype=dtype),  # downdate scratch
        np.empty(Lt, dtype=dtype),
        np.empty(K, dtype=dtype),  # reversed observations
        np.empty(L, dtype=dtype),  # reversed taps
        np.empty(K + L - 1, dtype=np.float64),  # reversed factor precisions
        np.empty(K + L - 1, dtype=dtype),  # reversed weighted means
        np.empty(K + L - 1, dtype=np.float64),  # padded factor precisions
        np.empty(K + L - 1, dtype=dtype),  # padded weighted means
    )
    _scratch_slot[0] = (key, bufs)
    return bufs


def _smoother_outputs(n: int, L: int, dtype, reuse: bool) -> tuple:
    key = (n, L, np.dtype(dtype).char)
    if reuse:
        slot = _output_slot[0]
        if slot is not None and slot[0] == key:
            return slot[1]
    bufs = (
        np.empty(n, dtype=dtype),  # symbol marginal means
        np.empty(n, dtype=np.float64),  # symbol marginal variances
        np.empty((n, L), dtype=dtype),  # state means
        np.empty((n, L, L), dtype=dtype),  # state covariances
        np.empty(n, dtype=dtype),  # extrinsic means
        np.empty(n, dtype=np.float64),  # extrinsic variances
        np.empty(n, dtype=np.bool_),  # flat-substitution marks
    )
    if reuse:
        _output_slot[0] = (key, bufs)
    return bufs


def kalman_smoother_equalize(
    y: np.ndarray, ch: ChannelModel, t: FactorSet, *, reuse_output: bool = False
) -> SmootherOutput:
    """Full two-filter smoothing equalizer over one frame.

    Forward and backward information filters (the backward one is the forward
    recursion on the reversed problem), a per-symbol merge, symbol marginals
    from the last state coordinate, and flat-substituted extrinsics.

    With reuse_output=True the returned arrays live in a shared buffer slot
    that the next reuse_output call of the same shape overwrites. Only for
    callers that consume the output before calling again; the default always
    returns freshly owned arrays.
    """
    dtype = _field_dtype(ch)
    y = np.ascontiguousarray(y, dtype=dtype)
    m = ch.memory
    if y.size != len(t) + m:
        raise ValueError(f"expected {len(t) + m} observations, got {y.size}")
    g = np.ascontiguousarray(ch.state_filter, dtype=dtype)
    K = y.size
    L = m + 1
    scratch = _smoother_scratch(K, L, dtype)
    fprec, fwmean = scratch[14], scratch[15]
    _kernels.pad_factor_arrays(
        np.ascontiguousarray(t.means, dtype=dtype), t.variances, m, t.boundary_variance,
        fprec, fwmean,
    )
    outs = _smoother_outputs(len(t), L, dtype, reuse_output)
    marg_mean, marg_var, st_means, st_covs, e_mean, e_var, flat = outs
    status = _kernels.smoother_kernel(
        y, g, float(ch.noise_variance), fprec, fwmean, 1.0 / t.boundary_variance,
        *scratch[:14], marg_mean, marg_var, st_means, st_covs,
    )
    if status != _kernels.OK:
        raise SingularMatrix("smoothing merge could not be factorized")
    _kernels.extrinsic_kernel(
        marg_mean, marg_var, t.variances, fwmean, m,
        FLAT_VARIANCE_SCALE * t.symbol_energy, e_mean, e_var, flat,
    )
    return SmootherOutput(
        state_means=st_means,
        state_covariances=st_covs,
        symbol_means=marg_mean,
        symbol_variances=marg_var,
        extrinsic_means=e_mean,
        extrinsic_variances=e_var,
        extrinsic_flat=flat,
    )


def convolution_matrix(taps: np.ndarray, n_symbols: int) -> np.ndarray:
    """Tall banded H with y = H u for the zero-padded block model."""
    taps = np.atleast_1d(np.asarray(taps))
    L = taps.size
    H = np.zeros((n_symbols + L - 1, n_symbols), dtype=taps.dtype)
    for j in range(n_symbols):
        H[j : j + L, j] = taps
    return H


def block_lmmse(
    y: np.ndarray,
    ch: ChannelModel,
    prior_means: np.ndarray,
    prior_variances: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Direct dense MMSE solve of the whole block; the Gaussian oracle.

    Builds the (N+m) x N convolution matrix explicitly, so only suitable at
    desk scale. Returns per-symbol posterior means and variances.
    """
    dtype = _field_dtype(ch)
    y = np.asarray(y, dtype=dtype)
    mu_t = np.asarray(prior_means, dtype=dtype)
    var_t = np.asarray(prior_variances, dtype=float)
    n_sym = mu_t.size
    if y.size != n_sym + ch.memory:
        raise ValueError(f"expected {n_sym + ch.memory} observations, got {y.size}")
    if np.any(var_t <= 0):
        raise ValueError("prior variances must be positive")
    H = convolution_matrix(np.asarray(ch.taps, dtype=dtype), n_sym)
    inv_nv = 1.0 / ch.noise_variance
    J = symmetrize(H.conj().T @ H * inv_nv + np.diag(1.0 / var_t))
    cov = symmetrize(hermitian_solve(J, np.eye(n_sym, dtype=dtype)))
    mean = hermitian_solve(J, H.conj().T @ y * inv_nv + mu_t / var_t)
    return mean, np.real(np.diag(cov)).copy()


@dataclass
class EnumerationResult:
    """Exact discrete posteriors from brute-force sequence enumeration.

    states[k] lists the distinct realizations of s_{k+1} as rows; the three
    weight lists are aligned with it. observation_loglik and window_logprior
    are the per-state pieces the smoothing identity divides out.
    """

    symbol_pmfs: list[DiscretePmf]
    states: list[np.ndarray] | None = None
    posterior: list[np.ndarray] | None = None
    forward: list[np.ndarray] | None = None
    backward: list[np.ndarray] | None = None
    observation_loglik: list[np.ndarray] | None = None
    window_logprior: list[np.ndarray] | None = None


def _normalized_exp(logw: np.ndarray) -> np.ndarray:
    w = np.exp(logw - logw.max())
    return w / w.sum()


def exact_posterior_enumeration(
    y: np.ndarray,
    ch: ChannelModel,
    priors: list[DiscretePmf],
    c: Constellation,
    detail: bool = True,
) -> EnumerationResult:
    """Brute-force Bayes over every length-N symbol sequence.

    The only approximation-free route: weight each sequence by its full
    likelihood times its prior mass, then marginalize. With detail=True the
    per-state forward/backward/posterior distributions are grouped out as
    well (memory grows with M^N * (N+m), keep N small).
    """
    n_sym = len(priors)
    M = c.points.size
    if float(M) ** n_sym > ENUMERATION_GUARD:
        raise TooLarge(f"{M}^{n_sym} sequences exceed the enumeration guard")
    dtype = _field_dtype(ch)
    y = np.asarray(y, dtype=dtype)
    L, m = ch.length, ch.memory
    K = n_sym + m
    if y.size != K:
        raise ValueError(f"expected {K} observations, got {y.size}")

    grids = np.indices((M,) * n_sym).reshape(n_sym, -1).T  # (M^N, N) alphabet indices
    n_seq = grids.shape[0]
    logprior_sym = np.stack(
        [np.log(np.maximum(priors[j].probs, 1e-300))[grids[:, j]] for j in range(n_sym)],
        axis=1,
    )
    logprior_total = logprior_sym.sum(axis=1)

    padded = np.zeros((n_seq, n_sym + 2 * m), dtype=dtype)
    padded[:, m : m + n_sym] = c.points[grids]
    g = np.asarray(ch.state_filter, dtype=dtype)
    scale = _density_scale(ch.field) * ch.noise_variance
    if ch.field == "real":
        log_norm = -0.5 * np.log(2.0 * np.pi * ch.noise_variance)
    else:
        log_norm = -np.log(np.pi * ch.noise_variance)

    loglik = np.empty((n_seq, K))
    for k in range(1, K + 1):
        z = padded[:, k - 1 : k - 1 + L] @ g
        loglik[:, k - 1] = -np.abs(y[k - 1] - z) ** 2 / scale + log_norm

    total = loglik.sum(axis=1) + logprior_total
    w_post = _normalized_exp(total)

    symbol_pmfs = []
    for j in range(n_sym):
        pp = np.bincount(grids[:, j], weights=w_post, minlength=M)
        symbol_pmfs.append(DiscretePmf(alphabet=c.points, probs=pp / pp.sum()))

    if not detail:
        return EnumerationResult(symbol_pmfs=symbol_pmfs)

    prefix = np.cumsum(loglik, axis=1)
    suffix = loglik[:, ::-1].cumsum(axis=1)[:, ::-1]
    idx_padded = np.full((n_seq, n_sym + 2 * m), -1, dtype=np.int32)
    idx_padded[:, m : m + n_sym] = grids

    states, post_l, fwd_l, bwd_l, obs_l, win_l = [], [], [], [], [], []
    for k in range(1, n_sym + 1):
        rows = idx_padded[:, k - 1 : k - 1 + L]
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        vals = np.where(uniq >= 0, c.points[np.maximum(uniq, 0)], 0).astype(dtype)
        group = lambda wv: np.bincount(inv, weights=wv, minlength=uniq.shape[0])

        post = group(w_post)
        fwd = group(_normalized_exp(prefix[:, k - 1] + logprior_total))
        bwd = group(_normalized_exp(suffix[:, k - 1] + logprior_total))

        # per-state quantities: constant within each group, take any member
        first = np.zeros(uniq.shape[0], dtype=np.int64)
        first[inv[::-1]] = np.arange(n_seq - 1, -1, -1)
        obs = loglik[first, k - 1]
        win_cols = [j for j in range(max(1, k - m), k + 1) if j <= n_sym]
        win = (
            logprior_sym[:, [j - 1 for j in win_cols]].sum(axis=1)[first]
            if win_cols
            else np.zeros(uniq.shape[0])
        )

        states.append(vals)
        post_l.append(post / post.sum())
        fwd_l.append(fwd / fwd.sum())
        bwd_l.append(bwd / bwd.sum())
        obs_l.append(obs)
        win_l.append(win)

    return EnumerationResult(
        symbol_pmfs=symbol_pmfs,
        states=states,
        posterior=post_l,
        forward=fwd_l,
        backward=bwd_l,
        observation_loglik=obs_l,
        window_logprior=win_l,
    )
