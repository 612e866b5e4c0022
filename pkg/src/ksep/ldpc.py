"""(3,6)-regular rate-1/2 LDPC code: construction, encoding, BP decoding.

Construction is progressive-edge-growth: every new edge goes to the check
node farthest from the variable in the current graph (unreached beats far),
minimum degree and seeded random tie-breaks below that. Degrees come out
exactly (3,6) because only non-full checks are candidates; rank deficiency
or a placement dead-end triggers a bounded retry with a derived sub-seed.

The systematic encoder falls out of GF(2) elimination on a bit-packed copy
of H with column pivoting: pivot columns carry parity, the rest carry the
info word, and parity = E @ info (mod 2) for the recorded dense E.

Decoding is flooding sum-product in the tanh domain with leave-one-out
prefix/suffix products (no division), clamped at 1 - 1e-12, early exit on a
zero syndrome of the hard decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from .modem import LengthMismatch

VAR_DEGREE = 3
CHK_DEGREE = 6
MAX_BUILD_ATTEMPTS = 50
TANH_CLAMP = 1.0 - 1e-12


class ConstructionFailed(Exception):
    """PEG placement or rank check failed on every attempted sub-seed."""


@dataclass
class LdpcCode:
    """One constructed code instance with its derived systematic encoder."""

    n: int
    k: int
    check_neighbors: np.ndarray     # (n_chk, 6) variable indices per check
    variable_neighbors: np.ndarray  # (n, 3) check indices per variable
    parity_positions: np.ndarray    # pivot columns, length n - k
    info_positions: np.ndarray      # remaining columns, length k
    encoder: np.ndarray             # (n - k, k) uint8, parity = encoder @ info mod 2
    seed: int | None = None
    _encoder_f32: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self._encoder_f32 = self.encoder.astype(np.float32)

    @property
    def n_checks(self) -> int:
        return self.n - self.k

    def dense_parity_check(self) -> np.ndarray:
        h = np.zeros((self.n_checks, self.n), dtype=np.uint8)
        rows = np.repeat(np.arange(self.n_checks), self.check_neighbors.shape[1])
        h[rows, self.check_neighbors.ravel()] = 1
        return h

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits)
        return bits[self.check_neighbors].sum(axis=1) % 2


@dataclass
class DecodeResult:
    hard_bits: np.ndarray
    posterior_llrs: np.ndarray
    extrinsic_llrs: np.ndarray
    converged: bool
    iterations_used: int


@njit(cache=True)
def _peg_place(n, n_chk, dv, dc, seed, var_adj, chk_adj, var_deg, chk_deg):
    """Greedy farthest-check edge placement. Returns 0 on success."""
    np.random.seed(seed)
    dist_chk = np.empty(n_chk, dtype=np.int32)
    seen_var = np.empty(n, dtype=np.int8)
    frontier = np.empty(n, dtype=np.int32)
    nxt = np.empty(n, dtype=np.int32)
    for v in range(n):
        for _ in range(dv):
            # BFS over the bipartite graph from v; dist_chk = level of each check
            dist_chk[:] = -1
            seen_var[:] = 0
            frontier[0] = v
            seen_var[v] = 1
            fn = 1
            depth = 0
            while fn > 0:
                nn = 0
                for fi in range(fn):
                    vv = frontier[fi]
                    for ei in range(var_deg[vv]):
                        cc = var_adj[vv, ei]
                        if dist_chk[cc] < 0:
                            dist_chk[cc] = depth
                            for ej in range(chk_deg[cc]):
                                ww = chk_adj[cc, ej]
                                if seen_var[ww] == 0:
                                    seen_var[ww] = 1
                                    nxt[nn] = ww
                                    nn += 1
                tmp = frontier
                frontier = nxt
                nxt = tmp
                fn = nn
                depth += 1
            # choose among non-full, non-adjacent checks:
            # unreached first, then largest distance, then smallest degree;
            # ties broken uniformly (reservoir) from the seeded stream
            best = -1
            best_unreached = -1
            best_dist = -1
            best_deg = dc + 1
            ties = 0
            for c in range(n_chk):
                if chk_deg[c] >= dc:
                    continue
                d = dist_chk[c]
                if d == 0:
                    continue  # already a neighbor of v
                unreached = 1 if d < 0 else 0
                if best < 0:
                    better = True
                elif unreached != best_unreached:
                    better = unreached > best_unreached
                elif unreached == 0 and d != best_dist:
                    better = d > best_dist
                elif chk_deg[c] != best_deg:
                    better = chk_deg[c] < best_deg
                else:
                    better = False
                    ties += 1
                    if np.random.random() < 1.0 / ties:
                        best = c
                if better:
                    best = c
                    best_unreached = unreached
                    best_dist = d
                    best_deg = chk_deg[c]
                    ties = 1
            if best < 0:
                return 1
            var_adj[v, var_deg[v]] = best
            chk_adj[best, chk_deg[best]] = v
            var_deg[v] += 1
            chk_deg[best] += 1
    return 0


def _pack_rows(h: np.ndarray) -> np.ndarray:
    n_rows, n_cols = h.shape
    words = (n_cols + 63) // 64
    packed = np.zeros((n_rows, words), dtype=np.uint64)
    cols = np.arange(n_cols)
    for w in range(words):
        sel = (cols >> 6) == w
        bits = h[:, sel].astype(np.uint64)
        shifts = (cols[sel] & 63).astype(np.uint64)
        packed[:, w] = (bits << shifts[None, :]).sum(axis=1, dtype=np.uint64)
    return packed


def _gf2_systematic(h: np.ndarray):
    """Row-reduce a copy of H, pivoting by column scan. Returns (pivots, E) or None."""
    n_chk, n = h.shape
    work = _pack_rows(h)
    pivot_cols = []
    r = 0
    for c in range(n):
        w = c >> 6
        b = np.uint64(c & 63)
        col = (work[r:, w] >> b) & np.uint64(1)
        nz = np.nonzero(col)[0]
        if nz.size == 0:
            continue
        pr = r + int(nz[0])
        if pr != r:
            work[[r, pr]] = work[[pr, r]]
        col_all = (work[:, w] >> b) & np.uint64(1)
        col_all[r] = 0
        rows = np.nonzero(col_all)[0]
        if rows.size:
            work[rows] ^= work[r]
        pivot_cols.append(c)
        r += 1
        if r == n_chk:
            break
    if r < n_chk:
        return None
    pivots = np.asarray(pivot_cols, dtype=np.int64)
    info_cols = np.setdiff1d(np.arange(n), pivots)
    enc = ((work[:, info_cols >> 6] >> (info_cols & 63).astype(np.uint64)) & np.uint64(1)).astype(
        np.uint8
    )
    return pivots, info_cols, enc


def build_regular_code(n: int, seed: int) -> LdpcCode:
    """Deterministic (3,6)-regular code for a given length and seed.

    Retries with derived sub-seeds on placement dead-ends and rank-deficient
    draws. A draw containing a length-4 cycle also triggers a retry; if every
    attempt has one (unavoidable at the smallest lengths), the first
    full-rank draw is returned, so degrees and rank always hold.
    """
    if n < 24 or n % 2:
        raise ValueError("codeword length must be even and >= 24")
    n_chk = n // 2
    fallback = None
    for attempt in range(MAX_BUILD_ATTEMPTS):
        sub_seed = (int(seed) + 1000003 * attempt) & 0x7FFFFFFF
        var_adj = np.full((n, VAR_DEGREE), -1, dtype=np.int32)
        chk_adj = np.full((n_chk, CHK_DEGREE), -1, dtype=np.int32)
        var_deg = np.zeros(n, dtype=np.int32)
        chk_deg = np.zeros(n_chk, dtype=np.int32)
        status = _peg_place(
            n, n_chk, VAR_DEGREE, CHK_DEGREE, sub_seed, var_adj, chk_adj, var_deg, chk_deg
        )
        if status != 0:
            continue
        h = np.zeros((n_chk, n), dtype=np.uint8)
        rows = np.repeat(np.arange(n_chk), CHK_DEGREE)
        h[rows, chk_adj.ravel()] = 1
        reduced = _gf2_systematic(h)
        if reduced is None:
            continue  # rank-deficient draw, retry
        pivots, info_cols, enc = reduced
        code = LdpcCode(
            n=n,
            k=n - n_chk,
            check_neighbors=np.sort(chk_adj, axis=1),
            variable_neighbors=np.sort(var_adj, axis=1),
            parity_positions=pivots,
            info_positions=info_cols,
            encoder=enc,
            seed=int(seed),
        )
        if not has_four_cycle(code):
            return code
        if fallback is None:
            fallback = code
    if fallback is not None:
        return fallback
    raise ConstructionFailed(f"no valid code after {MAX_BUILD_ATTEMPTS} attempts (n={n})")


@lru_cache(maxsize=8)
def cached_code(n: int, seed: int) -> LdpcCode:
    """Per-process cache; simulation campaigns reuse one seeded code."""
    return build_regular_code(n, seed)


def encode(code: LdpcCode, info_bits: np.ndarray) -> np.ndarray:
    info_bits = np.asarray(info_bits)
    if info_bits.size != code.k:
        raise LengthMismatch(f"expected {code.k} info bits, got {info_bits.size}")
    parity = code._encoder_f32 @ info_bits.astype(np.float32)
    out = np.empty(code.n, dtype=np.uint8)
    out[code.info_positions] = info_bits.astype(np.uint8)
    out[code.parity_positions] = (parity % 2.0).astype(np.uint8)
    return out


@njit(cache=True)
def _bp_flood(llr, edge_var, n_chk, chk_deg, max_iter):
    """Flooding sum-product; returns (posterior, iterations, converged)."""
    n = llr.shape[0]
    n_edges = edge_var.shape[0]
    v2c = np.empty(n_edges)
    c2v = np.zeros(n_edges)
    total = llr.copy()
    th = np.empty(64)
    pre = np.empty(64)
    suf = np.empty(64)
    for e in range(n_edges):
        v2c[e] = llr[edge_var[e]]
    iterations = 0
    converged = False
    while iterations < max_iter and not converged:
        iterations += 1
        for c in range(n_chk):
            base = c * chk_deg
            for i in range(chk_deg):
                th[i] = np.tanh(0.5 * v2c[base + i])
            run = 1.0
            for i in range(chk_deg):
                pre[i] = run
                run *= th[i]
            run = 1.0
            for i in range(chk_deg - 1, -1, -1):
                suf[i] = run
                run *= th[i]
            for i in range(chk_deg):
                p = pre[i] * suf[i]
                if p > TANH_CLAMP:
                    p = TANH_CLAMP
                elif p < -TANH_CLAMP:
                    p = -TANH_CLAMP
                c2v[base + i] = 2.0 * np.arctanh(p)
        for v in range(n):
            total[v] = llr[v]
        for e in range(n_edges):
            total[edge_var[e]] += c2v[e]
        for e in range(n_edges):
            v2c[e] = total[edge_var[e]] - c2v[e]
        converged = True
        for c in range(n_chk):
            base = c * chk_deg
            par = 0
            for i in range(chk_deg):
                if total[edge_var[base + i]] < 0.0:
                    par ^= 1
            if par == 1:
                converged = False
                break
    return total, iterations, converged


def decode_bp(code: LdpcCode, channel_llrs: np.ndarray, max_iter: int = 100) -> DecodeResult:
    """Sum-product decoding of one frame; non-convergence is reported, not raised."""
    llr = np.ascontiguousarray(channel_llrs, dtype=np.float64)
    if llr.size != code.n:
        raise LengthMismatch(f"expected {code.n} LLRs, got {llr.size}")
    if not np.all(np.isfinite(llr)):
        raise ValueError("channel LLRs must be finite")
    edge_var = np.ascontiguousarray(code.check_neighbors.ravel().astype(np.int64))
    total, iterations, converged = _bp_flood(
        llr, edge_var, code.n_checks, CHK_DEGREE, int(max_iter)
    )
    return DecodeResult(
        hard_bits=(total < 0).astype(np.uint8),
        posterior_llrs=total,
        extrinsic_llrs=total - llr,
        converged=bool(converged),
        iterations_used=int(iterations),
    )


def write_code(code: LdpcCode, path) -> None:
    """Adjacency text: one parity-check row per line, space-separated columns."""
    with open(path, "w") as fh:
        for row in code.check_neighbors:
            fh.write(" ".join(str(int(v)) for v in sorted(row)) + "\n")


def read_code(path) -> LdpcCode:
    """Rebuild a code (and re-derive its encoder) from adjacency text."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(tok) for tok in line.split()])
    n_chk = len(rows)
    chk_adj = np.asarray(rows, dtype=np.int32)
    n = int(chk_adj.max()) + 1
    if chk_adj.shape[1] != CHK_DEGREE:
        raise ValueError("row weight mismatch in adjacency file")
    var_lists = [[] for _ in range(n)]
    for c, row in enumerate(rows):
        for v in row:
            var_lists[v].append(c)
    if any(len(lst) != VAR_DEGREE for lst in var_lists):
        raise ValueError("column weight mismatch in adjacency file")
    h = np.zeros((n_chk, n), dtype=np.uint8)
    h[np.repeat(np.arange(n_chk), CHK_DEGREE), chk_adj.ravel()] = 1
    reduced = _gf2_systematic(h)
    if reduced is None:
        raise ConstructionFailed("imported parity-check matrix is rank deficient")
    pivots, info_cols, enc = reduced
    return LdpcCode(
        n=n,
        k=n - n_chk,
        check_neighbors=np.sort(chk_adj, axis=1),
        variable_neighbors=np.asarray(var_lists, dtype=np.int32),
        parity_positions=pivots,
        info_positions=info_cols,
        encoder=enc,
        seed=None,
    )


def has_four_cycle(code: LdpcCode) -> bool:
    """True when two variables share two checks (girth 4)."""
    pairs = []
    for a in range(VAR_DEGREE):
        for b in range(a + 1, VAR_DEGREE):
            lo = np.minimum(code.variable_neighbors[:, a], code.variable_neighbors[:, b])
            hi = np.maximum(code.variable_neighbors[:, a], code.variable_neighbors[:, b])
            pairs.append(lo.astype(np.int64) * code.n_checks + hi)
    pairs = np.concatenate(pairs)
    return np.unique(pairs).size != pairs.size
