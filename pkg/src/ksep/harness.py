"""Seeded Monte-Carlo BER sweeps and the command-line front end.

A sweep walks Eb/N0 points, draws fresh channels per point, and runs full
transmit -> equalize -> decode chains per channel. Every random draw comes
from a SeedSequence keyed by (master seed, role, point, channel[, frame]),
so results are bit-identical for a fixed master seed no matter how many
workers run or how the pool schedules tasks. Timing columns are the one
nondeterministic output; --no-timing zeroes them for byte-stable files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, replace
from multiprocessing import Pool

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .channel import ChannelModel, ebn0_to_noise_variance, random_channel, transmit
from .equalizers import TooLarge, exact_posterior_enumeration
from .ldpc import build_regular_code, encode
from .modem import build_constellation, map_bits
from .numerics import SingularMatrix
from .turbo import (
    EQUALIZER_NAMES,
    TurboConfig,
    pad_codeword,
    symbols_for_code,
    turbo_equalize,
)

WORKERS_ENV = "KSEP_WORKERS"
ENUMERATION_GUARD = 1_000_000


class ConfigError(ValueError):
    """Invalid simulation configuration; maps to CLI exit code 1."""


@dataclass(frozen=True)
class SimConfig:
    """One sweep's full protocol. Defaults follow the reference experiment."""

    constellation_kind: str = "pam"
    constellation_order: int = 4
    channel_length: int = 5
    field: str = "real"
    equalizer: str = "ksep"
    ebn0_points: tuple[float, ...] = (9.0, 10.0, 11.0)
    channels_per_point: int = 10
    frames_per_channel: int = 200
    n_code_bits: int = 4096
    turbo_iterations: int = 5
    ep_sweeps: int = 3
    variance_floor: float = 1e-8
    llr_clip: float = 5.0
    bp_iterations: int = 100
    master_seed: int = 0
    code_seed: int = 1
    workers: int = 1
    label: str = ""


def validate_config(cfg: SimConfig) -> None:
    if cfg.constellation_kind not in ("pam", "qam"):
        raise ConfigError(f"unknown constellation kind {cfg.constellation_kind!r}")
    order = cfg.constellation_order
    if order < 2 or order & (order - 1):
        raise ConfigError("constellation order must be a power of two >= 2")
    if cfg.field not in ("real", "complex"):
        raise ConfigError(f"field must be 'real' or 'complex', got {cfg.field!r}")
    if cfg.constellation_kind == "qam" and cfg.field != "complex":
        raise ConfigError("qam symbols are complex; set field = 'complex'")
    if cfg.equalizer not in EQUALIZER_NAMES:
        raise ConfigError(
            f"equalizer must be one of {', '.join(EQUALIZER_NAMES)}; got {cfg.equalizer!r}"
        )
    if cfg.channel_length < 1:
        raise ConfigError("channel_length must be >= 1")
    if not cfg.ebn0_points:
        raise ConfigError("ebn0_points must be non-empty")
    if cfg.channels_per_point < 1 or cfg.frames_per_channel < 1:
        raise ConfigError("channels_per_point and frames_per_channel must be >= 1")
    if cfg.n_code_bits < 24 or cfg.n_code_bits % 2:
        raise ConfigError("n_code_bits must be even and >= 24")
    if cfg.turbo_iterations < 0 or cfg.ep_sweeps < 0:
        raise ConfigError("turbo_iterations and ep_sweeps must be >= 0")
    if not (cfg.llr_clip > 0) or not (cfg.variance_floor > 0):
        raise ConfigError("llr_clip and variance_floor must be positive")
    if cfg.bp_iterations < 1:
        raise ConfigError("bp_iterations must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.equalizer == "exact-oracle":
        q = int(np.log2(order))
        n_sym, _ = symbols_for_code(cfg.n_code_bits, q)
        if float(order) ** n_sym > ENUMERATION_GUARD:
            raise ConfigError(
                f"exact-oracle would enumerate {order}^{n_sym} sequences; the guard "
                f"is {ENUMERATION_GUARD:.0e} and any codeword of >= 24 bits exceeds it"
            )


_SECTION_KEYS = {
    "constellation": {"kind": "constellation_kind", "order": "constellation_order"},
    "channel": {"length": "channel_length", "field": "field"},
    "sweep": {
        "equalizer": "equalizer",
        "ebn0_db": "ebn0_points",
        "channels_per_point": "channels_per_point",
        "frames_per_channel": "frames_per_channel",
        "master_seed": "master_seed",
        "workers": "workers",
        "label": "label",
    },
    "code": {"n": "n_code_bits", "seed": "code_seed"},
    "turbo": {
        "iterations": "turbo_iterations",
        "ep_sweeps": "ep_sweeps",
        "variance_floor": "variance_floor",
        "llr_clip": "llr_clip",
        "bp_iterations": "bp_iterations",
    },
}


def load_config(path: str) -> SimConfig:
    """Parse a TOML preset into a SimConfig; unknown keys are errors."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}")

    kwargs = {}
    for section, entries in raw.items():
        mapping = _SECTION_KEYS.get(section)
        if mapping is None:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(entries, dict):
            raise ConfigError(f"section [{section}] must be a table")
        for key, value in entries.items():
            target = mapping.get(key)
            if target is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            if target == "ebn0_points":
                value = tuple(float(v) for v in value)
            kwargs[target] = value
    cfg = SimConfig(**kwargs)
    validate_config(cfg)
    return cfg


@dataclass
class SimRecord:
    """One (equalizer, Eb/N0 point, turbo iteration) accumulation cell."""

    equalizer: str
    ebn0_db: float
    turbo_iter: int
    bits: int
    bit_errors: int
    ber: float
    frames: int
    frame_errors: int
    seconds: float


@dataclass
class SimResult:
    records: list[SimRecord]
    metadata: dict
    failures: int = 0


def _channel_task(args) -> tuple[int, int, np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Worker body: every frame of one (point, channel) cell.

    Returns (point_index, channel_index, bit error / frame error / seconds
    arrays indexed by turbo iteration, failure count). Frames that die with
    a numerical error contribute to no accumulator except the failure count.
    """
    cfg, code, point_index, channel_index = args
    c = build_constellation(cfg.constellation_order, cfg.constellation_kind)
    ebn0 = cfg.ebn0_points[point_index]
    rate = code.k / code.n
    noise_var = ebn0_to_noise_variance(ebn0, c.energy, c.bits_per_symbol, rate, cfg.field)

    ch_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.master_seed, spawn_key=(1, point_index, channel_index))
    )
    taps = random_channel(cfg.channel_length, cfg.field, ch_rng)
    ch = ChannelModel(taps, noise_var, cfg.field)

    tcfg = TurboConfig(
        iterations=cfg.turbo_iterations,
        ep_sweeps=cfg.ep_sweeps,
        variance_floor=cfg.variance_floor,
        llr_clip=cfg.llr_clip,
        bp_iterations=cfg.bp_iterations,
    )
    n_iters = cfg.turbo_iterations + 1
    bit_errs = np.zeros(n_iters, dtype=np.int64)
    frame_errs = np.zeros(n_iters, dtype=np.int64)
    seconds = np.zeros(n_iters)
    counted = 0
    failures = 0
    for f in range(cfg.frames_per_channel):
        rng = np.random.default_rng(
            np.random.SeedSequence(
                cfg.master_seed, spawn_key=(2, point_index, channel_index, f)
            )
        )
        info = rng.integers(0, 2, size=code.k).astype(np.uint8)
        codeword = encode(code, info)
        u = map_bits(pad_codeword(codeword, c.bits_per_symbol), c)
        y = transmit(u, ch, rng)
        try:
            _, trace = turbo_equalize(
                y, ch, code, c, tcfg, true_codeword=codeword, equalizer=cfg.equalizer
            )
        except (SingularMatrix, TooLarge, FloatingPointError, np.linalg.LinAlgError):
            failures += 1
            continue
        counted += 1
        for rec in trace.iterations:
            bit_errs[rec.index] += rec.bit_errors
            frame_errs[rec.index] += rec.bit_errors > 0
            seconds[rec.index] += rec.seconds
    return point_index, channel_index, bit_errs, frame_errs, seconds, failures, counted


def run_sweep(cfg: SimConfig, progress: bool = False) -> SimResult:
    """Execute the whole sweep; deterministic given (cfg, master_seed)."""
    validate_config(cfg)
    code = build_regular_code(cfg.n_code_bits, cfg.code_seed)
    tasks = [
        (cfg, code, pi, ci)
        for pi in range(len(cfg.ebn0_points))
        for ci in range(cfg.channels_per_point)
    ]
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            outcomes = pool.map(_channel_task, tasks)
    else:
        outcomes = []
        for t in tasks:
            outcomes.append(_channel_task(t))
            if progress:
                pi, ci = t[2], t[3]
                print(
                    f"  point {pi + 1}/{len(cfg.ebn0_points)} "
                    f"channel {ci + 1}/{cfg.channels_per_point} done",
                    file=sys.stderr,
                )

    n_iters = cfg.turbo_iterations + 1
    shape = (len(cfg.ebn0_points), n_iters)
    bit_errs = np.zeros(shape, dtype=np.int64)
    frame_errs = np.zeros(shape, dtype=np.int64)
    seconds = np.zeros(shape)
    frames = np.zeros(len(cfg.ebn0_points), dtype=np.int64)
    failures = 0
    # outcomes arrive in task order from pool.map, so float sums are stable
    for pi, _, be, fe, sec, fail, counted in outcomes:
        bit_errs[pi] += be
        frame_errs[pi] += fe
        seconds[pi] += sec
        frames[pi] += counted
        failures += fail

    records = []
    for pi, ebn0 in enumerate(cfg.ebn0_points):
        n_bits = int(frames[pi]) * cfg.n_code_bits
        for t in range(n_iters):
            errs = int(bit_errs[pi, t])
            records.append(
                SimRecord(
                    equalizer=cfg.equalizer,
                    ebn0_db=float(ebn0),
                    turbo_iter=t,
                    bits=n_bits,
                    bit_errors=errs,
                    ber=errs / n_bits if n_bits else 0.0,
                    frames=int(frames[pi]),
                    frame_errors=int(frame_errs[pi, t]),
                    seconds=float(seconds[pi, t]),
                )
            )

    metadata = {f"config_{k}": v for k, v in asdict(cfg).items()}
    metadata["failures"] = failures
    from . import __version__

    metadata["version"] = __version__
    return SimResult(records=records, metadata=metadata, failures=failures)


def monotonicity_flags(result: SimResult) -> list[str]:
    """Non-fatal warnings when BER rises with Eb/N0 beyond 3 sigma binomial noise."""
    finals: dict[float, SimRecord] = {}
    last_iter = max((r.turbo_iter for r in result.records), default=0)
    for r in result.records:
        if r.turbo_iter == last_iter:
            finals[r.ebn0_db] = r
    flags = []
    points = sorted(finals)
    for lo, hi in zip(points, points[1:]):
        a, b = finals[lo], finals[hi]
        if not a.bits or not b.bits:
            continue
        spread = 3.0 * np.sqrt(
            a.ber * (1 - a.ber) / a.bits + b.ber * (1 - b.ber) / b.bits
        )
        if b.ber - a.ber > spread:
            flags.append(
                f"BER at {hi} dB ({b.ber:.3e}) exceeds {lo} dB ({a.ber:.3e}) beyond 3 sigma"
            )
    return flags


CSV_COLUMNS = (
    "equalizer",
    "ebn0_db",
    "turbo_iter",
    "bits",
    "bit_errors",
    "ber",
    "frames",
    "frame_errors",
    "seconds",
)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest exact decimal, locale-independent
    return str(value)


def emit_results(result: SimResult, path: str, format: str = "csv", include_timing: bool = True) -> str:
    """Write records plus '#'-prefixed metadata; returns the path."""
    records = result.records
    if not include_timing:
        records = [replace(r, seconds=0.0) for r in records]
    if format == "csv":
        buf = io.StringIO()
        for key in sorted(result.metadata):
            buf.write(f"# {key}={result.metadata[key]}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_format_cell(getattr(r, col)) for col in CSV_COLUMNS])
        payload = buf.getvalue()
    elif format == "json":
        payload = json.dumps(
            {"metadata": result.metadata, "records": [asdict(r) for r in records]},
            indent=2,
            sort_keys=True,
        )
        payload += "\n"
    else:
        raise ConfigError(f"unknown output format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(payload)
    return path


_INT_COLUMNS = {"turbo_iter", "bits", "bit_errors", "frames", "frame_errors"}
_FLOAT_COLUMNS = {"ebn0_db", "ber", "seconds"}


def parse_results(path: str) -> SimResult:
    """Inverse of emit_results for both formats."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        records = [SimRecord(**r) for r in doc["records"]]
        meta = doc["metadata"]
        return SimResult(records=records, metadata=meta, failures=int(meta.get("failures", 0)))
    metadata = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            metadata[key.strip()] = value
        else:
            body.append(line)
    records = []
    for row in csv.DictReader(body):
        kwargs = {}
        for col, raw in row.items():
            if col in _INT_COLUMNS:
                kwargs[col] = int(raw)
            elif col in _FLOAT_COLUMNS:
                kwargs[col] = float(raw)
            else:
                kwargs[col] = raw
        records.append(SimRecord(**kwargs))
    return SimResult(
        records=records,
        metadata=metadata,
        failures=int(metadata.get("failures", 0)),
    )


# ---------------------------------------------------------------------------
# oracle-check batteries: fast equivalence/identity checks runnable anywhere


def oracle_batteries(seed: int = 7) -> list[tuple[str, bool, str]]:
    """Small seeded versions of the package's cross-implementation checks."""
    from . import ep, equalizers
    from .numerics import DiscretePmf as Pmf

    rng = np.random.default_rng(seed)
    results = []

    # battery 1: smoother marginals vs one-shot dense LMMSE
    worst = 0.0
    for _ in range(20):
        field = rng.choice(["real", "complex"])
        n = int(rng.integers(8, 48))
        L = int(rng.integers(1, 6))
        taps = random_channel(L, field, rng)
        ch = ChannelModel(taps, float(rng.uniform(0.05, 1.0)), field)
        t = equalizers.FactorSet(
            np.zeros(n, dtype=complex if field == "complex" else float),
            rng.uniform(0.4, 2.0, size=n),
            ch.memory,
        )
        u = rng.standard_normal(n)
        y = transmit(u.astype(t.means.dtype), ch, rng)
        out = equalizers.kalman_smoother_equalize(y, ch, t)
        bm, bv = equalizers.block_lmmse(y, ch, t.means, t.variances)
        worst = max(
            worst,
            float(np.max(np.abs(out.symbol_means - bm) / np.maximum(np.abs(bm), 1e-12))),
            float(np.max(np.abs(out.symbol_variances - bv) / bv)),
        )
    results.append(("smoother-vs-dense-lmmse", worst < 1e-8, f"max rel err {worst:.2e}"))

    # battery 2: fused kernel vs composed forward/backward/merge passes
    worst = 0.0
    for _ in range(10):
        field = rng.choice(["real", "complex"])
        n = int(rng.integers(6, 20))
        L = int(rng.integers(1, 4))
        taps = random_channel(L, field, rng)
        ch = ChannelModel(taps, float(rng.uniform(0.1, 1.0)), field)
        t = equalizers.FactorSet(
            np.zeros(n, dtype=complex if field == "complex" else float),
            rng.uniform(0.4, 2.0, size=n),
            ch.memory,
        )
        y = transmit(rng.standard_normal(n).astype(t.means.dtype), ch, rng)
        out = equalizers.kalman_smoother_equalize(y, ch, t)
        fwd = equalizers.forward_pass(y, ch, t)
        bwd = equalizers.backward_pass(y, ch, t)
        beliefs = equalizers.smooth(fwd, bwd, y, ch, t)
        marg = equalizers.marginalize_symbol(beliefs)
        mu = np.array([b.mean for b in marg])
        var = np.array([b.variance for b in marg])
        worst = max(
            worst,
            float(np.max(np.abs(out.symbol_means - mu))),
            float(np.max(np.abs(out.symbol_variances - var))),
        )
    results.append(("kernel-vs-composed-passes", worst < 1e-8, f"max abs err {worst:.2e}"))

    # battery 3: enumerated smoothing identity on tiny binary frames
    from .modem import build_constellation as bc

    c2 = bc(2, "pam")
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(3, 7))
        L = int(rng.integers(1, 4))
        taps = random_channel(L, "real", rng)
        ch = ChannelModel(taps, float(rng.uniform(0.2, 1.0)), "real")
        priors = []
        for _ in range(n):
            p = rng.uniform(0.2, 0.8)
            priors.append(Pmf(c2.points, np.array([p, 1 - p])))
        u = c2.points[rng.integers(0, 2, size=n)]
        y = transmit(u, ch, rng)
        res = exact_posterior_enumeration(y, ch, priors, c2, detail=True)
        for k in range(len(res.posterior)):
            with np.errstate(divide="ignore"):
                rhs_log = (
                    np.log(res.forward[k])
                    + np.log(res.backward[k])
                    - res.observation_loglik[k]
                    - res.window_logprior[k]
                )
            rhs = np.exp(rhs_log - rhs_log.max())
            rhs /= rhs.sum()
            worst = max(worst, float(np.max(np.abs(res.posterior[k] - rhs))))
    results.append(("enumerated-smoothing-identity", worst < 1e-10, f"max prob err {worst:.2e}"))

    # battery 4: refinement loop scalar ops vs the vectorized frame update
    c = bc(4, "pam")
    worst = 0.0
    for _ in range(5):
        n = 24
        taps = random_channel(3, "real", rng)
        ch = ChannelModel(taps, 0.3, "real")
        probs = rng.dirichlet(np.ones(4), size=n)
        u = c.points[rng.integers(0, 4, size=n)]
        y = transmit(u, ch, rng)
        cfg = ep.EpConfig(sweeps=2, damping=0.35)
        out_vec = ep.ksep_equalize(y, ch, (c.points, probs), cfg)
        out_ref = _scalar_reference_refinement(y, ch, c.points, probs, cfg)
        worst = max(worst, float(np.max(np.abs(out_vec.symbol_means - out_ref[0]))))
        worst = max(worst, float(np.max(np.abs(out_vec.symbol_variances - out_ref[1]))))
    results.append(("refinement-scalar-vs-vectorized", worst < 1e-10, f"max abs err {worst:.2e}"))

    # battery 5: zero-sweep refinement is exactly the smoother
    n = 32
    taps = random_channel(4, "real", rng)
    ch = ChannelModel(taps, 0.4, "real")
    probs = rng.dirichlet(np.ones(4), size=n)
    u = c.points[rng.integers(0, 4, size=n)]
    y = transmit(u, ch, rng)
    cfg = ep.EpConfig(sweeps=0)
    out0 = ep.ksep_equalize(y, ch, (c.points, probs), cfg)
    mu, var = ep.project_priors(c.points, probs, cfg.variance_floor)
    t = equalizers.FactorSet(mu, var, ch.memory, variance_floor=cfg.variance_floor)
    base = equalizers.kalman_smoother_equalize(y, ch, t)
    identical = np.array_equal(out0.symbol_means, base.symbol_means) and np.array_equal(
        out0.symbol_variances, base.symbol_variances
    )
    results.append(("zero-sweep-reduction-bitwise", identical, "exact array equality"))

    return results


def _scalar_reference_refinement(y, ch, alphabet, probs, cfg):
    """Loop-of-scalars mirror of ksep_equalize for the oracle battery."""
    from . import ep, equalizers
    from .numerics import DiscretePmf as Pmf, GaussianBelief1D

    eps = cfg.variance_floor
    mu, var = ep.project_priors(alphabet, probs, eps)
    mu = mu.copy()
    var = var.copy()
    n = len(mu)
    for _ in range(cfg.sweeps):
        t = equalizers.FactorSet(mu, var, ch.memory, variance_floor=eps)
        out = equalizers.kalman_smoother_equalize(y, ch, t)
        new_mu = mu.copy()
        new_var = var.copy()
        for k in range(n):
            # flat extrinsics tilt like any other cavity
            q_e = GaussianBelief1D(out.extrinsic_means[k], out.extrinsic_variances[k])
            tm = ep.tilted_moments(q_e, Pmf(alphabet, probs[k]), eps, field=ch.field)
            matched = ep.moment_match(q_e, tm)
            if matched is None:
                continue
            damped = ep.damp((mu[k], var[k]), matched, cfg.damping)
            kept = ep.negative_variance_control(damped, (mu[k], var[k]))
            if np.isfinite(kept[0]) and np.isfinite(kept[1]):
                new_mu[k], new_var[k] = kept
        mu, var = new_mu, new_var
    t = equalizers.FactorSet(mu, var, ch.memory, variance_floor=eps)
    out = equalizers.kalman_smoother_equalize(y, ch, t)
    return out.symbol_means, out.symbol_variances


# ---------------------------------------------------------------------------
# bench: wall-time scaling of the equalizer


def _time_equalize(n: int, length: int, sweeps: int, seed: int, budget_s: float = 0.03) -> float:
    from .ep import EpConfig, ksep_equalize

    rng = np.random.default_rng(seed)
    # smallest alphabet over a complex channel: the timing should follow the
    # smoother, not the per-point exp() work in the refinement step
    c = build_constellation(2, "pam")
    taps = random_channel(length, "complex", rng)
    ch = ChannelModel(taps, 0.3, "complex")
    probs = np.full((n, 2), 0.5)
    u = c.points[rng.integers(0, 2, size=n)]
    y = transmit(u, ch, rng)
    cfg = EpConfig(sweeps=sweeps, damping=0.1)
    # first call warms buffer caches; it also sizes the repeat count so that
    # short measurements get enough samples that one scheduler stall cannot
    # cover them all, while long ones stay within the time budget
    t0 = time.perf_counter()
    ksep_equalize(y, ch, (c.points, probs), cfg)
    first = time.perf_counter() - t0
    repeats = max(7, min(40, int(budget_s / max(first, 1e-4))))
    best = first
    for _ in range(repeats):
        t0 = time.perf_counter()
        ksep_equalize(y, ch, (c.points, probs), cfg)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_scaling(seed: int = 3) -> dict:
    """Measured scaling of ksep_equalize in frame length and channel length."""
    from ._kernels import warmup

    warmup()
    sizes = [512, 1024, 2048, 4096, 8192]
    times_n = [_time_equalize(n, 5, 3, seed) for n in sizes]
    slope_n = float(np.polyfit(np.log(sizes), np.log(times_n), 1)[0])

    lengths = [2, 4, 8, 16]
    times_l = [_time_equalize(2048, L, 3, seed) for L in lengths]
    slope_l = float(np.polyfit(np.log(lengths), np.log(times_l), 1)[0])

    t_full = _time_equalize(2048, 5, 3, seed)
    t_one = _time_equalize(2048, 5, 0, seed)
    return {
        "frame_sizes": sizes,
        "frame_times": times_n,
        "frame_slope": slope_n,
        "channel_lengths": lengths,
        "channel_times": times_l,
        "channel_slope": slope_l,
        "sweep3_over_single": t_full / t_one,
    }


# ---------------------------------------------------------------------------
# CLI


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the CLI contract reserves 2 for check
    # failures and 1 for validation problems
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ksep", description="ISI turbo equalization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run a Monte-Carlo BER sweep")
    sweep.add_argument("--config", help="TOML preset path (defaults used when omitted)")
    sweep.add_argument("--seed", type=int, help="override master seed")
    sweep.add_argument("--workers", type=int, help="worker process count")
    sweep.add_argument("--out", default="results.csv", help="output file path")
    sweep.add_argument("--format", choices=("csv", "json"), default="csv")
    sweep.add_argument("--ebn0", help="comma-separated dB list overriding the config")
    sweep.add_argument("--equalizer", choices=EQUALIZER_NAMES)
    sweep.add_argument("--channels", type=int, help="override channels per point")
    sweep.add_argument("--frames", type=int, help="override frames per channel")
    sweep.add_argument(
        "--no-timing", action="store_true", help="zero the seconds column for byte-stable output"
    )

    oracle = sub.add_parser("oracle-check", help="run cross-implementation batteries")
    oracle.add_argument("--seed", type=int, default=7)

    bench = sub.add_parser("bench", help="wall-time scaling measurements")
    bench.add_argument("--seed", type=int, default=3)
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "sweep":
        try:
            cfg = load_config(args.config) if args.config else SimConfig()
            overrides = {}
            if args.seed is not None:
                overrides["master_seed"] = args.seed
            if args.workers is not None:
                overrides["workers"] = args.workers
            elif os.environ.get(WORKERS_ENV):
                try:
                    overrides["workers"] = int(os.environ[WORKERS_ENV])
                except ValueError:
                    raise ConfigError(f"{WORKERS_ENV} must be an integer")
            if args.ebn0:
                try:
                    overrides["ebn0_points"] = tuple(
                        float(v) for v in args.ebn0.split(",") if v.strip()
                    )
                except ValueError:
                    raise ConfigError(f"bad --ebn0 list: {args.ebn0!r}")
            if args.equalizer:
                overrides["equalizer"] = args.equalizer
            if args.channels is not None:
                overrides["channels_per_point"] = args.channels
            if args.frames is not None:
                overrides["frames_per_channel"] = args.frames
            cfg = replace(cfg, **overrides)
            validate_config(cfg)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        result = run_sweep(cfg, progress=True)
        for flag in monotonicity_flags(result):
            print(f"warning: {flag}", file=sys.stderr)
        if result.failures:
            print(f"warning: {result.failures} frame(s) failed numerically", file=sys.stderr)
        emit_results(result, args.out, format=args.format, include_timing=not args.no_timing)
        print(f"wrote {args.out}")
        return 0

    if args.command == "oracle-check":
        batteries = oracle_batteries(args.seed)
        all_ok = True
        for name, ok, detail in batteries:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            all_ok &= ok
        return 0 if all_ok else 2

    if args.command == "bench":
        report = bench_scaling(args.seed)
        print(f"frame-length slope  : {report['frame_slope']:.3f} (target 1.0)")
        print(f"channel-length slope: {report['channel_slope']:.3f} (target 2.0)")
        print(f"3-sweep / single run: {report['sweep3_over_single']:.2f}x (target 3x-6x)")
        for n, t in zip(report["frame_sizes"], report["frame_times"]):
            print(f"  N={n:5d}  {t * 1e3:8.2f} ms")
        for L, t in zip(report["channel_lengths"], report["channel_times"]):
            print(f"  L={L:5d}  {t * 1e3:8.2f} ms")
        return 0

    return 1


def cli_entry() -> None:
    sys.exit(cli_main())
