"""Turbo equalization for ISI channels built on a Kalman smoother whose
Gaussian symbol priors are refined by expectation propagation, with dense
and brute-force oracles, a (3,6)-regular LDPC codec, and a seeded
Monte-Carlo sweep harness."""

__version__ = "0.1.0"

from .channel import ChannelModel, ebn0_to_noise_variance, random_channel, transmit
from .ep import EpConfig, ksep_equalize
from .equalizers import (
    FactorSet,
    SmootherOutput,
    block_lmmse,
    exact_posterior_enumeration,
    kalman_smoother_equalize,
)
from .harness import SimConfig, emit_results, load_config, run_sweep
from .ldpc import LdpcCode, build_regular_code, decode_bp, encode
from .modem import Constellation, build_constellation, map_bits
from .numerics import DiscretePmf, GaussianBelief1D, GaussianBeliefND
from .turbo import TurboConfig, TurboTrace, beta_schedule, turbo_equalize

__all__ = [
    "ChannelModel",
    "Constellation",
    "DiscretePmf",
    "EpConfig",
    "FactorSet",
    "GaussianBelief1D",
    "GaussianBeliefND",
    "LdpcCode",
    "SimConfig",
    "SmootherOutput",
    "TurboConfig",
    "TurboTrace",
    "beta_schedule",
    "block_lmmse",
    "build_constellation",
    "build_regular_code",
    "decode_bp",
    "ebn0_to_noise_variance",
    "emit_results",
    "encode",
    "exact_posterior_enumeration",
    "kalman_smoother_equalize",
    "ksep_equalize",
    "load_config",
    "map_bits",
    "random_channel",
    "run_sweep",
    "transmit",
    "turbo_equalize",
    "__version__",
]
