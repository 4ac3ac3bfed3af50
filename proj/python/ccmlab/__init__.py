# SPDX-License-Identifier: Apache-2.0
"""Location-based channel covariance estimation for a simulated massive MIMO downlink."""

from ._ccmlab import (
    ConfigError,
    DomainError,
    NumericalError,
    ChannelGrid,
    RunConfig,
    channel_map,
    design_pilots,
    eval_models,
    fuse,
    gen_dataset,
    gradient_check,
    lmmse_estimate,
    run,
    steering_vector,
    train,
    water_level,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericalError",
    "ChannelGrid",
    "RunConfig",
    "channel_map",
    "design_pilots",
    "eval_models",
    "fuse",
    "gen_dataset",
    "gradient_check",
    "lmmse_estimate",
    "run",
    "steering_vector",
    "train",
    "water_level",
]
