"""Reproducible truncated Karhunen-Loeve Wiener increments.

Streams are counter based (Philox) and keyed by (master_seed, level,
sample_index, replica), so any sample can be regenerated independently of
execution order.  All increments are *whitened*: they are coordinates of
standard scalar Brownian motions, and covariance scaling by sqrt(eta_k)
belongs to the diffusion coefficients, never to the sampler.

Each macro time step of size dt owns one `IncrementBlock` holding the two
half-step increment vectors (each N(0, dt/2)); the coarse increment is their
exact floating-point sum and the antithetic twin simply swaps the halves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StreamKey",
    "IncrementBlock",
    "derive_stream",
    "sample_block",
    "draw_block_array",
    "draw_step_increments",
    "antithetic_view",
    "bracket",
]

_REPLICA_TAGS = {"coupled": 0}


@dataclass(frozen=True)
class StreamKey:
    """Address of one independent random stream."""

    master_seed: int
    level: int = 0
    sample_index: int = 0
    replica: str = "coupled"

    def __post_init__(self):
        if self.level < 0 or self.sample_index < 0:
            raise ValueError("level and sample_index must be non-negative")
        if self.replica not in _REPLICA_TAGS:
            raise ValueError(f"unknown replica tag {self.replica!r}")


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Deterministic, independent Generator for the given key.

    Equal keys give bitwise-equal streams; distinct keys give statistically
    independent Philox streams.
    """
    entropy = [
        int(key.master_seed) & 0xFFFFFFFFFFFFFFFF,
        int(key.level),
        int(key.sample_index),
        _REPLICA_TAGS[key.replica],
    ]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class IncrementBlock:
    """Whitened Brownian increments of one macro step, split into halves."""

    first_half: np.ndarray
    second_half: np.ndarray
    dt_half: float

    def __post_init__(self):
        if self.first_half.shape != self.second_half.shape:
            raise ValueError("half-step increment vectors must have equal length")

    @property
    def k_modes(self) -> int:
        return self.first_half.shape[0]

    def coarse(self) -> np.ndarray:
        """The macro-step increment; exactly the sum of the two halves."""
        return self.first_half + self.second_half


def sample_block(stream: np.random.Generator, k_modes: int, dt: float) -> IncrementBlock:
    """Draw one macro step's worth of half increments, each N(0, dt/2)."""
    if k_modes < 0:
        raise ValueError("mode count must be non-negative")
    if dt <= 0:
        raise ValueError("macro step must be positive")
    z = stream.standard_normal((2, k_modes)) * math.sqrt(0.5 * dt)
    return IncrementBlock(first_half=z[0], second_half=z[1], dt_half=0.5 * dt)


def draw_block_array(
    stream: np.random.Generator, n_steps: int, k_modes: int, dt: float
) -> np.ndarray:
    """All blocks of one path at once, shape (n_steps, 2, k_modes).

    Consumes the stream exactly as n_steps successive `sample_block` calls,
    and exactly as a plain 2*n_steps-step path at step dt/2 (the draws are
    the same values in the same order), which is what makes the fine path of
    a coupled pair bitwise equal to a standalone run at the doubled rate.
    """
    if dt <= 0:
        raise ValueError("macro step must be positive")
    z = stream.standard_normal((n_steps, 2, k_modes))
    z *= math.sqrt(0.5 * dt)
    return z


def draw_step_increments(
    stream: np.random.Generator, n_steps: int, k_modes: int, dt: float
) -> np.ndarray:
    """Per-step increments N(0, dt) of a plain path, shape (n_steps, k_modes)."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    z = stream.standard_normal((n_steps, k_modes))
    z *= math.sqrt(dt)
    return z


def antithetic_view(block: IncrementBlock) -> IncrementBlock:
    """Swap the two half steps; an involution that preserves the coarse sum."""
    return IncrementBlock(
        first_half=block.second_half,
        second_half=block.first_half,
        dt_half=block.dt_half,
    )


def bracket(dw: np.ndarray, dt: float, k: int, l: int) -> float:
    """Milstein correction factor dw_k*dw_l - delta_{kl}*dt in whitened coordinates."""
    n = dw.shape[0]
    if not (0 <= k < n and 0 <= l < n):
        raise IndexError(f"bracket indices ({k},{l}) out of range for {n} modes")
    out = dw[k] * dw[l]
    if k == l:
        out -= dt
    return float(out)
