"""Option source, guess checking and the binary match reward."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CLAMP = 1e-6


@dataclass(frozen=True)
class OptionSpace:
    n_bits: int = 4

    def __post_init__(self):
        if self.n_bits < 1:
            raise ValueError("an option space needs at least one bit")

    @property
    def size(self) -> int:
        return 2**self.n_bits


def entropy(space: OptionSpace) -> float:
    """Entropy of the uniform source in nats."""
    return space.n_bits * math.log(2.0)


def draw(space: OptionSpace, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=space.n_bits, dtype=np.int8)


def bits_to_int(bits) -> int:
    """Big-endian integer value of a bit word."""
    return int("".join(str(int(b)) for b in bits), 2)


def int_to_bits(value: int, n_bits: int) -> np.ndarray:
    return np.array([(value >> (n_bits - 1 - i)) & 1 for i in range(n_bits)], dtype=np.int8)


def clamp(probs) -> np.ndarray:
    return np.clip(np.asarray(probs, dtype=np.float64), CLAMP, 1.0 - CLAMP)


def log_prob(bit_probs, word) -> float:
    """Factorised-Bernoulli log-likelihood of ``word`` under per-bit probabilities of a 1."""
    p = clamp(bit_probs)
    w = np.asarray(word, dtype=np.float64)
    if p.shape != w.shape:
        raise ValueError(f"{p.shape[-1]} probabilities for a {w.shape[-1]}-bit word")
    return float(np.sum(w * np.log(p) + (1.0 - w) * np.log1p(-p)))


def most_likely(bit_probs) -> np.ndarray:
    """Maximum-likelihood word; a probability of exactly 0.5 maps to bit 1."""
    return (np.asarray(bit_probs) >= 0.5).astype(np.int8)


@dataclass
class ChannelState:
    space: OptionSpace
    current: np.ndarray
    rng: np.random.Generator = field(repr=False)
    steps_since_draw: int = 0
    total_successes: int = 0
    last_interval: int | None = None


def new_channel(space: OptionSpace, rng: np.random.Generator) -> ChannelState:
    return ChannelState(space, draw(space, rng), rng)


def check_guess(channel: ChannelState, guess) -> tuple[int, ChannelState]:
    """Reward 1 and redraw iff the guess equals the current word bit for bit.

    On success ``last_interval`` holds the number of guesses spent on the
    word that was just decoded.
    """
    guess = np.asarray(guess)
    if guess.shape != (channel.space.n_bits,):
        raise ValueError(f"guess has {guess.size} bits, the channel carries {channel.space.n_bits}")
    steps = channel.steps_since_draw + 1
    if np.array_equal(guess, channel.current):
        return 1, replace(
            channel,
            current=draw(channel.space, channel.rng),
            steps_since_draw=0,
            total_successes=channel.total_successes + 1,
            last_interval=steps,
        )
    return 0, replace(channel, steps_since_draw=steps, last_interval=None)
