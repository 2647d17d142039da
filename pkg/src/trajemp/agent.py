"""Option-conditioned recurrent agent.

Data flow for one step, batched over environments::

    obs --encoder--> embedding --+
    redraw flag ----------------+--> memory (LSTM) --> z
    z + option bits --> policy (3 affine layers) --> per-pixel 5-way log-probs
    z --> critic --> value
    z --> inverse --> per-bit probabilities of the current option

The inverse head reads z only. By default z is built from observations
(plus the agent's own "word was just redrawn" flag), never from the option
itself; ``option_in_memory`` adds the option to the memory input as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import options
from .env import N_SYMBOLS
from .nn import F, Affine, Conv2D, LSTMCell, Module, Tensor
from .nn import checkpoint as ckpt


@dataclass(frozen=True)
class AgentConfig:
    n_bits: int = 4
    width: int = 9
    height: int = 9
    conv_channels: tuple[int, ...] = (16, 32, 32)
    kernel: int = 3
    hidden: int = 256
    policy_hidden: tuple[int, ...] = (256, 256)
    n_symbols: int = N_SYMBOLS
    # scale of the policy output layer init; 0 gives exactly uniform actions
    policy_out_gain: float = 1.0
    # also feed the option bits into the memory input; q can then read the
    # option straight out of z, so this is off unless deliberately studied
    option_in_memory: bool = False

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def embedding_size(self) -> int:
        return self.conv_channels[-1] * self.n_pixels


@dataclass
class AgentState:
    hidden: Tensor
    cell: Tensor

    def detach(self) -> AgentState:
        return AgentState(self.hidden.detach(), self.cell.detach())


class Encoder(Module):
    def __init__(self, cfg: AgentConfig, rng):
        chans = (1,) + tuple(cfg.conv_channels)
        pad = cfg.kernel // 2
        for i in range(len(cfg.conv_channels)):
            conv = Conv2D(chans[i], chans[i + 1], cfg.kernel, 1, pad, rng=rng, gain=np.sqrt(2.0))
            setattr(self, f"conv{i + 1}", conv)
        self.n_layers = len(cfg.conv_channels)

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.n_layers):
            x = F.relu(getattr(self, f"conv{i + 1}")(x))
        return x.reshape(x.shape[0], -1)


class PolicyHead(Module):
    def __init__(self, n_in: int, widths, n_out: int, rng, out_gain: float = 1.0):
        sizes = (n_in,) + tuple(widths)
        for i in range(len(widths)):
            setattr(self, f"fc{i + 1}", Affine(sizes[i], sizes[i + 1], rng, gain=np.sqrt(2.0)))
        out = Affine(sizes[-1], n_out, rng, gain=out_gain, zero=out_gain == 0)
        setattr(self, f"fc{len(widths) + 1}", out)
        self.n_layers = len(widths) + 1

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(1, self.n_layers):
            x = F.relu(getattr(self, f"fc{i}")(x))
        return getattr(self, f"fc{self.n_layers}")(x)


class Head(Module):
    def __init__(self, n_in: int, n_out: int, rng=None, zero: bool = False):
        self.affine = Affine(n_in, n_out, rng, zero=zero)

    def __call__(self, x: Tensor) -> Tensor:
        return self.affine(x)


class Agent(Module):
    def __init__(self, cfg: AgentConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        n_in = cfg.embedding_size + 1 + (cfg.n_bits if cfg.option_in_memory else 0)
        self.memory = LSTMCell(n_in, cfg.hidden, rng)
        self.policy_head = PolicyHead(cfg.hidden + cfg.n_bits, cfg.policy_hidden,
                                      cfg.n_pixels * cfg.n_symbols, rng, cfg.policy_out_gain)
        self.critic = Head(cfg.hidden, 1, rng)
        self.inverse = Head(cfg.hidden, cfg.n_bits, zero=True)

    # -- model pieces ---------------------------------------------------

    def initial_state(self, n: int) -> AgentState:
        return AgentState(Tensor(np.zeros((n, self.cfg.hidden))), Tensor(np.zeros((n, self.cfg.hidden))))

    def encode(self, obs) -> Tensor:
        obs = np.asarray(obs.data if isinstance(obs, Tensor) else obs, dtype=np.float64)
        expect = (self.cfg.height, self.cfg.width)
        if obs.shape[-2:] != expect:
            raise ValueError(f"observation shape {obs.shape[-2:]} does not match agent field {expect}")
        obs = obs.reshape(-1, 1, *expect)
        return self.encoder(Tensor(obs))

    def step_memory(self, state: AgentState, embedding: Tensor, redrawn, option_bits=None) -> AgentState:
        parts = [embedding, Tensor(np.asarray(redrawn, dtype=np.float64).reshape(-1, 1))]
        if self.cfg.option_in_memory:
            if option_bits is None:
                raise ValueError("this agent feeds the option into memory; option_bits is required")
            parts.append(Tensor(_signed(option_bits, self.cfg.n_bits)))
        h, c = self.memory(F.concat(parts, axis=1), state.hidden, state.cell)
        return AgentState(h, c)

    def observe(self, state: AgentState, obs, redrawn, option_bits=None) -> AgentState:
        return self.step_memory(state, self.encode(obs), redrawn, option_bits)

    def policy_logp(self, state: AgentState, option_bits) -> Tensor:
        """Per-pixel log-probabilities, shape (N, pixels, symbols)."""
        x = F.concat([state.hidden, Tensor(_signed(option_bits, self.cfg.n_bits))], axis=1)
        logits = self.policy_head(x).reshape(-1, self.cfg.n_pixels, self.cfg.n_symbols)
        return F.log_softmax(logits)

    def value(self, state: AgentState) -> Tensor:
        return self.critic(state.hidden).reshape(-1)

    def inverse_logits(self, state: AgentState) -> Tensor:
        return self.inverse(state.hidden)

    def inverse_probs(self, state: AgentState) -> np.ndarray:
        return options.clamp(F.sigmoid(self.inverse_logits(state)).data)

    # -- persistence ----------------------------------------------------

    def save(self, path) -> None:
        ckpt.save(path, ((name, p.data) for name, p in self.named_parameters()))

    def load(self, path) -> None:
        ckpt.load_into(self, ckpt.load(path))


def _signed(option_bits, n_bits: int) -> np.ndarray:
    """0/1 bits to the +-1 code the networks read."""
    return 2.0 * np.asarray(option_bits, dtype=np.float64).reshape(-1, n_bits) - 1.0


# -- sampling and log-likelihood helpers (plain arrays) -------------------


def sample_action(logp: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Sample every pixel independently from one env's (pixels, symbols) log-probabilities."""
    probs = np.exp(logp)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    action = np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)
    return action, float(np.take_along_axis(logp, action[:, None], axis=-1).sum())


def action_log_prob(logp: np.ndarray, action: np.ndarray) -> float:
    return float(np.take_along_axis(logp, np.asarray(action).reshape(-1, 1), axis=-1).sum())


def policy_entropy(logp: Tensor) -> Tensor:
    """Joint entropy of the factorised action distribution, per batch row."""
    return -(F.exp(logp) * logp).sum(axis=2).sum(axis=1)


def sample_guess(bit_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(bit_probs)
    return (rng.random(p.shape) < p).astype(np.int8)


def bernoulli_log_likelihood(logits: Tensor, word: np.ndarray) -> Tensor:
    """Per-row log q(word | z) from per-bit logits, with the probability clamp applied."""
    w = np.asarray(word, dtype=np.float64)
    lo, hi = np.log(options.CLAMP), np.log1p(-options.CLAMP)
    log_p1 = F.clip(F.log_sigmoid(logits), lo, hi)
    log_p0 = F.clip(F.log_sigmoid(-logits), lo, hi)
    return (log_p1 * w + log_p0 * (1.0 - w)).sum(axis=1)
