"""Lock-step driver for a batch of environment replicas sharing one agent.

Each replica owns its environment, option channel, recurrent state row and
three RNG streams (environment resets, actions, guesses), all spawned from
one master seed, so replicas can be replayed independently.

Per step, for every replica::

    a_t ~ pi(. | z_t, w_t)           policy reads memory + current option
    o_{t+1} = env.step(a_t)
    z_{t+1} = f(o_{t+1}, fresh, z_t)  fresh = a_t was the first action for w_t
    g_t ~ q(. | z_{t+1}); r_t = [g_t == w_t]; redraw w on success
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import options
from .agent import Agent, AgentState
from .env import BoxesEnv, EnvConfig
from .nn import F, Tensor, no_grad


@dataclass
class StepRecord:
    started: np.ndarray  # (N,) bool, episode began at this step
    reset_obs: np.ndarray  # (N, H, W) first observation where started
    option: np.ndarray  # (N, b)
    action: np.ndarray  # (N, P)
    logp: np.ndarray  # (N,)
    value: np.ndarray  # (N,)
    next_obs: np.ndarray  # (N, H, W)
    fresh: np.ndarray  # (N,) flag fed to memory with next_obs
    guess: np.ndarray  # (N, b)
    reward: np.ndarray  # (N,)
    done: np.ndarray  # (N,) episode ended after this step
    bit_probs: np.ndarray  # (N, b) inverse output after the step
    true_loglik: np.ndarray  # (N,) log q(w_t | z_{t+1})


def _mix(old: Tensor, new: Tensor, mask: np.ndarray) -> Tensor:
    m = mask.astype(np.float64)[:, None]
    return old * (1.0 - m) + new * m


def restart_rows(agent: Agent, state: AgentState, obs: np.ndarray, mask: np.ndarray,
                 option_bits: np.ndarray | None = None) -> AgentState:
    """Replace the rows in ``mask`` with the memory of a fresh episode seeing ``obs``."""
    if not mask.any():
        return state
    n = mask.shape[0]
    fresh = agent.observe(agent.initial_state(n), obs, np.zeros(n), option_bits)
    return AgentState(_mix(state.hidden, fresh.hidden, mask), _mix(state.cell, fresh.cell, mask))


class Workers:
    def __init__(self, agent: Agent, env_cfg: EnvConfig, space: options.OptionSpace, n: int,
                 seed: int, horizon: int = 128):
        self.agent = agent
        self.env_cfg = env_cfg
        self.space = space
        self.n = n
        self.horizon = horizon
        root = np.random.SeedSequence(seed)
        children = root.spawn(n)
        self.env_rngs, self.action_rngs, self.guess_rngs, self.option_rngs = [], [], [], []
        for child in children:
            e, a, g, o = child.spawn(4)
            self.env_rngs.append(np.random.default_rng(e))
            self.action_rngs.append(np.random.default_rng(a))
            self.guess_rngs.append(np.random.default_rng(g))
            self.option_rngs.append(np.random.default_rng(o))
        self.envs = [BoxesEnv(env_cfg) for _ in range(n)]
        self.channels = [options.new_channel(space, r) for r in self.option_rngs]
        self.state = agent.initial_state(n)
        self.fresh = np.ones(n, dtype=bool)
        self.needs_reset = np.ones(n, dtype=bool)
        self.episode_step = np.zeros(n, dtype=np.int64)
        self.obs = np.zeros((n, env_cfg.height, env_cfg.width), dtype=np.uint8)
        self.intervals: list[int] = []

    def begin_episodes(self) -> tuple[np.ndarray, np.ndarray]:
        started = self.needs_reset.copy()
        for i in np.flatnonzero(started):
            self.obs[i] = self.envs[i].reset(int(self.env_rngs[i].integers(2**63)))
            self.channels[i] = options.new_channel(self.space, self.option_rngs[i])
            self.fresh[i] = True
            self.episode_step[i] = 0
        with no_grad():
            self.state = restart_rows(self.agent, self.state, self.obs, started, self.current_options())
        self.needs_reset[:] = False
        return started, self.obs.copy()

    def current_options(self) -> np.ndarray:
        return np.stack([ch.current for ch in self.channels])

    def step(self, guesser=None) -> StepRecord:
        """Advance every replica by one step.

        ``guesser(bit_probs, channels)`` may replace the inverse-model guess
        (used by baselines); it must return an (N, b) bit array.
        """
        started, reset_obs = self.begin_episodes()
        agent, n = self.agent, self.n
        option = self.current_options()
        with no_grad():
            logp_all = agent.policy_logp(self.state, option).data
            value = agent.value(self.state).data.copy()
        probs = np.exp(logp_all)
        cdf = np.cumsum(probs, axis=-1)
        u = np.stack([r.random(probs.shape[1]) for r in self.action_rngs])[:, :, None] * cdf[:, :, -1:]
        action = np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)
        logp = np.take_along_axis(logp_all, action[:, :, None], axis=-1)[:, :, 0].sum(axis=1)

        shape = (self.env_cfg.height, self.env_cfg.width)
        next_obs = np.stack([env.step(a.reshape(shape)) for env, a in zip(self.envs, action)])
        fresh = self.fresh.copy()
        with no_grad():
            self.state = agent.observe(self.state, next_obs, fresh, option)
            logits = agent.inverse_logits(self.state)
        bit_probs = options.clamp(F.sigmoid(logits).data)
        true_ll = np.log(np.where(option == 1, bit_probs, 1.0 - bit_probs)).sum(axis=1)
        if guesser is None:
            guess = np.stack([(r.random(self.space.n_bits) < p).astype(np.int8)
                              for r, p in zip(self.guess_rngs, bit_probs)])
        else:
            guess = np.asarray(guesser(bit_probs, self.channels), dtype=np.int8)

        reward = np.zeros(n)
        for i in range(n):
            r, self.channels[i] = options.check_guess(self.channels[i], guess[i])
            reward[i] = r
            if r:
                self.intervals.append(self.channels[i].last_interval)
        self.fresh = reward > 0
        self.episode_step += 1
        self.obs = next_obs
        done = self.episode_step >= self.horizon
        self.needs_reset |= done
        return StepRecord(started, reset_obs, option, action.astype(np.int8), logp, value,
                          next_obs, fresh, guess, reward, done.copy(), bit_probs, true_ll)

    def bootstrap_value(self) -> np.ndarray:
        with no_grad():
            return self.agent.value(self.state).data.copy()
