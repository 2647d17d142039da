"""Decode-interval statistics, baselines, the empowerment estimate and episode dumps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import options
from .agent import Agent
from .env import EnvConfig, action_to_text, write_pgm
from .rollout import Workers


@dataclass
class EvalReport:
    n_trials: int
    intervals: np.ndarray = field(repr=False)
    censored: int = 0
    mean_reward: float = float("nan")
    empowerment_nats: float = float("nan")
    entropy_nats: float = float("nan")
    baseline_medians: dict = field(default_factory=dict)

    @property
    def n_intervals(self) -> int:
        return int(self.intervals.size)

    @property
    def median(self) -> float:
        return float(np.median(self.intervals)) if self.intervals.size else float("nan")

    @property
    def iqr(self) -> tuple[float, float]:
        if not self.intervals.size:
            return (float("nan"), float("nan"))
        q1, q3 = np.percentile(self.intervals, [25, 75])
        return float(q1), float(q3)

    def rows(self) -> list[tuple[str, object]]:
        q1, q3 = self.iqr
        out = [
            ("n_trials", self.n_trials),
            ("n_intervals", self.n_intervals),
            ("censored_intervals", self.censored),
            ("median_decode_steps", self.median),
            ("q25_decode_steps", q1),
            ("q75_decode_steps", q3),
            ("mean_reward", self.mean_reward),
            ("empowerment_nats", self.empowerment_nats),
            ("entropy_nats", self.entropy_nats),
        ]
        out += [(f"baseline_{k}_median", v) for k, v in sorted(self.baseline_medians.items())]
        return out


def geometric_median(n_bits: int) -> int:
    """Median of the number of uniform guesses needed to hit one of 2**n_bits words."""
    if n_bits == 1:
        return 1
    return math.ceil(math.log(0.5) / math.log1p(-(2.0**-n_bits)))


def baseline_random(space: options.OptionSpace, n_trials: int, seed: int = 0) -> EvalReport:
    """Uniform guesser with no environment: one decode interval per trial."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))
    words = rng.integers(0, space.size, size=n_trials)
    intervals = np.zeros(n_trials, dtype=np.int64)
    pending = np.arange(n_trials)
    step = 0
    while pending.size:
        step += 1
        hit = rng.integers(0, space.size, size=pending.size) == words[pending]
        intervals[pending[hit]] = step
        pending = pending[~hit]
    return EvalReport(n_trials, intervals, mean_reward=float(n_trials / intervals.sum()),
                      entropy_nats=options.entropy(space))


Guesser = Callable[[np.ndarray, list], np.ndarray]
Decoder = Callable[[np.ndarray, np.ndarray], np.ndarray]


def uniform_guesser(seed: int) -> Guesser:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E55]))

    def guess(bit_probs, channels):
        return rng.integers(0, 2, size=bit_probs.shape, dtype=np.int8)

    return guess


def eval_median_steps(agent: Agent, env_cfg: EnvConfig, space: options.OptionSpace, n_trials: int,
                      seed: int = 0, horizon: int = 128, max_steps: int = 8192, batch: int = 64,
                      guesser: Guesser | None = None) -> EvalReport:
    """Run ``n_trials`` fresh episodes and collect every decode interval.

    Each episode lasts ``horizon`` steps, except that a word drawn before the
    horizon is followed until it is decoded so that long intervals are not
    silently dropped; anything still undecoded at ``max_steps`` is counted
    as censored.
    """
    n = max(1, min(batch, n_trials))
    workers = Workers(agent, env_cfg, space, n, seed=seed, horizon=max_steps)
    queued = n_trials - n
    active = np.ones(n, dtype=bool)
    intervals: list[int] = []
    censored = 0
    rewards = 0.0
    steps = 0
    while active.any():
        rec = workers.step(guesser=guesser)
        rewards += float(rec.reward[active].sum())
        steps += int(active.sum())
        for i in np.flatnonzero(active):
            t = workers.episode_step[i]
            finished = False
            if rec.reward[i]:
                intervals.append(workers.channels[i].last_interval)
                finished = t >= horizon
            if not finished and t >= max_steps:
                censored += 1
                finished = True
            if finished:
                if queued:
                    queued -= 1
                    workers.needs_reset[i] = True
                else:
                    active[i] = False
    return EvalReport(n_trials, np.asarray(intervals, dtype=np.int64), censored,
                      mean_reward=rewards / max(steps, 1), entropy_nats=options.entropy(space))


def empowerment_estimate(agent: Agent, env_cfg: EnvConfig, space: options.OptionSpace, n_samples: int,
                         seed: int = 0, horizon: int = 128, batch: int = 64,
                         decoder: Decoder | None = None) -> tuple[float, float, np.ndarray]:
    """Mean log q(w | z_T) over fresh episodes plus H(Omega).

    Returns ``(estimate, entropy, curve)`` where ``curve[t]`` is the same
    quantity measured after step ``t``. ``decoder(bit_probs, true_words)``
    may replace the inverse model's probabilities (used for reference decoders).
    """
    h = options.entropy(space)
    total = np.zeros(horizon)
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        workers = Workers(agent, env_cfg, space, n, seed=seed + done, horizon=horizon)
        for t in range(horizon):
            if decoder is None:
                rec = workers.step()
                ll = rec.true_loglik
            else:
                words = workers.current_options()
                rec = workers.step(guesser=_decoded_guesser(decoder, words))
                probs = options.clamp(decoder(rec.bit_probs, words))
                ll = np.log(np.where(words == 1, probs, 1.0 - probs)).sum(axis=1)
            total[t] += ll.sum()
        done += n
    curve = total / n_samples + h
    return float(curve[-1]), h, curve


def _decoded_guesser(decoder: Decoder, words: np.ndarray) -> Guesser:
    def guess(bit_probs, channels):
        return options.most_likely(decoder(bit_probs, words))

    return guess


def perfect_decoder(bit_probs: np.ndarray, words: np.ndarray) -> np.ndarray:
    """Reference decoder that puts the clamp-bound probability on the true word."""
    return np.where(words == 1, 1.0 - options.CLAMP, options.CLAMP)


def render_episode(agent: Agent, env_cfg: EnvConfig, space: options.OptionSpace, seed: int, steps: int,
                   out_dir: str | Path) -> dict:
    """Dump one episode: ``step_%06d.pgm`` frames, ``actions.txt`` and ``trace.csv``.

    Frame ``t`` is the observation after action ``t``. Returns the trace as
    arrays for plotting.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    workers = Workers(agent, env_cfg, space, 1, seed=seed, horizon=max(steps, 1))
    trace = {"obs": [], "actions": [], "targets": [], "guesses": [], "rewards": [], "bit_probs": [],
             "p_target": []}
    if steps > 0:
        workers.begin_episodes()
        trace["initial_obs"] = workers.obs[0].copy()
    action_lines = [f"# actions {env_cfg.width}x{env_cfg.height} row-major, symbols L D R U . (none)"]
    shape = (env_cfg.height, env_cfg.width)
    for t in range(steps):
        rec = workers.step()
        write_pgm(out / f"step_{t:06d}.pgm", rec.next_obs[0])
        action = rec.action[0].reshape(shape)
        action_lines.append(action_to_text(action))
        trace["obs"].append(rec.next_obs[0])
        trace["actions"].append(action)
        trace["targets"].append(rec.option[0])
        trace["guesses"].append(rec.guess[0])
        trace["rewards"].append(int(rec.reward[0]))
        trace["bit_probs"].append(rec.bit_probs[0])
        trace["p_target"].append(float(np.exp(rec.true_loglik[0])))
    (out / "actions.txt").write_text("\n".join(action_lines) + "\n")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "target", "guess", "reward", "p_target", "bit_probs"])
        for t in range(steps):
            w.writerow([
                t,
                "".join(map(str, trace["targets"][t])),
                "".join(map(str, trace["guesses"][t])),
                trace["rewards"][t],
                repr(trace["p_target"][t]),
                " ".join(repr(float(p)) for p in trace["bit_probs"][t]),
            ])
    return trace
