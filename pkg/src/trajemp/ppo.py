"""PPO with truncated recurrence plus the supervised inverse-model loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import options
from .agent import Agent, AgentState, bernoulli_log_likelihood, policy_entropy
from .nn import F, Adam, Tensor
from .rollout import StepRecord, Workers, restart_rows

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "update", "steps", "mean_reward", "median_decode_steps", "policy_loss",
    "value_loss", "inverse_loss", "entropy", "empowerment_nats",
]


@dataclass(frozen=True)
class TrainConfig:
    n_envs: int = 64
    rollout_steps: int = 128
    batch_size: int = 256
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    inverse_coef: float = 1.0
    recurrence: int = 4
    epochs: int = 4
    lr: float = 7e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-5
    max_grad_norm: float = 0.5
    horizon: int = 128
    n_updates: int = 1000
    normalize_advantages: bool = True

    def __post_init__(self):
        total = self.n_envs * self.rollout_steps
        if self.rollout_steps % self.recurrence:
            raise ValueError("rollout_steps must be a multiple of recurrence")
        if total % self.batch_size or self.batch_size % self.recurrence:
            raise ValueError("batch_size must divide n_envs*rollout_steps and be a multiple of recurrence")


@dataclass
class RolloutBuffer:
    """Arrays indexed (step, env); segment states indexed (segment, env)."""

    started: np.ndarray
    reset_obs: np.ndarray
    option: np.ndarray
    action: np.ndarray
    logp: np.ndarray
    value: np.ndarray
    next_obs: np.ndarray
    fresh: np.ndarray
    guess: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    true_loglik: np.ndarray
    seg_hidden: np.ndarray
    seg_cell: np.ndarray
    last_value: np.ndarray
    recurrence: int
    intervals: list[int] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.reward.shape[0]

    @property
    def n_envs(self) -> int:
        return self.reward.shape[1]


def collect(workers: Workers, steps: int, recurrence: int) -> RolloutBuffer:
    if steps % recurrence:
        raise ValueError("steps must be a multiple of recurrence")
    records: list[StepRecord] = []
    seg_h, seg_c = [], []
    first_interval = len(workers.intervals)
    for t in range(steps):
        if t % recurrence == 0:
            seg_h.append(workers.state.hidden.data.copy())
            seg_c.append(workers.state.cell.data.copy())
        records.append(workers.step())

    def stack(name):
        return np.stack([getattr(r, name) for r in records])

    return RolloutBuffer(
        started=stack("started"), reset_obs=stack("reset_obs"), option=stack("option"),
        action=stack("action"), logp=stack("logp"), value=stack("value"), next_obs=stack("next_obs"),
        fresh=stack("fresh"), guess=stack("guess"), reward=stack("reward"), done=stack("done"),
        true_loglik=stack("true_loglik"), seg_hidden=np.stack(seg_h), seg_cell=np.stack(seg_c),
        last_value=workers.bootstrap_value(), recurrence=recurrence,
        intervals=list(workers.intervals[first_interval:]),
    )


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_value: np.ndarray,
                gamma: float = 0.99, lam: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns by backward recursion; ``dones[t]`` cuts after step t."""
    T = rewards.shape[0]
    adv = np.zeros_like(rewards, dtype=np.float64)
    running = np.zeros_like(last_value, dtype=np.float64)
    next_value = last_value
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class LossStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    inverse_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    grad_norm: float = 0.0


def unroll_losses(agent: Agent, buf: RolloutBuffer, seg_idx: np.ndarray, env_idx: np.ndarray,
                  advantages: np.ndarray, returns: np.ndarray, cfg: TrainConfig) -> tuple[Tensor, dict]:
    """Re-run the memory over the chosen segments and build the PPO + inverse loss."""
    L = buf.recurrence
    state = AgentState(Tensor(buf.seg_hidden[seg_idx, env_idx]), Tensor(buf.seg_cell[seg_idx, env_idx]))
    total = None
    parts = {"policy": 0.0, "value": 0.0, "inverse": 0.0, "entropy": 0.0, "clipped": 0.0}
    new_logps = []
    for l in range(L):
        t = seg_idx * L + l
        started = buf.started[t, env_idx]
        option = buf.option[t, env_idx]
        state = restart_rows(agent, state, buf.reset_obs[t, env_idx], started, option)
        logp_all = agent.policy_logp(state, option)
        logp = F.take_last(logp_all, buf.action[t, env_idx].astype(np.int64)).sum(axis=1)
        new_logps.append(logp.data)
        ratio = F.exp(logp - Tensor(buf.logp[t, env_idx]))
        adv = advantages[t, env_idx]
        surrogate = F.minimum(ratio * adv, F.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv)
        policy_loss = -surrogate.mean()
        value_loss = F.square(agent.value(state) - Tensor(returns[t, env_idx])).mean()
        entropy = policy_entropy(logp_all).mean()

        state = agent.observe(state, buf.next_obs[t, env_idx], buf.fresh[t, env_idx], option)
        inverse_loss = -bernoulli_log_likelihood(agent.inverse_logits(state), option).mean()

        step_loss = (policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
                     + cfg.inverse_coef * inverse_loss)
        total = step_loss if total is None else total + step_loss
        parts["policy"] += policy_loss.item() / L
        parts["value"] += value_loss.item() / L
        parts["inverse"] += inverse_loss.item() / L
        parts["entropy"] += entropy.item() / L
        parts["clipped"] += float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip_eps)) / L
    parts["new_logp"] = np.stack(new_logps)
    return total * (1.0 / L), parts


def ppo_update(agent: Agent, optimizer: Adam, buf: RolloutBuffer, advantages: np.ndarray,
               returns: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> LossStats:
    adv = advantages
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n_seg = buf.n_steps // buf.recurrence
    segs = np.array([(s, e) for s in range(n_seg) for e in range(buf.n_envs)])
    per_batch = cfg.batch_size // buf.recurrence
    stats = LossStats()
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(segs))
        for start in range(0, len(segs), per_batch):
            chosen = segs[order[start : start + per_batch]]
            loss, parts = unroll_losses(agent, buf, chosen[:, 0], chosen[:, 1], adv, returns, cfg)
            if not math.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss: policy={parts['policy']} value={parts['value']} "
                    f"inverse={parts['inverse']} entropy={parts['entropy']}"
                )
            loss.backward()
            stats.grad_norm += optimizer.step()
            stats.policy_loss += parts["policy"]
            stats.value_loss += parts["value"]
            stats.inverse_loss += parts["inverse"]
            stats.entropy += parts["entropy"]
            stats.clip_fraction += parts["clipped"]
            count += 1
    for name in vars(stats):
        setattr(stats, name, getattr(stats, name) / max(count, 1))
    return stats


def make_optimizer(agent: Agent, cfg: TrainConfig) -> Adam:
    return Adam(agent.parameters(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                eps=cfg.adam_eps, max_grad_norm=cfg.max_grad_norm)


def median_or_nan(values) -> float:
    return float(np.median(values)) if len(values) else float("nan")


def train(agent: Agent, workers: Workers, cfg: TrainConfig, seed: int, out_dir: Path | None = None,
          checkpoint_every: int = 0, evaluate: Callable[[Agent, int], dict] | None = None,
          eval_every: int = 0, on_update: Callable[[int, dict], None] | None = None) -> list[dict]:
    """Alternate collection and PPO updates; returns one metrics row per update.

    Rows go to ``metrics.csv`` in ``out_dir`` when given. ``evaluate`` (if
    given) runs every ``eval_every`` updates and its ``median_decode_steps``
    and ``empowerment_nats`` replace the rollout-based values in that row.
    A truthy return from ``on_update`` ends training after that update, which
    is how callers impose a wall-clock budget.
    """
    optimizer = make_optimizer(agent, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5050]))
    rows: list[dict] = []
    writer = handle = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handle = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
    steps = 0
    try:
        for update in range(1, cfg.n_updates + 1):
            buf = collect(workers, cfg.rollout_steps, cfg.recurrence)
            steps += buf.reward.size
            adv, ret = compute_gae(buf.reward, buf.value, buf.done.astype(np.float64), buf.last_value,
                                   cfg.gamma, cfg.gae_lambda)
            stats = ppo_update(agent, optimizer, buf, adv, ret, cfg, rng)
            row = {
                "update": update,
                "steps": steps,
                "mean_reward": float(buf.reward.mean()),
                "median_decode_steps": median_or_nan(buf.intervals),
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "inverse_loss": stats.inverse_loss,
                "entropy": stats.entropy,
                "empowerment_nats": float(buf.true_loglik.mean()) + options.entropy(workers.space),
                "grad_norm": stats.grad_norm,
                "clip_fraction": stats.clip_fraction,
            }
            if evaluate is not None and eval_every and update % eval_every == 0:
                row.update(evaluate(agent, update))
            rows.append(row)
            if writer is not None:
                writer.writerow({k: _fmt(row[k]) for k in METRIC_FIELDS})
                handle.flush()
            if out_dir is not None and checkpoint_every and update % checkpoint_every == 0:
                agent.save(out_dir / f"checkpoint_{update:06d}.empw")
            log.info("update %d reward %.4f median %.1f inv %.3f ent %.2f", update, row["mean_reward"],
                     row["median_decode_steps"], row["inverse_loss"], row["entropy"])
            if on_update is not None and on_update(update, row):
                break
    finally:
        if handle is not None:
            handle.close()
    if out_dir is not None:
        agent.save(out_dir / "final.empw")
    return rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
