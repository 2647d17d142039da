"""Pushing-boxes world: square patches on a borderless field, moved by per-pixel forces.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; grids are
indexed ``grid[y, x]``. Up points towards smaller ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# action symbols, in this order everywhere (codes 0..4)
LEFT, DOWN, RIGHT, UP, NONE = range(5)
N_SYMBOLS = 5
SYMBOL_CHARS = "LDRU."
UNIT_X = np.array([-1, 0, 1, 0, 0])
UNIT_Y = np.array([0, 1, 0, -1, 0])


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    width: int = 9
    height: int = 9
    n_patches: int = 3
    patch_size: int = 3
    force_threshold: float = 3.0
    move_step: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be a positive odd number, got {self.patch_size}")
        if self.width < self.patch_size or self.height < self.patch_size:
            raise ConfigError(
                f"a {self.patch_size}x{self.patch_size} patch cannot be placed in a "
                f"{self.width}x{self.height} field"
            )
        if self.n_patches < 1:
            raise ConfigError("n_patches must be >= 1")
        if not self.force_threshold > 0:
            raise ConfigError("force_threshold must be > 0")
        if not 0 < self.move_step <= 1:
            raise ConfigError("move_step must lie in (0, 1]")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class PatchState:
    center_x: float
    center_y: float
    z_index: int


@dataclass(frozen=True)
class EnvState:
    config: EnvConfig
    patches: tuple[PatchState, ...]
    step_count: int = 0


def round_half_down(v: float) -> int:
    """Nearest integer, ties towards negative infinity."""
    return math.ceil(v - 0.5)


def reset(config: EnvConfig, seed: int | None = None) -> EnvState:
    """Place every patch uniformly at an integer position fully inside the field."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    half = config.patch_size // 2
    xs = rng.integers(half, config.width - half, size=config.n_patches)
    ys = rng.integers(half, config.height - half, size=config.n_patches)
    patches = tuple(PatchState(float(x), float(y), i) for i, (x, y) in enumerate(zip(xs, ys)))
    return EnvState(config, patches, 0)


def _footprint(config: EnvConfig, patch: PatchState) -> tuple[int, int, int, int]:
    """Clipped pixel bounds ``(x0, x1, y0, y1)``, half-open; may be empty."""
    half = config.patch_size // 2
    cx, cy = round_half_down(patch.center_x), round_half_down(patch.center_y)
    x0, x1 = max(cx - half, 0), min(cx + half + 1, config.width)
    y0, y1 = max(cy - half, 0), min(cy + half + 1, config.height)
    return x0, max(x1, x0), y0, max(y1, y0)


def covered_pixels(state: EnvState, patch_index: int) -> set[tuple[int, int]]:
    x0, x1, y0, y1 = _footprint(state.config, state.patches[patch_index])
    return {(x, y) for y in range(y0, y1) for x in range(x0, x1)}


def owner_map(state: EnvState) -> np.ndarray:
    """Per-pixel index of the topmost covering patch, -1 where uncovered."""
    cfg = state.config
    owner = np.full((cfg.height, cfg.width), -1, dtype=np.int64)
    for i in sorted(range(len(state.patches)), key=lambda k: state.patches[k].z_index):
        x0, x1, y0, y1 = _footprint(cfg, state.patches[i])
        owner[y0:y1, x0:x1] = i
    return owner


def top_patch_at(state: EnvState, pixel: tuple[int, int]) -> int | None:
    x, y = pixel
    cfg = state.config
    if not (0 <= x < cfg.width and 0 <= y < cfg.height):
        raise IndexError(f"pixel {pixel} outside the {cfg.width}x{cfg.height} field")
    best = None
    for i, p in enumerate(state.patches):
        if (x, y) in covered_pixels(state, i) and (best is None or p.z_index > state.patches[best].z_index):
            best = i
    return best


def _net_forces(state: EnvState, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    owner = owner_map(state).reshape(-1)
    a = np.asarray(action).reshape(-1)
    mask = owner >= 0
    n = len(state.patches)
    fx = np.bincount(owner[mask], weights=UNIT_X[a[mask]], minlength=n)
    fy = np.bincount(owner[mask], weights=UNIT_Y[a[mask]], minlength=n)
    return fx, fy


def net_force(state: EnvState, action: np.ndarray, patch_index: int) -> tuple[float, float]:
    fx, fy = _net_forces(state, action)
    return float(fx[patch_index]), float(fy[patch_index])


def render(state: EnvState) -> np.ndarray:
    cfg = state.config
    obs = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    for p in state.patches:
        x0, x1, y0, y1 = _footprint(cfg, p)
        obs[y0:y1, x0:x1] = 1
    return obs


def step(state: EnvState, action: np.ndarray) -> tuple[EnvState, np.ndarray]:
    """Apply one force grid; every patch moves from the pre-step state simultaneously."""
    cfg = state.config
    action = np.asarray(action)
    if action.shape != (cfg.height, cfg.width):
        raise ValueError(f"action grid must have shape {(cfg.height, cfg.width)}, got {action.shape}")
    fx, fy = _net_forces(state, action)
    tau, d = cfg.force_threshold, cfg.move_step
    moved = []
    for p, x_force, y_force in zip(state.patches, fx, fy):
        dx = math.copysign(d, x_force) if abs(x_force) >= tau else 0.0
        dy = math.copysign(d, y_force) if abs(y_force) >= tau else 0.0
        moved.append(replace(p, center_x=p.center_x + dx, center_y=p.center_y + dy) if dx or dy else p)
    new = EnvState(cfg, tuple(moved), state.step_count + 1)
    return new, render(new)


def action_to_text(action: np.ndarray) -> str:
    return "".join(SYMBOL_CHARS[a] for a in np.asarray(action).reshape(-1))


def text_to_action(text: str, config: EnvConfig) -> np.ndarray:
    codes = [SYMBOL_CHARS.index(ch) for ch in text]
    return np.array(codes, dtype=np.int64).reshape(config.height, config.width)


def write_pgm(path: str | Path, obs: np.ndarray) -> None:
    """Binary greyscale PGM, 255 where occupied."""
    h, w = obs.shape
    payload = (np.asarray(obs) > 0).astype(np.uint8) * 255
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + payload.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4], dtype=np.uint8, count=w * h)
    return (data.reshape(h, w) > 0).astype(np.uint8)


@dataclass
class BoxesEnv:
    """Stateful wrapper that carries an :class:`EnvState` from step to step."""

    config: EnvConfig
    state: EnvState = field(init=False)

    def __post_init__(self):
        self.state = reset(self.config)

    def reset(self, seed: int) -> np.ndarray:
        self.state = reset(self.config, seed)
        return render(self.state)

    def step(self, action: np.ndarray) -> np.ndarray:
        self.state, obs = step(self.state, action)
        return obs
