"""CartPole-v1 dynamics, reimplemented without gym.

State layout is ``[x, x_dot, theta, theta_dot]``. Integration is plain Euler:
positions advance with the pre-step velocities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLEMASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02

X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * 2 * math.pi / 360  # ~0.2095 rad
MAX_STEPS = 500

LEFT, RIGHT = 0, 1


class TerminalStateError(RuntimeError):
    """Raised when stepping an environment whose episode already ended."""


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    step_index: int
    # done because of the time limit only; value bootstrapping continues through it
    truncated: bool = False

    @property
    def terminal(self) -> bool:
        return self.done and not self.truncated


def dynamics(state, action: int) -> tuple[float, float, float, float]:
    """One Euler step of the cart-pole equations of motion. Pure function."""
    if action not in (LEFT, RIGHT):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    force = FORCE_MAG if action == RIGHT else -FORCE_MAG
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / TOTAL_MASS)
    )
    x_acc = temp - POLEMASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    return (
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    )


def out_of_bounds(state) -> bool:
    return abs(state[0]) > X_THRESHOLD or abs(state[2]) > THETA_THRESHOLD


def step(state, action: int, step_index: int = 0, max_steps: int = MAX_STEPS) -> StepOutcome:
    """Stateless transition; ``step_index`` is the number of steps already taken."""
    nxt = np.array(dynamics(state, action))
    idx = step_index + 1
    failed = out_of_bounds(nxt)
    truncated = not failed and idx >= max_steps
    return StepOutcome(nxt, 1.0, failed or truncated, idx, truncated)


class CartPole:
    """Single CartPole-v1 episode runner. One instance per agent."""

    def __init__(self, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.state: np.ndarray | None = None
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def step(self, action: int) -> StepOutcome:
        if self.state is None or self.done:
            raise TerminalStateError("step() called on a finished episode; call reset() first")
        out = step(self.state, action, self.steps, self.max_steps)
        self.state = out.next_state.copy()
        self.steps = out.step_index
        self.done = out.done
        return out
