"""One-step advantage actor-critic with per-episode batched updates."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np

from .cartpole import CartPole
from .nn import Adam, Mlp, log_softmax, softmax

OBS_DIM = 4
N_ACTIONS = 2


@dataclass
class AgentConfig:
    gamma: float = 0.99
    policy_lr: float = 1e-3
    value_lr: float = 1e-2
    hidden_width: int = 24
    hidden_layers: int = 2
    entropy_coeff: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.policy_lr <= 0 or self.value_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be >= 1")


@dataclass
class TrajectoryStep:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    truncated: bool
    policy_at_state: np.ndarray


@dataclass
class UpdateSummary:
    policy_loss: float
    value_loss: float
    mean_advantage: float


class Recorder(Protocol):
    def record_episode(self, states: np.ndarray, policies: np.ndarray,
                       values: np.ndarray | None) -> None: ...


def agent_streams(seed: int, agent_id: int):
    """Independent (init, env, action) generators derived from (seed, agent_id)."""
    ss = np.random.SeedSequence([int(seed), int(agent_id)])
    init_ss, env_ss, act_ss = ss.spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(env_ss),
            np.random.default_rng(act_ss))


class Agent:
    def __init__(self, config: AgentConfig | None = None, seed: int = 0, agent_id: int = 0):
        self.config = config or AgentConfig()
        self.id = agent_id
        init_rng, self.env_rng, self.rng = agent_streams(seed, agent_id)
        c = self.config
        self.policy_net = Mlp.build(OBS_DIM, c.hidden_width, c.hidden_layers, N_ACTIONS, init_rng)
        self.value_net = Mlp.build(OBS_DIM, c.hidden_width, c.hidden_layers, 1, init_rng)
        self.policy_opt = Adam(self.policy_net.params, lr=c.policy_lr)
        self.value_opt = Adam(self.value_net.params, lr=c.value_lr)
        self.env = CartPole()
        self.episodes = 0
        self.durations: list[int] = []

    # -- acting ---------------------------------------------------------------

    def policy(self, states) -> np.ndarray:
        return softmax(self.policy_net.forward(states))

    def value(self, states) -> np.ndarray:
        return self.value_net.forward(states)[..., 0]

    def act(self, state) -> tuple[int, np.ndarray]:
        probs = self.policy(state)
        action = 0 if self.rng.random() < probs[0] else 1
        return action, probs

    # -- learning -------------------------------------------------------------

    def advantage(self, step: TrajectoryStep) -> float:
        v_next = 0.0 if step.terminal else float(self.value(step.next_state))
        return step.reward + self.config.gamma * v_next - float(self.value(step.state))

    def update_from_episode(self, steps: Sequence[TrajectoryStep]) -> UpdateSummary:
        if not steps:
            raise ValueError("cannot update from an empty episode")
        return self._update(
            np.array([s.state for s in steps], dtype=np.float64),
            np.array([s.action for s in steps], dtype=np.int64),
            np.array([s.reward for s in steps], dtype=np.float64),
            np.array([s.next_state for s in steps], dtype=np.float64),
            np.array([s.terminal for s in steps], dtype=bool),
        )

    def losses_and_grads(self, states, actions, rewards, next_states, terminal):
        """A2C losses and their parameter gradients, with targets/advantages held fixed.

        Returns ``(policy_loss, policy_grads, value_loss, value_grads, advantages)``.
        """
        n = len(states)
        v, v_cache = self.value_net.forward_cache(states)
        v = v[:, 0]
        v_next = np.where(terminal, 0.0, self.value(next_states))
        adv = rewards + self.config.gamma * v_next - v

        value_loss = float(np.mean(adv * adv))
        value_grads = self.value_net.backward(v_cache, ((-2.0 / n) * adv)[:, None])

        logits, p_cache = self.policy_net.forward_cache(states)
        logp = log_softmax(logits)
        probs = np.exp(logp)
        rows = np.arange(n)
        policy_loss = float(-np.mean(logp[rows, actions] * adv))
        onehot = np.zeros_like(probs)
        onehot[rows, actions] = 1.0
        g_logits = (probs - onehot) * adv[:, None]
        ent_c = self.config.entropy_coeff
        if ent_c:
            ent = -(probs * logp).sum(axis=1)
            policy_loss -= ent_c * float(np.mean(ent))
            g_logits += ent_c * probs * (logp + ent[:, None])
        policy_grads = self.policy_net.backward(p_cache, g_logits / n)
        return policy_loss, policy_grads, value_loss, value_grads, adv

    def _update(self, states, actions, rewards, next_states, terminal) -> UpdateSummary:
        # both gradients come from the pre-update networks
        p_loss, p_grads, v_loss, v_grads, adv = self.losses_and_grads(
            states, actions, rewards, next_states, terminal)
        self.value_opt.step(self.value_net.params, v_grads)
        self.policy_opt.step(self.policy_net.params, p_grads)
        return UpdateSummary(p_loss, v_loss, float(np.mean(adv)))

    # -- episodes -------------------------------------------------------------

    def run_episode(self, recorders: Sequence[Recorder] = (), env: CartPole | None = None,
                    learn: bool = True) -> int:
        """Play one episode, feed recorders, apply one A2C update. Returns the duration."""
        env = env if env is not None else self.env
        state = env.reset(self.env_rng)
        states, actions, probs_seen, next_states = [], [], [], []
        while True:
            action, probs = self.act(state)
            out = env.step(action)
            states.append(state)
            actions.append(action)
            probs_seen.append(probs)
            next_states.append(out.next_state)
            state = out.next_state
            if out.done:
                break
        n = len(states)
        s = np.array(states)
        terminal = np.zeros(n, dtype=bool)
        terminal[-1] = out.terminal
        if recorders:
            pol = np.array(probs_seen)
            values = self.value(s) if any(getattr(r, "wants_values", False) for r in recorders) else None
            for r in recorders:
                r.record_episode(s, pol, values)
        if learn:
            self._update(s, np.array(actions), np.ones(n), np.array(next_states), terminal)
        self.episodes += 1
        self.durations.append(n)
        return n

    # -- checkpointing --------------------------------------------------------

    def checkpoint(self) -> dict:
        return {
            "config": asdict(self.config),
            "policy": self.policy_net.get_flat().tolist(),
            "value": self.value_net.get_flat().tolist(),
            "rng": self.rng.bit_generator.state,
            "env_rng": self.env_rng.bit_generator.state,
            "episodes": self.episodes,
        }

    def restore(self, ckpt: dict) -> None:
        self.policy_net.set_flat(ckpt["policy"])
        self.value_net.set_flat(ckpt["value"])
        self.rng.bit_generator.state = ckpt["rng"]
        self.env_rng.bit_generator.state = ckpt["env_rng"]
        self.episodes = ckpt["episodes"]
