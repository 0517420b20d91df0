"""Fitting an agent's networks to exchanged knowledge.

Policy losses are the summed cross-entropy between target distributions and
the local policy evaluated at the memory's states; the value loss is the mean
squared error at the proxy states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, Mlp, log_softmax


@dataclass
class DistillConfig:
    epochs: int = 50
    lr: float = 1e-3
    full_batch: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 1 and lr > 0")


def cross_entropy(net: Mlp, states, targets) -> float:
    """Summed cross-entropy ``-sum_k sum_a t[k,a] log pi(a|s_k)``."""
    logp = log_softmax(net.forward(np.atleast_2d(states)))
    return float(-np.sum(np.atleast_2d(targets) * logp))


def cross_entropy_grad(net: Mlp, states, targets):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    logits, cache = net.forward_cache(states)
    logp = log_softmax(logits)
    loss = float(-np.sum(targets * logp))
    g = targets.sum(axis=1, keepdims=True) * np.exp(logp) - targets
    return loss, net.backward(cache, g)


def mse(net: Mlp, states, targets) -> float:
    pred = net.forward(np.atleast_2d(states))[:, 0]
    return float(np.mean((pred - np.asarray(targets, dtype=np.float64)) ** 2))


def mse_grad(net: Mlp, states, targets):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    out, cache = net.forward_cache(states)
    err = out[:, 0] - targets
    loss = float(np.mean(err * err))
    return loss, net.backward(cache, (2.0 / len(err)) * err[:, None])


def _fit(net: Mlp, states, targets, cfg: DistillConfig, grad_fn) -> list[float]:
    if len(states) == 0:
        raise ValueError("cannot distill from an empty memory")
    opt = Adam(net.params, lr=cfg.lr)
    trace = []
    for epoch in range(cfg.epochs):
        loss, grads = grad_fn(net, states, targets)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite distillation loss at epoch {epoch}")
        trace.append(loss)
        opt.step(net.params, grads)
    return trace


def _proxy_inputs(memory, grid):
    if memory is None or len(memory) == 0:
        raise ValueError("cannot distill from an empty memory")
    return grid.proxy_states(memory.ids()), memory.targets()


def policy_distill_loss(agent, memory, grid) -> float:
    if memory.kind != "policy":
        raise ValueError("policy distillation needs a policy-kind memory")
    states, targets = _proxy_inputs(memory, grid)
    return cross_entropy(agent.policy_net, states, targets)


def distill_policy(agent, memory, grid, cfg: DistillConfig | None = None) -> list[float]:
    """Full-batch Adam on the proxy-state cross-entropy. Returns per-epoch losses."""
    if memory.kind != "policy":
        raise ValueError("policy distillation needs a policy-kind memory")
    states, targets = _proxy_inputs(memory, grid)
    return _fit(agent.policy_net, states, targets, cfg or DistillConfig(), cross_entropy_grad)


def raw_policy_distill(agent, memory, cfg: DistillConfig | None = None) -> list[float]:
    """Same fit against actual visited states from a raw experience memory."""
    states, targets = memory.arrays()
    return _fit(agent.policy_net, states, targets, cfg or DistillConfig(), cross_entropy_grad)


def distill_value(agent, memory, grid, cfg: DistillConfig | None = None) -> list[float]:
    if memory.kind != "value":
        raise ValueError("value distillation needs a value-kind memory")
    states, targets = _proxy_inputs(memory, grid)
    return _fit(agent.value_net, states, targets, cfg or DistillConfig(), mse_grad)
