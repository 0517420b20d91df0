import math

import numpy as np
import pytest

from frd.a2c import Agent, AgentConfig
from frd.distillation import (DistillConfig, cross_entropy, cross_entropy_grad, distill_policy,
                              distill_value, mse_grad, policy_distill_loss, raw_policy_distill)
from frd.federation import GlobalEntry, GlobalProxyMemory
from frd.nn import softmax
from frd.proxy_memory import ClusterGrid, ExperienceMemory
from helpers import finite_diff, max_rel_err

GRID = ClusterGrid(10)


def memory(ids, targets, kind="policy"):
    g = GlobalProxyMemory(kind)
    for c, t in zip(ids, targets):
        g.entries[int(c)] = GlobalEntry(np.asarray(t, dtype=float) if kind == "policy" else float(t), 1, 1)
    return g


def constant_policy(agent, logits):
    for p in agent.policy_net.params:
        p[...] = 0.0
    agent.policy_net.biases[-1][:] = logits


def entropy(p):
    p = np.asarray(p)
    return float(-np.sum(p * np.log(p)))


def test_loss_at_matching_uniform_policy_is_entropy():
    a = Agent()
    constant_policy(a, [0.0, 0.0])
    mem = memory([1, 20, 300], [[0.5, 0.5]] * 3)
    assert policy_distill_loss(a, mem, GRID) == pytest.approx(3 * math.log(2), abs=1e-12)


def test_loss_single_entry_direct_evaluation():
    a = Agent()
    constant_policy(a, [1.0, 0.0])
    loss = policy_distill_loss(a, memory([7], [[1.0, 0.0]]), GRID)
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_loss_uses_local_policy_at_proxy_states():
    a = Agent(seed=3)
    rng = np.random.default_rng(0)
    ids = rng.choice(GRID.n_clusters, size=10, replace=False)
    p0 = rng.uniform(size=10)
    targets = np.stack([p0, 1 - p0], axis=1)
    local = softmax(a.policy_net.forward(GRID.proxy_states(sorted(ids))))
    mem = memory(ids, targets)
    expected = -np.sum(mem.targets() * np.log(local))
    assert policy_distill_loss(a, mem, GRID) == pytest.approx(expected, rel=1e-12)
    # order of entries does not matter
    rev = memory(ids[::-1], targets[::-1])
    assert policy_distill_loss(a, rev, GRID) == pytest.approx(expected, rel=1e-12)


def test_loss_bounded_below_by_target_entropy():
    rng = np.random.default_rng(1)
    for seed in range(10):
        a = Agent(seed=seed)
        ids = rng.choice(GRID.n_clusters, size=8, replace=False)
        p0 = rng.uniform(0.05, 0.95, size=8)
        mem = memory(ids, np.stack([p0, 1 - p0], axis=1))
        bound = sum(entropy(t) for t in mem.targets())
        assert policy_distill_loss(a, mem, GRID) >= bound


def test_loss_is_additive():
    a = Agent(seed=2)
    m1, m2 = memory([4], [[0.3, 0.7]]), memory([9], [[0.9, 0.1]])
    both = memory([4, 9], [[0.3, 0.7], [0.9, 0.1]])
    total = policy_distill_loss(a, m1, GRID) + policy_distill_loss(a, m2, GRID)
    assert policy_distill_loss(a, both, GRID) == pytest.approx(total, rel=1e-13)


def test_empty_or_wrong_kind_memory_rejected():
    a = Agent()
    with pytest.raises(ValueError):
        policy_distill_loss(a, GlobalProxyMemory("policy"), GRID)
    with pytest.raises(ValueError):
        distill_policy(a, memory([1], [2.0], "value"), GRID)
    with pytest.raises(ValueError):
        distill_value(a, memory([1], [[0.5, 0.5]]), GRID)
    with pytest.raises(ValueError):
        raw_policy_distill(a, ExperienceMemory())


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Agent(AgentConfig(hidden_width=6, hidden_layers=2), seed=seed)
    for b in a.policy_net.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    states = rng.normal(size=(6, 4))
    p0 = rng.uniform(size=6)
    targets = np.stack([p0, 1 - p0], axis=1)
    loss, grads = cross_entropy_grad(a.policy_net, states, targets)
    f = lambda: cross_entropy(a.policy_net, states, targets)
    assert loss == pytest.approx(f(), abs=1e-12)
    assert max_rel_err(grads, finite_diff(f, a.policy_net.params)) <= 1e-4


def test_mse_gradient_finite_differences():
    rng = np.random.default_rng(7)
    a = Agent(AgentConfig(hidden_width=5, hidden_layers=2), seed=7)
    for b in a.value_net.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)  # keep pre-activations off the ReLU kink
    states, targets = rng.normal(size=(6, 4)), rng.normal(size=6)
    _, grads = mse_grad(a.value_net, states, targets)
    f = lambda: float(np.mean((a.value_net.forward(states)[:, 0] - targets) ** 2))
    assert max_rel_err(grads, finite_diff(f, a.value_net.params)) <= 1e-4


def test_matching_policy_barely_moves():
    a = Agent(seed=4)
    ids = [0, 55, 999]
    targets = softmax(a.policy_net.forward(GRID.proxy_states(ids)))
    _, grads = cross_entropy_grad(a.policy_net, GRID.proxy_states(ids), targets)
    assert max(np.abs(g).max() for g in grads) < 1e-12


def test_distill_policy_descends():
    rng = np.random.default_rng(5)
    ids = rng.choice(GRID.n_clusters, size=10, replace=False)
    p0 = rng.uniform(size=10)
    mem = memory(ids, np.stack([p0, 1 - p0], axis=1))
    a = Agent(seed=5)
    trace = distill_policy(a, mem, GRID, DistillConfig(epochs=200))
    assert len(trace) == 200 and trace[-1] < trace[0]
    assert np.all(np.isfinite(a.policy_net.get_flat()))


def test_raw_distill_matches_proxy_formula():
    a = Agent(seed=6)
    state = GRID.proxy_state(123)
    raw = ExperienceMemory()
    raw.record_policy(state, [0.2, 0.8])
    assert cross_entropy(a.policy_net, *raw.arrays()) == pytest.approx(
        policy_distill_loss(a, memory([123], [[0.2, 0.8]]), GRID), rel=1e-14)
    many = ExperienceMemory()
    for _ in range(5):
        many.record_policy(state, [0.2, 0.8])
    assert cross_entropy(a.policy_net, *many.arrays()) == pytest.approx(
        5 * cross_entropy(a.policy_net, *raw.arrays()), rel=1e-13)


def test_raw_distill_descends():
    rng = np.random.default_rng(8)
    raw = ExperienceMemory()
    for _ in range(30):
        p = rng.uniform()
        raw.record_policy(rng.normal(size=4), [p, 1 - p])
    trace = raw_policy_distill(Agent(seed=8), raw, DistillConfig(epochs=100))
    assert trace[-1] < trace[0]


def test_value_distillation():
    a = Agent(seed=9)
    for p in a.value_net.params:
        p[...] = 0.0
    a.value_net.biases[-1][:] = 1.0
    trace = distill_value(a, memory([17], [3.0], "value"), GRID, DistillConfig(epochs=1))
    assert trace[0] == pytest.approx(4.0)

    b = Agent(seed=10)
    ids = [3, 400, 4321]
    fit = distill_value(b, memory(ids, b.value(GRID.proxy_states(ids)), "value"), GRID,
                        DistillConfig(epochs=1))
    assert fit[0] == pytest.approx(0.0, abs=1e-24)

    c = Agent(seed=11)
    trace = distill_value(c, memory(ids, [2.0] * 3, "value"), GRID, DistillConfig(epochs=300, lr=1e-2))
    assert trace[-1] < 1e-2 * trace[0]


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(epochs=0)
    with pytest.raises(ValueError):
        DistillConfig(lr=0)
