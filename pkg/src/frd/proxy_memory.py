"""State-space grid clustering and the memories agents record during a round.

A ``ClusterGrid`` cuts each of the four state dimensions into ``S`` equal
subsections; a cluster is one cell of the resulting ``S**4`` grid and its
proxy state is the cell midpoint. Local memories keep per-cluster averages of
policies (or values) and are the only thing an agent ever sends out.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# position, velocity, angle, angular velocity
DEFAULT_BOUNDS = ((-2.4, 2.4), (-3.0, 3.0), (-0.2095, 0.2095), (-3.5, 3.5))

POLICY_TOL = 1e-6


@dataclass(frozen=True)
class ClusterGrid:
    subsections: int
    bounds: tuple = DEFAULT_BOUNDS

    def __post_init__(self):
        if self.subsections < 1:
            raise ValueError("subsections per dimension must be >= 1")
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(b) != 4 or any(hi <= lo for lo, hi in b):
            raise ValueError(f"need 4 increasing intervals, got {self.bounds}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "_lo", np.array([lo for lo, _ in b]))
        object.__setattr__(self, "_hi", np.array([hi for _, hi in b]))

    @property
    def n_clusters(self) -> int:
        return self.subsections ** 4

    @property
    def widths(self) -> np.ndarray:
        return (self._hi - self._lo) / self.subsections

    def indices(self, states) -> np.ndarray:
        """Per-dimension subsection indices, shape ``(..., 4)``."""
        s = np.asarray(states, dtype=np.float64)
        S = self.subsections
        idx = np.floor((s - self._lo) / (self._hi - self._lo) * S)
        # clamping the index is equivalent to clamping the state into [lo, hi - ulp]
        return np.clip(idx, 0, S - 1).astype(np.int64)

    def encode(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        S = self.subsections
        return ((idx[..., 0] * S + idx[..., 1]) * S + idx[..., 2]) * S + idx[..., 3]

    def decode(self, cluster_id: int) -> tuple[int, int, int, int]:
        S = self.subsections
        cid = int(cluster_id)
        if not 0 <= cid < self.n_clusters:
            raise IndexError(f"cluster id {cid} outside [0, {self.n_clusters})")
        i3 = cid % S
        cid //= S
        i2 = cid % S
        cid //= S
        return cid // S, cid % S, i2, i3

    def cluster_of(self, state) -> int:
        return int(self.encode(self.indices(state)))

    def clusters_of(self, states) -> np.ndarray:
        return self.encode(self.indices(states))

    def proxy_state(self, cluster_id: int) -> np.ndarray:
        idx = np.array(self.decode(cluster_id))
        return self._lo + (idx + 0.5) * self.widths

    def proxy_states(self, cluster_ids) -> np.ndarray:
        ids = np.asarray(cluster_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_clusters):
            raise IndexError(f"cluster id outside [0, {self.n_clusters})")
        S = self.subsections
        idx = np.stack([ids // S**3, (ids // S**2) % S, (ids // S) % S, ids % S], axis=-1)
        return self._lo + (idx + 0.5) * self.widths


def cell_midpoint(intervals) -> np.ndarray:
    """Midpoint of an arbitrary box given as per-dimension ``(lo, hi)`` pairs."""
    return np.array([(lo + hi) / 2.0 for lo, hi in intervals])


def _check_policy(policy) -> np.ndarray:
    p = np.asarray(policy, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > POLICY_TOL:
        raise ValueError(f"not a probability vector: {p}")
    return p


class LocalProxyMemory:
    """Per-cluster average of the policies an agent produced this round.

    Visits are stored per cluster and summed with ``math.fsum`` at finalize
    time, so the result does not depend on the order visits were recorded.
    """

    wants_values = False

    def __init__(self, grid: ClusterGrid, n_actions: int = 2):
        self.grid = grid
        self.n_actions = n_actions
        self._visits: dict[int, list[np.ndarray]] = defaultdict(list)
        self.recorded = 0

    def __len__(self) -> int:
        return len(self._visits)

    def record_policy(self, state, policy) -> None:
        p = _check_policy(policy)
        if p.shape != (self.n_actions,):
            raise ValueError(f"expected {self.n_actions} actions, got {p.shape}")
        self._visits[self.grid.cluster_of(state)].append(p)
        self.recorded += 1

    def record_episode(self, states, policies, values=None) -> None:
        policies = np.asarray(policies, dtype=np.float64)
        if np.any(np.abs(policies.sum(axis=1) - 1.0) > POLICY_TOL) or np.any(policies < 0):
            raise ValueError("episode contains an invalid policy vector")
        for cid, p in zip(self.grid.clusters_of(states).tolist(), policies):
            self._visits[cid].append(p)
        self.recorded += len(policies)

    def finalize(self) -> list[tuple[int, np.ndarray, int]]:
        """``(cluster_id, mean policy, visits)`` sorted by id; clears the memory."""
        out = []
        for cid in sorted(self._visits):
            ps = self._visits[cid]
            n = len(ps)
            mean = np.array([math.fsum(p[a] for p in ps) / n for a in range(self.n_actions)])
            out.append((cid, mean, n))
        self._visits.clear()
        self.recorded = 0
        return out


class LocalValueMemory:
    """Per-cluster average of critic outputs; the value-network analogue."""

    wants_values = True

    def __init__(self, grid: ClusterGrid):
        self.grid = grid
        self._visits: dict[int, list[float]] = defaultdict(list)
        self.recorded = 0

    def __len__(self) -> int:
        return len(self._visits)

    def record_value(self, state, value: float) -> None:
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {value}")
        self._visits[self.grid.cluster_of(state)].append(v)
        self.recorded += 1

    def record_episode(self, states, policies, values=None) -> None:
        if values is None:
            raise ValueError("value memory needs critic outputs")
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in episode")
        for cid, v in zip(self.grid.clusters_of(states).tolist(), values.tolist()):
            self._visits[cid].append(v)
        self.recorded += len(values)

    def finalize(self) -> list[tuple[int, float, int]]:
        out = [(cid, math.fsum(vs) / len(vs), len(vs)) for cid, vs in sorted(self._visits.items())]
        self._visits.clear()
        self.recorded = 0
        return out


class ExperienceMemory:
    """Raw (state, policy) log, the non-private baseline memory."""

    wants_values = False

    def __init__(self):
        self.states: list[np.ndarray] = []
        self.policies: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.states)

    def record_policy(self, state, policy) -> None:
        self.states.append(np.asarray(state, dtype=np.float64).copy())
        self.policies.append(_check_policy(policy).copy())

    def record_episode(self, states, policies, values=None) -> None:
        self.states.extend(np.asarray(states, dtype=np.float64))
        self.policies.extend(np.asarray(policies, dtype=np.float64))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.states:
            return np.zeros((0, 4)), np.zeros((0, 2))
        return np.array(self.states), np.array(self.policies)

    def clear(self) -> None:
        self.states.clear()
        self.policies.clear()

    @staticmethod
    def concatenate(memories: Sequence["ExperienceMemory"]) -> "ExperienceMemory":
        out = ExperienceMemory()
        for m in memories:
            out.states.extend(m.states)
            out.policies.extend(m.policies)
        return out
