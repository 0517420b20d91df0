"""Server side of the exchange: wire format, aggregation and synchronous rounds."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .proxy_memory import ClusterGrid, LocalProxyMemory, LocalValueMemory

log = logging.getLogger(__name__)

KINDS = ("policy", "value")
MAGIC = "FRD"
VERSION = "v1"


class WireFormatError(ValueError):
    def __init__(self, msg: str, line: int, offset: int = 0):
        super().__init__(f"line {line}, offset {offset}: {msg}")
        self.line = line
        self.offset = offset


@dataclass(frozen=True)
class ExchangeMessage:
    """One agent's finalized local proxy memory in transit.

    ``records`` holds ``(cluster_id, mean, visit_count)`` where ``mean`` is a
    tuple of action probabilities (policy kind) or a float (value kind).
    """

    agent_id: int
    round: int
    kind: str
    records: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        ids = [r[0] for r in self.records]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("records must be sorted by cluster id with no duplicates")

    @classmethod
    def from_local(cls, agent_id: int, round_: int, kind: str, finalized) -> "ExchangeMessage":
        if kind == "policy":
            recs = tuple((int(c), tuple(float(x) for x in m), int(n)) for c, m, n in finalized)
        else:
            recs = tuple((int(c), float(m), int(n)) for c, m, n in finalized)
        return cls(agent_id, round_, kind, recs)


def _fmt(x: float) -> str:
    # repr is the shortest decimal that round-trips the double
    return repr(float(x))


def serialize(msg: ExchangeMessage) -> str:
    lines = [f"{MAGIC},{VERSION},{msg.agent_id},{msg.round},{msg.kind},{len(msg.records)}"]
    for cid, mean, n in msg.records:
        if msg.kind == "policy":
            lines.append(",".join([str(cid), *(_fmt(p) for p in mean), str(n)]))
        else:
            lines.append(f"{cid},{_fmt(mean)},{n}")
    return "\n".join(lines) + "\n"


def _parse_int(tok: str, line: int, offset: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise WireFormatError(f"expected integer, got {tok!r}", line, offset) from None


def _parse_float(tok: str, line: int, offset: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise WireFormatError(f"expected float, got {tok!r}", line, offset) from None
    if not math.isfinite(v):
        raise WireFormatError(f"non-finite value {tok!r}", line, offset)
    return v


def deserialize(text: str, n_actions: int = 2) -> ExchangeMessage:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise WireFormatError("empty message", 1)
    head = lines[0].split(",")
    if len(head) != 6 or head[0] != MAGIC or head[1] != VERSION:
        raise WireFormatError(f"bad header {lines[0]!r}", 1)
    agent_id = _parse_int(head[2], 1, 2)
    round_ = _parse_int(head[3], 1, 3)
    kind = head[4]
    if kind not in KINDS:
        raise WireFormatError(f"unknown kind {kind!r}", 1, 4)
    count = _parse_int(head[5], 1, 5)
    if count != len(lines) - 1:
        raise WireFormatError(f"header announces {count} records, found {len(lines) - 1}", 1, 5)
    width = n_actions + 2 if kind == "policy" else 3
    recs = []
    prev = -1
    for ln, line in enumerate(lines[1:], start=2):
        toks = line.split(",")
        if len(toks) != width:
            raise WireFormatError(f"expected {width} fields, got {len(toks)}", ln)
        cid = _parse_int(toks[0], ln, 0)
        if cid <= prev:
            raise WireFormatError("cluster ids not strictly increasing", ln, 0)
        prev = cid
        n = _parse_int(toks[-1], ln, width - 1)
        if n < 1:
            raise WireFormatError("visit count must be >= 1", ln, width - 1)
        vals = [_parse_float(t, ln, i) for i, t in enumerate(toks[1:-1], start=1)]
        recs.append((cid, tuple(vals) if kind == "policy" else vals[0], n))
    return ExchangeMessage(agent_id, round_, kind, tuple(recs))


def payload_bytes(text: str) -> int:
    return len(text.encode("ascii"))


@dataclass
class GlobalEntry:
    mean: object  # np.ndarray for policy, float for value
    agents: int
    visits: int


@dataclass
class GlobalProxyMemory:
    kind: str
    entries: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[int]:
        return sorted(self.entries)

    def targets(self) -> np.ndarray:
        ids = self.ids()
        if self.kind == "policy":
            return np.array([self.entries[c].mean for c in ids]).reshape(len(ids), -1)
        return np.array([self.entries[c].mean for c in ids], dtype=np.float64)


def aggregate(messages: Sequence[ExchangeMessage], mode: str = "unweighted") -> GlobalProxyMemory:
    """Average local memories per cluster over the agents that visited it.

    Sums use ``math.fsum`` so the result is independent of message order.
    """
    if mode not in ("unweighted", "visit_weighted"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if not messages:
        raise ValueError("nothing to aggregate")
    kinds = {m.kind for m in messages}
    if len(kinds) != 1:
        raise ValueError(f"mixed message kinds {sorted(kinds)}")
    rounds = {m.round for m in messages}
    if len(rounds) != 1:
        raise ValueError(f"messages from different rounds {sorted(rounds)}")
    agent_ids = [m.agent_id for m in messages]
    if len(set(agent_ids)) != len(agent_ids):
        raise ValueError("duplicate agent id in one round")
    kind = kinds.pop()

    per_cluster: dict[int, list] = defaultdict(list)
    for m in messages:
        for cid, mean, n in m.records:
            per_cluster[cid].append((np.atleast_1d(np.asarray(mean, dtype=np.float64)), n))

    out = GlobalProxyMemory(kind)
    for cid in sorted(per_cluster):
        contribs = per_cluster[cid]
        dim = len(contribs[0][0])
        visits = sum(n for _, n in contribs)
        if mode == "unweighted":
            mean = np.array([math.fsum(v[a] for v, _ in contribs) / len(contribs) for a in range(dim)])
        else:
            mean = np.array([math.fsum(v[a] * n for v, n in contribs) / visits for a in range(dim)])
        out.entries[cid] = GlobalEntry(mean if kind == "policy" else float(mean[0]), len(contribs), visits)
    return out


@dataclass(frozen=True)
class RoundSchedule:
    initial_episodes: int = 50
    period: int = 25
    round_cap: int | None = None

    def __post_init__(self):
        if self.initial_episodes < 0 or self.period < 1:
            raise ValueError("need initial_episodes >= 0 and period >= 1")


def should_exchange(schedule: RoundSchedule, completed_episodes: int) -> bool:
    k = completed_episodes - schedule.initial_episodes
    return k > 0 and k % schedule.period == 0


@dataclass
class RoundReport:
    round: int
    completed: bool  # False when a stop callback ended the round early
    records: dict = field(default_factory=dict)  # agent_id -> records sent
    bytes: dict = field(default_factory=dict)  # agent_id -> bytes sent
    global_size: int = 0
    losses: dict = field(default_factory=dict)  # agent_id -> distillation loss trace

    @property
    def total_records(self) -> int:
        return sum(self.records.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes.values())


EpisodeHook = Callable[[object, int], bool]


def play_episodes(agents, n_episodes: int, recorders_for: Callable[[object], list],
                  on_episode: EpisodeHook | None = None) -> bool:
    """Run ``n_episodes`` per agent in lockstep. Returns False if ``on_episode`` asked to stop."""
    for _ in range(n_episodes):
        for agent in agents:
            try:
                length = agent.run_episode(recorders_for(agent))
            except Exception as exc:
                raise RuntimeError(f"agent {agent.id} failed during episode {agent.episodes + 1}") from exc
            if on_episode is not None and on_episode(agent, length):
                return False
    return True


class Server:
    """Aggregator for one run. Sees only deserialized exchange messages."""

    def __init__(self, grid: ClusterGrid, kinds: Iterable[str] = ("policy",),
                 aggregation: str = "unweighted", distill_cfg=None):
        from .distillation import DistillConfig

        self.grid = grid
        self.kinds = tuple(kinds)
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown kind {k!r}")
        self.aggregation = aggregation
        self.distill_cfg = distill_cfg or DistillConfig()
        self.round = 0
        self.history: list[RoundReport] = []
        self._memories: dict = {}

    def memories_for(self, agent) -> list:
        if agent.id not in self._memories:
            mems = {}
            if "policy" in self.kinds:
                mems["policy"] = LocalProxyMemory(self.grid)
            if "value" in self.kinds:
                mems["value"] = LocalValueMemory(self.grid)
            self._memories[agent.id] = mems
        return list(self._memories[agent.id].values())

    def collect(self, agents, report: RoundReport) -> dict:
        inbox: dict[str, list[ExchangeMessage]] = {k: [] for k in self.kinds}
        for agent in agents:
            mems = self._memories.get(agent.id, {})
            report.records[agent.id] = 0
            report.bytes[agent.id] = 0
            for kind in self.kinds:
                finalized = mems[kind].finalize() if kind in mems else []
                wire = serialize(ExchangeMessage.from_local(agent.id, self.round, kind, finalized))
                report.records[agent.id] += len(finalized)
                report.bytes[agent.id] += payload_bytes(wire)
                inbox[kind].append(deserialize(wire))
        return inbox

    def run_round(self, agents, schedule: RoundSchedule, on_episode: EpisodeHook | None = None) -> RoundReport:
        from .distillation import distill_policy, distill_value

        self.round += 1
        report = RoundReport(self.round, completed=False)
        if not play_episodes(agents, schedule.period, self.memories_for, on_episode):
            self.history.append(report)
            return report
        inbox = self.collect(agents, report)
        globals_ = {k: aggregate(msgs, self.aggregation) for k, msgs in inbox.items()}
        report.global_size = sum(len(g) for g in globals_.values())
        for agent in agents:
            trace = []
            # policy first, then value, when both are exchanged
            if "policy" in globals_ and len(globals_["policy"]):
                trace += distill_policy(agent, globals_["policy"], self.grid, self.distill_cfg)
            if "value" in globals_ and len(globals_["value"]):
                trace += distill_value(agent, globals_["value"], self.grid, self.distill_cfg)
            report.losses[agent.id] = trace
        report.completed = True
        log.debug("round %d: records=%s bytes=%s global=%d", self.round, report.records,
                  report.bytes, report.global_size)
        self.history.append(report)
        return report


def run_round(agents, server: Server, schedule: RoundSchedule,
              on_episode: EpisodeHook | None = None) -> RoundReport:
    return server.run_round(agents, schedule, on_episode)
