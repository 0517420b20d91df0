"""Comparison protocols: federated weight averaging and raw policy distillation."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .distillation import DistillConfig, raw_policy_distill
from .federation import RoundReport, RoundSchedule, play_episodes
from .proxy_memory import ExperienceMemory

SNAPSHOT_HEADER_BYTES = 64


@dataclass(frozen=True)
class ParameterSnapshot:
    fingerprint: str
    values: np.ndarray

    def __post_init__(self):
        widths = [int(w) for w in self.fingerprint.split(":")[1].split("-")]
        expected = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        if len(self.values) != expected:
            raise ValueError(f"{self.fingerprint} needs {expected} values, got {len(self.values)}")

    @classmethod
    def of(cls, net) -> "ParameterSnapshot":
        return cls(net.fingerprint(), net.get_flat())

    def nbytes(self) -> int:
        return 8 * len(self.values) + SNAPSHOT_HEADER_BYTES

    def to_text(self) -> str:
        body = "\n".join(repr(float(v)) for v in self.values)
        return f"{self.fingerprint} {len(self.values)}\n{body}\n"

    @classmethod
    def from_text(cls, text: str) -> "ParameterSnapshot":
        head, _, body = text.partition("\n")
        fingerprint, count = head.split()
        values = np.array([float(v) for v in body.split()], dtype=np.float64)
        if len(values) != int(count):
            raise ValueError(f"snapshot header says {count} values, found {len(values)}")
        return cls(fingerprint, values)

    def to_bytes(self) -> bytes:
        head = self.fingerprint.encode("ascii").ljust(SNAPSHOT_HEADER_BYTES, b"\0")
        return head + struct.pack(f"<{len(self.values)}d", *self.values)


def fedavg(snapshots) -> ParameterSnapshot:
    if not snapshots:
        raise ValueError("fedavg needs at least one snapshot")
    fps = {s.fingerprint for s in snapshots}
    if len(fps) != 1:
        raise ValueError(f"architecture mismatch: {sorted(fps)}")
    cols = np.sort(np.stack([s.values for s in snapshots]), axis=0)
    # sorted columns make the result independent of client order; offsetting
    # from the column minimum keeps identical inputs exactly fixed
    ref = cols[0]
    return ParameterSnapshot(fps.pop(), ref + (cols - ref).sum(axis=0) / len(snapshots))


class FedAvgServer:
    """Averages policy networks (optionally value networks too) every round."""

    def __init__(self, include_value: bool = False):
        self.include_value = include_value
        self.round = 0
        self.history: list[RoundReport] = []

    def run_round(self, agents, schedule: RoundSchedule, on_episode=None) -> RoundReport:
        self.round += 1
        report = RoundReport(self.round, completed=False)
        if not play_episodes(agents, schedule.period, lambda a: [], on_episode):
            self.history.append(report)
            return report
        nets = ["policy_net"] + (["value_net"] if self.include_value else [])
        for attr in nets:
            snaps = [ParameterSnapshot.of(getattr(a, attr)) for a in agents]
            for a, s in zip(agents, snaps):
                report.records[a.id] = report.records.get(a.id, 0) + len(s.values)
                report.bytes[a.id] = report.bytes.get(a.id, 0) + s.nbytes()
            mean = fedavg(snaps)
            for a in agents:
                getattr(a, attr).set_flat(mean.values)
        report.completed = True
        self.history.append(report)
        return report


def run_fedavg_round(agents, server: FedAvgServer, schedule: RoundSchedule, on_episode=None) -> RoundReport:
    return server.run_round(agents, schedule, on_episode)


RAW_RECORD_FIELDS = 6  # x, x_dot, theta, theta_dot, p0, p1


def serialize_experience(agent_id: int, round_: int, memory: ExperienceMemory) -> str:
    lines = [f"RAW,v1,{agent_id},{round_},{len(memory)}"]
    for s, p in zip(memory.states, memory.policies):
        lines.append(",".join(repr(float(v)) for v in (*s, *p)))
    return "\n".join(lines) + "\n"


def deserialize_experience(text: str) -> ExperienceMemory:
    lines = text.rstrip("\n").split("\n")
    head = lines[0].split(",")
    if head[:2] != ["RAW", "v1"] or int(head[4]) != len(lines) - 1:
        raise ValueError(f"bad raw experience header {lines[0]!r}")
    mem = ExperienceMemory()
    for line in lines[1:]:
        vals = [float(t) for t in line.split(",")]
        if len(vals) != RAW_RECORD_FIELDS:
            raise ValueError(f"bad raw record {line!r}")
        mem.states.append(np.array(vals[:4]))
        mem.policies.append(np.array(vals[4:]))
    return mem


class PolicyDistillationServer:
    """Collects raw experience memories and has every agent distill the union."""

    def __init__(self, distill_cfg: DistillConfig | None = None):
        self.distill_cfg = distill_cfg or DistillConfig()
        self.round = 0
        self.history: list[RoundReport] = []
        self._memories: dict[int, ExperienceMemory] = {}
        self.last_global: ExperienceMemory | None = None

    def memories_for(self, agent) -> list:
        return [self._memories.setdefault(agent.id, ExperienceMemory())]

    def run_round(self, agents, schedule: RoundSchedule, on_episode=None) -> RoundReport:
        self.round += 1
        report = RoundReport(self.round, completed=False)
        if not play_episodes(agents, schedule.period, self.memories_for, on_episode):
            self.history.append(report)
            return report
        received = []
        for a in agents:
            mem = self._memories.setdefault(a.id, ExperienceMemory())
            wire = serialize_experience(a.id, self.round, mem)
            report.records[a.id] = len(mem)
            report.bytes[a.id] = len(wire.encode("ascii"))
            received.append(deserialize_experience(wire))
            mem.clear()
        glob = ExperienceMemory.concatenate(received)
        self.last_global = glob
        report.global_size = len(glob)
        for a in agents:
            report.losses[a.id] = raw_policy_distill(a, glob, self.distill_cfg)
        report.completed = True
        self.history.append(report)
        return report


def run_policy_distillation_round(agents, server: PolicyDistillationServer, schedule: RoundSchedule,
                                  on_episode=None) -> RoundReport:
    return server.run_round(agents, schedule, on_episode)
