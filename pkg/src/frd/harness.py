"""Experiment driver: presets, group runs, multi-seed sweeps and statistics."""
from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .a2c import Agent, AgentConfig
from .baselines import FedAvgServer, PolicyDistillationServer
from .distillation import DistillConfig
from .federation import RoundSchedule, Server, play_episodes
from .proxy_memory import ClusterGrid

log = logging.getLogger(__name__)

MODES = ("frd_policy", "frd_value", "frd_both", "policy_distillation", "fedavg", "solo")
FRD_KINDS = {"frd_policy": ("policy",), "frd_value": ("value",), "frd_both": ("policy", "value")}
CSV_COLUMNS = ["setting", "mode", "agents", "seed", "episodes", "complete",
               "total_payload_records", "total_payload_bytes"]


@dataclass
class ExperimentSetting:
    name: str = "custom"
    S: int = 100
    E: int = 25
    I: int = 50
    n: int = 24
    hidden_layers: int = 2
    mode: str = "frd_policy"
    threshold: float = 450.0
    window: int = 10
    episode_cap: int = 3000
    agents: int = 1
    seed: int = 0
    gamma: float = 0.99
    policy_lr: float = 1e-3
    value_lr: float = 1e-2
    entropy_coeff: float = 0.0
    distill_epochs: int = 50
    distill_lr: float = 1e-3
    aggregation: str = "unweighted"
    fedavg_value: bool = False
    round_cap: int = 0  # 0 means no limit on exchange rounds

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for f in ("S", "E", "n", "hidden_layers", "window", "episode_cap", "agents"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.I < 0 or self.round_cap < 0:
            raise ValueError("I and round_cap must be >= 0")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(gamma=self.gamma, policy_lr=self.policy_lr, value_lr=self.value_lr,
                           hidden_width=self.n, hidden_layers=self.hidden_layers,
                           entropy_coeff=self.entropy_coeff)

    def schedule(self) -> RoundSchedule:
        return RoundSchedule(self.I, self.E, self.round_cap or None)

    def replace(self, **kw) -> "ExperimentSetting":
        return dataclasses.replace(self, **kw)


# Table 1: S, E, I, n, hidden layers
TABLE1 = {
    1: (100, 25, 50, 24, 2),
    2: (100, 25, 50, 100, 2),
    3: (100, 25, 100, 100, 2),
    4: (50, 25, 50, 100, 2),
    5: (100, 10, 0, 24, 1),
    6: (100, 50, 0, 24, 1),
    7: (100, 25, 125, 24, 1),
}


def preset(number: int, **overrides) -> ExperimentSetting:
    try:
        S, E, I, n, layers = TABLE1[int(number)]
    except KeyError:
        raise ValueError(f"no preset {number}; available: {sorted(TABLE1)}") from None
    s = ExperimentSetting(name=str(number), S=S, E=E, I=I, n=n, hidden_layers=layers)
    return s.replace(**overrides) if overrides else s


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentSetting)}[name]
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    if ftype in ("bool", bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw.strip()


def parse_config(text: str, base: ExperimentSetting | None = None) -> ExperimentSetting:
    """Flat ``key = value`` lines; ``#`` starts a comment; ``setting = <k>`` starts from a preset."""
    known = {f.name for f in dataclasses.fields(ExperimentSetting)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, raw = (t.strip() for t in line.split("=", 1))
        if key == "setting":
            base = preset(int(raw))
            continue
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value {raw!r} for {key}") from None
    return (base or ExperimentSetting()).replace(**values)


def load_config(path) -> ExperimentSetting:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    s = parse_config(text)
    return s if s.name != "custom" else s.replace(name=path.stem)


def mission_complete(last_durations: Sequence[int], threshold: float, window: int = 10) -> bool:
    return len(last_durations) == window and float(np.mean(last_durations)) >= threshold


@dataclass
class RunResult:
    setting: str
    mode: str
    agents: int
    seed: int
    episodes: int
    complete: bool
    winner: int | None = None
    round_records: list = field(default_factory=list)  # per exchange round, summed over agents
    round_bytes: list = field(default_factory=list)
    round_steps: list = field(default_factory=list)  # environment steps played in each round
    losses: dict = field(default_factory=dict)  # agent_id -> concatenated distillation losses

    @property
    def total_payload_records(self) -> int:
        return int(sum(self.round_records))

    @property
    def total_payload_bytes(self) -> int:
        return int(sum(self.round_bytes))

    def row(self) -> dict:
        return {"setting": self.setting, "mode": self.mode, "agents": self.agents, "seed": self.seed,
                "episodes": self.episodes, "complete": int(self.complete),
                "total_payload_records": self.total_payload_records,
                "total_payload_bytes": self.total_payload_bytes}


def make_server(setting: ExperimentSetting):
    cfg = DistillConfig(epochs=setting.distill_epochs, lr=setting.distill_lr)
    if setting.mode in FRD_KINDS:
        return Server(ClusterGrid(setting.S), FRD_KINDS[setting.mode], setting.aggregation, cfg)
    if setting.mode == "fedavg":
        return FedAvgServer(include_value=setting.fedavg_value)
    if setting.mode == "policy_distillation":
        return PolicyDistillationServer(cfg)
    return None


def run_group(setting: ExperimentSetting, return_agents: bool = False):
    """Run one group until any agent completes the mission or the cap is hit."""
    cfg = setting.agent_config()
    agents = [Agent(cfg, seed=setting.seed, agent_id=i) for i in range(setting.agents)]
    result = RunResult(setting.name, setting.mode, setting.agents, setting.seed,
                       episodes=0, complete=False)

    def on_episode(agent, length):
        if mission_complete(agent.durations[-setting.window:], setting.threshold, setting.window):
            result.complete = True
            result.winner = agent.id
            result.episodes = agent.episodes
            return True
        if agent.episodes >= setting.episode_cap and agent is agents[-1]:
            result.episodes = agent.episodes
            return True
        return False

    def finish():
        return (result, agents) if return_agents else result

    server = make_server(setting)
    cap = setting.episode_cap
    if server is None:
        play_episodes(agents, cap, lambda a: [], on_episode)
        return finish()

    schedule = setting.schedule()
    if not play_episodes(agents, min(schedule.initial_episodes, cap), lambda a: [], on_episode):
        return finish()
    while agents[0].episodes < cap:
        steps_before = sum(sum(a.durations) for a in agents)
        remaining = cap - agents[0].episodes
        if schedule.round_cap is not None and server.round >= schedule.round_cap:
            play_episodes(agents, remaining, lambda a: [], on_episode)
            return finish()
        if remaining < schedule.period:
            play_episodes(agents, remaining, lambda a: [], on_episode)
            return finish()
        report = server.run_round(agents, schedule, on_episode)
        if not report.completed:
            return finish()
        result.round_records.append(report.total_records)
        result.round_bytes.append(report.total_bytes)
        result.round_steps.append(sum(sum(a.durations) for a in agents) - steps_before)
        for aid, trace in report.losses.items():
            result.losses.setdefault(aid, []).extend(trace)
    result.episodes = agents[0].episodes
    return finish()


@dataclass(frozen=True)
class SweepStats:
    n: int
    mean: float
    median: float
    q25: float
    q75: float
    min: float
    max: float

    @classmethod
    def of(cls, values: Iterable[float]) -> "SweepStats":
        v = np.asarray(list(values), dtype=np.float64)
        if v.size == 0:
            raise ValueError("no values")
        q25, med, q75 = np.percentile(v, [25, 50, 75], method="linear")
        return cls(int(v.size), float(v.mean()), float(med), float(q25), float(q75),
                   float(v.min()), float(v.max()))

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


def stats_by_cell(rows: Iterable[dict]) -> dict:
    """SweepStats of ``episodes`` per (setting, mode, agents) cell."""
    cells: dict = {}
    for r in rows:
        key = (str(r["setting"]), str(r["mode"]), int(r["agents"]))
        cells.setdefault(key, []).append(float(r["episodes"]))
    return {k: SweepStats.of(v) for k, v in sorted(cells.items())}


def write_rows(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_rows(path) -> list[dict]:
    try:
        with Path(path).open(newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def write_stats(path, stats: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "mode", "agents", "n", "mean", "median", "q25", "q75", "min", "max"])
        for (setting, mode, agents), s in stats.items():
            w.writerow([setting, mode, agents, s.n, repr(s.mean), repr(s.median), repr(s.q25),
                        repr(s.q75), repr(s.min), repr(s.max)])


def run_path(out_dir, result: RunResult) -> Path:
    return Path(out_dir) / result.setting / result.mode / f"U{result.agents}" / f"seed{result.seed}.csv"


def sweep(settings: Sequence[ExperimentSetting], agent_counts: Sequence[int], seeds: Sequence[int],
          out_dir=None, jobs: int = 1) -> tuple[list[dict], dict]:
    if not seeds:
        raise ValueError("seed list must not be empty")
    runs = [s.replace(agents=u, seed=k) for s in settings for u in agent_counts for k in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_group, runs))
    else:
        results = [run_group(r) for r in runs]
    rows = []
    for res in results:
        row = res.row()
        rows.append(row)
        log.info("setting=%s mode=%s U=%d seed=%d episodes=%d complete=%s", res.setting,
                 res.mode, res.agents, res.seed, res.episodes, res.complete)
        if out_dir is not None:
            write_rows(run_path(out_dir, res), [row])
    stats = stats_by_cell(rows)
    if out_dir is not None:
        write_rows(Path(out_dir) / "results.csv", rows)
        write_stats(Path(out_dir) / "stats.csv", stats)
    return rows, stats
