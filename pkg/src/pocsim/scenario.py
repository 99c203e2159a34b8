"""Scenario configuration, the simulation driver and run metrics."""

from __future__ import annotations

import hashlib
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from . import messages as msgs
from .accounts import ProtocolParams, StakeParams, init_genesis
from .chain import MinedBlock, MinedChain, aggregate
from .messages import canonical_json
from .miner import (ArmTimer, Miner, MinerConfig, SendMiners, SendReplicas, Settled,
                    StartSearch, StopSearch, Trace, make_miner)
from .netsim import AdversarySpec, DelayModel, DelayViolation, Scheduler, derive_rng
from .puzzle import MODES, Puzzle
from .slicing import ConfigError, SliceTable
from .system_s import (Authenticator, ReplicaBehavior, Sequencer, SystemConfig, gossip,
                       replica_identity)
from .accounts import reward_split

SCHEMA_VERSION = 1


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    mode: str = "modeled"
    n_miners: int = 4
    f_miners: int = 1
    n_replicas: int = 4
    f_replicas: int = 1
    sigma: int = 2
    commit_interval: int = 200
    txns_per_block: int = 8
    difficulty: int = 8
    nonce_bits: int = 16
    timer: int = 0  # 0 derives δ from the largest slice
    hash_cost: int = 1
    search_quantum: int = 512
    gst: int = 0
    delta: int = 20
    pre_gst_max: int = 2000
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    retry_budget: int = 3
    retry_delay: int = 50
    reward: int = 60
    penalty: int = 50
    stake_multiplier: int = 1
    stake_unit: int = 100
    stakes: str = ""
    target_blocks: int = 10
    max_time: int = 10_000_000
    miner_behaviors: str = ""
    replica_behaviors: str = ""
    compromised: str = ""
    activate_at: int = 0
    literal_penalty: bool = False
    joins: str = ""
    leaves: str = ""
    difficulty_changes: str = ""

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.system().validate()
        if self.mode == "modeled" and self.difficulty > 64:
            raise ConfigError("modeled mode supports difficulty <= 64")
        if self.hash_cost < 1 or self.search_quantum < 1:
            raise ConfigError("hash_cost and search_quantum must be positive")
        if self.target_blocks < 0 or self.max_time < 1:
            raise ConfigError("target_blocks must be >= 0 and max_time positive")
        if self.reward < 0 or self.penalty < 0 or self.stake_unit < 1 or self.stake_multiplier < 1:
            raise ConfigError("reward/penalty must be >= 0, stake unit and multiplier >= 1")
        stakes = self.stake_list()
        if len(stakes) != self.n_miners:
            raise ConfigError(f"{len(stakes)} stakes given for {self.n_miners} miners")
        self.delay_model()
        self.adversary().validate(self.n_miners, self.f_miners, self.n_replicas, self.f_replicas)
        self.join_schedule()
        self.leave_schedule()
        self.difficulty_schedule()

    def system(self) -> SystemConfig:
        return SystemConfig(self.n_replicas, self.f_replicas, self.n_miners, self.f_miners,
                            self.sigma, self.commit_interval, self.txns_per_block,
                            self.difficulty, self.nonce_bits, self.timer or None)

    def stake_params(self) -> StakeParams:
        return StakeParams(self.stake_multiplier, self.stake_unit, self.reward, self.penalty)

    def stake_list(self) -> list[int]:
        if not self.stakes.strip():
            return [self.stake_multiplier * self.stake_unit] * self.n_miners
        return [int(x) for x in _items(self.stakes)]

    def delay_model(self) -> DelayModel:
        return DelayModel(self.gst, self.delta, 1, self.pre_gst_max, self.drop_prob,
                          self.dup_prob, self.retry_budget, self.retry_delay)

    def adversary(self) -> AdversarySpec:
        miners = []
        for item in _items(self.miner_behaviors):
            mid, kind = item.split(":")
            miners.append((int(mid), kind))
        replicas = []
        for item in _items(self.replica_behaviors):
            parts = item.split(":")
            replicas.append((int(parts[0]), ReplicaBehavior(*parts[1:])))
        return AdversarySpec(tuple(miners), tuple(replicas), tuple(_items(self.compromised)),
                             activate_at=self.activate_at)

    def join_schedule(self) -> list[tuple[int, msgs.JoinMiner]]:
        out = []
        for item in _items(self.joins, ";"):
            t, mid, stake, seller, start, end = (int(x) for x in item.split(":"))
            out.append((t, msgs.JoinMiner(mid, stake, seller, start, end)))
        return out

    def leave_schedule(self) -> list[tuple[int, msgs.LeaveMiner]]:
        out = []
        for item in _items(self.leaves, ";"):
            t, mid, buyer = (int(x) for x in item.split(":"))
            out.append((t, msgs.LeaveMiner(mid, buyer)))
        return out

    def difficulty_schedule(self) -> list[tuple[int, msgs.SetDifficulty]]:
        out = []
        for item in _items(self.difficulty_changes, ";"):
            t, d = (int(x) for x in item.split(":"))
            out.append((t, msgs.SetDifficulty(d)))
        return out

    def default_timer(self) -> int:
        table = self.genesis()[2]
        largest = max(len(s) for _, s in table.entries)
        return 4 * largest * self.hash_cost + 2 * self.commit_interval + 4 * self.delta

    def effective_timer(self) -> int:
        return self.timer or self.default_timer()

    def genesis(self):
        protocol = ProtocolParams(self.nonce_bits, self.difficulty, self.sigma, self.f_miners,
                                  self.n_replicas, self.mode)
        return init_genesis(range(self.n_miners), self.stake_list(), self.stake_params(), protocol)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _items(text: str, sep: str = ",") -> list[str]:
    return [x.strip() for x in text.split(sep) if x.strip()]


_ALIASES = {"real-hash": "sha256", "real": "sha256"}


def _convert(name: str, default, raw: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    if name == "mode":
        return _ALIASES.get(raw, raw)
    return raw


def parse_config(text: str, **overrides) -> ScenarioConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    defaults = ScenarioConfig()
    known = {f.name for f in fields(ScenarioConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, getattr(defaults, key), raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "mode" in values:
        values["mode"] = _ALIASES.get(values["mode"], values["mode"])
    cfg = replace(defaults, **values)
    cfg.validate()
    return cfg


def load_config(path: str, seed: Optional[int] = None, mode: Optional[str] = None) -> ScenarioConfig:
    """Read a config file; ``POC_SEED`` in the environment overrides the file, ``seed`` overrides both."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    env = os.environ.get("POC_SEED")
    if seed is None and env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"POC_SEED is not an integer: {env!r}") from None
    return parse_config(text, seed=seed, mode=mode)


# --- metrics -----------------------------------------------------------------

@dataclass
class MetricsReport:
    seed: int
    mode: str
    sim_time: int
    quiescent: bool
    committed_sblocks: int
    settled_blocks: int
    settled_per_kilotick: float
    latency: dict
    shift_rounds: dict
    merges: int
    penalties: list
    hash_attempts: int
    rewards: dict
    violations: list
    honest_penalized: list
    equivocations_seen: int
    trace_hash: str
    fork: Optional[dict] = None
    wall_clock_s: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """Everything except the informational wall-clock field."""
        out = self.to_dict()
        out.pop("wall_clock_s")
        return out

    def to_json(self) -> str:
        return canonical_json(self.to_dict()).decode()


class Monitor:
    """Run-time invariant checks over honest miners."""

    def __init__(self, honest: set[int]):
        self.honest = honest
        self.settled: dict[int, Settled] = {}
        self.settle_time: dict[int, int] = {}
        self.reports: dict[int, dict[int, bytes]] = {}
        self.violations: list[str] = []
        self.honest_penalized: list[tuple[int, int]] = []
        self.penalties: list[tuple[int, tuple[int, ...]]] = []

    def on_settled(self, miner_id: int, now: int, s: Settled) -> None:
        if miner_id not in self.honest:
            return
        first = self.settled.get(s.b)
        if first is None:
            self.settled[s.b] = s
            self.settle_time[s.b] = now
        else:
            if first.block_hash != s.block_hash:
                self.violations.append(f"safety: miners disagree on block {s.b}")
            if first.digest != s.digest:
                self.violations.append(f"accounts: digest mismatch after block {s.b} at miner {miner_id}")

    def on_commit(self, block) -> None:
        for tx in block.messages():
            if isinstance(tx, msgs.PenaltyCert):
                self.penalties.append((tx.b, tx.culprits))
                for c in tx.culprits:
                    if c in self.honest:
                        self.honest_penalized.append((tx.b, c))

    def violation(self, text: str) -> None:
        self.violations.append(text)


# --- driver ------------------------------------------------------------------

@dataclass
class _Search:
    miner: int
    token: int
    header: object
    pos: int
    end: int
    difficulty: int
    quantum_start: int = 0
    quantum_len: int = 0


SEQ = "S"


class Simulation:
    def __init__(self, cfg: ScenarioConfig, adversary: Optional[AdversarySpec] = None,
                 keep_trace: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.system = cfg.system()
        self.puzzle = Puzzle(cfg.nonce_bits, cfg.mode)
        self.genesis, db, self.table = cfg.genesis()
        adversary = adversary if adversary is not None else cfg.adversary()
        adversary.validate(cfg.n_miners, cfg.f_miners, cfg.n_replicas, cfg.f_replicas)
        self.adversary = adversary
        self.auth = Authenticator(cfg.seed, allow_compromise=bool(adversary.compromised))
        self.delay = cfg.delay_model()
        self.timer = cfg.effective_timer()
        mcfg = MinerConfig(cfg.sigma, cfg.f_miners, cfg.f_replicas, self.timer, self.puzzle,
                           cfg.stake_params(), cfg.literal_penalty)
        ids = list(range(cfg.n_miners)) + [j.miner_id for _, j in cfg.join_schedule()]
        self.miners: dict[int, Miner] = {
            mid: make_miner(mid, mcfg, self.genesis, db, self.auth) for mid in sorted(set(ids))}
        self.replica_signers = {r: self.auth.signer_for(replica_identity(r))
                                for r in range(cfg.n_replicas)}
        self.replica_behaviors: dict[int, ReplicaBehavior] = {}
        self.sequencer = Sequencer(self.system, self.auth, derive_rng(cfg.seed, "workload"))
        self.sched = Scheduler()
        self._rngs: dict[str, object] = {}
        self.searches: dict[tuple[int, int], _Search] = {}
        self.timer_events: dict[int, object] = {}
        self.hash_attempts = 0
        self.commit_times: dict[int, int] = {}
        self.phase = "workload"
        self.workload_end: Optional[int] = None
        self.tick_scheduled = False
        self.keep_trace = keep_trace
        self.trace_lines: list[str] = []
        self._trace_hash = hashlib.sha256()
        self.monitor = Monitor(set(self.miners))
        self._activated = False
        self._ran = False

        if adversary.activate_at == 0:
            self._activate()
        else:
            self.sched.schedule(adversary.activate_at, "adv", ("activate",))
        for t, tx in cfg.join_schedule() + cfg.leave_schedule() + cfg.difficulty_schedule():
            self.sched.schedule(t, SEQ, ("admin", tx))
        self._schedule_tick(cfg.commit_interval)

    # setup

    def inject(self, adversary: AdversarySpec) -> "Simulation":
        if self._ran:
            raise ConfigError("inject before running")
        adversary.validate(self.cfg.n_miners, self.cfg.f_miners, self.cfg.n_replicas,
                           self.cfg.f_replicas)
        self.adversary = adversary
        self.auth.allow_compromise = bool(adversary.compromised)
        self._activated = False
        for m in self.miners.values():
            m.behavior = "honest"
        self.replica_behaviors = {}
        if adversary.activate_at <= self.sched.now:
            self._activate()
        else:
            self.sched.schedule(adversary.activate_at, "adv", ("activate",))
        return self

    def _activate(self) -> None:
        if self._activated:
            return
        self._activated = True
        for mid, kind in self.adversary.miners:
            self.miners[mid].behavior = kind
        self.replica_behaviors = dict(self.adversary.replicas)
        self.monitor.honest = {mid for mid, m in self.miners.items() if m.behavior == "honest"}
        self._trace("adv", "activate", repr(self.adversary.miners))

    def _rng(self, label: str):
        rng = self._rngs.get(label)
        if rng is None:
            rng = self._rngs[label] = derive_rng(self.cfg.seed, label)
        return rng

    # tracing

    def _trace(self, node, kind: str, summary: str = "") -> None:
        line = canonical_json({"t": self.sched.now, "node": str(node), "kind": kind,
                               "summary": summary}).decode()
        self._trace_hash.update(line.encode() + b"\n")
        if self.keep_trace:
            self.trace_lines.append(line)

    @property
    def trace_hash(self) -> str:
        return self._trace_hash.hexdigest()

    # commit clock

    def _schedule_tick(self, at: int) -> None:
        self.tick_scheduled = True
        self.sched.schedule(at, SEQ, ("commit",))

    def _next_boundary(self) -> int:
        ci = self.cfg.commit_interval
        return (self.sched.now // ci + 1) * ci

    def _honest_miners(self) -> list[Miner]:
        return [m for mid, m in sorted(self.miners.items()) if mid in self.monitor.honest]

    def _needs_filler(self) -> bool:
        """An honest miner is idle for lack of S-blocks: a merge is waiting for
        content, or workload S-blocks are not yet inside any block."""
        end = self.workload_end or 0
        for m in self._honest_miners():
            if m.current is None and (m.pending_merge is not None
                                      or m.chain.last_sblock_seq < end):
                return True
        return False

    def _update_phase(self) -> None:
        if self.phase == "workload":
            honest = self._honest_miners()
            if min(m.settled_height for m in honest) >= self.cfg.target_blocks:
                self.phase = "drain"
                self.workload_end = self.sequencer.seq

    def _on_commit(self) -> None:
        self.tick_scheduled = False
        self._update_phase()
        fill = self.phase == "workload" or self._needs_filler()
        if not fill and not self.sequencer.has_priority():
            return
        block = self.sequencer.commit(fill=fill)
        self.commit_times[block.seq] = self.sched.now
        self.monitor.on_commit(block)
        self._trace(SEQ, "commit", f"seq={block.seq} txns={len(block.txns)}")
        for mid, copy in gossip(block, self.replica_behaviors, self.replica_signers,
                                sorted(self.miners)):
            rng = self._rng(f"net/replica-{copy.replica}")
            for t in self.delay.delivery_times(rng, self.sched.now):
                self.sched.schedule(t, mid, ("copy", copy, self.sched.now))
        if self.phase == "workload":
            self._schedule_tick(self._next_boundary())

    def _kick(self) -> None:
        if self.phase != "workload" and not self.tick_scheduled:
            self._update_phase()
            if self.sequencer.has_priority() or self._needs_filler():
                self._schedule_tick(self._next_boundary())

    # event dispatch

    def _handle(self, ev) -> None:
        now = ev.fire_time
        kind = ev.payload[0]
        if kind in ("copy", "msg", "submit"):
            try:
                self.delay.check(ev.payload[-1], now)
            except DelayViolation as exc:
                self.monitor.violation(f"delay: {exc}")
        if ev.target == SEQ:
            if kind == "commit":
                self._on_commit()
            elif kind == "submit":
                self.sequencer.submit(ev.payload[1])
            elif kind == "admin":
                self.sequencer.submit(ev.payload[1])
                self._trace(SEQ, "admin", ev.payload[1].KIND)
            self._kick()
            return
        if ev.target == "adv":
            self._activate()
            return
        miner = self.miners[ev.target]
        if kind == "copy":
            actions = miner.on_sblock_copy(now, ev.payload[1])
        elif kind == "msg":
            actions = miner.on_message(now, ev.payload[1])
        elif kind == "timer":
            actions = miner.on_timer(now, ev.payload[1])
        elif kind == "search":
            actions = self._search_step(ev.target, ev.payload[1])
        elif kind == "found":
            job = self.searches.pop((ev.target, ev.payload[1]), None)
            if job is not None:
                self._charge(job, now)
            actions = miner.on_search_result(now, ev.payload[1], ev.payload[2])
        else:
            raise AssertionError(f"unknown event {kind}")
        self._apply(ev.target, actions)
        pending = self.timer_events.get(ev.target)
        if pending is not None and pending.payload[1] != miner.timer_token:
            # the miner disarmed or replaced its timer; drop the stale event
            self.sched.cancel(pending)
            del self.timer_events[ev.target]
        self._kick()

    def _apply(self, mid: int, actions: list) -> None:
        now = self.sched.now
        for a in actions:
            if isinstance(a, SendMiners):
                rng = self._rng(f"net/miner-{mid}")
                for other in sorted(self.miners):
                    if other == mid:
                        continue
                    for t in self.delay.delivery_times(rng, now):
                        self.sched.schedule(t, other, ("msg", a.msg, now))
            elif isinstance(a, SendReplicas):
                rng = self._rng(f"net/miner-{mid}")
                for t in self.delay.delivery_times(rng, now):
                    self.sched.schedule(t, SEQ, ("submit", a.tx, now))
            elif isinstance(a, ArmTimer):
                old = self.timer_events.get(mid)
                if old is not None:
                    self.sched.cancel(old)
                self.timer_events[mid] = self.sched.schedule(now + a.delay, mid, ("timer", a.token))
            elif isinstance(a, StartSearch):
                job = _Search(mid, a.token, a.header, a.start, a.end, a.difficulty)
                self.searches[(mid, a.token)] = job
                self.sched.schedule(now, mid, ("search", a.token))
            elif isinstance(a, StopSearch):
                job = self.searches.pop((mid, a.token), None)
                if job is not None:
                    self._charge(job, now)
            elif isinstance(a, Settled):
                self.monitor.on_settled(mid, now, a)
                self._trace(mid, "settled", f"b={a.b} r={a.shift_round} m={a.merge_count} "
                                            f"hash={a.block_hash.hex()[:16]}")
            elif isinstance(a, Trace):
                self._trace(mid, a.kind, f"b={a.b} r={a.r} {a.detail}".rstrip())

    # hash work

    def _charge(self, job: _Search, now: int) -> None:
        if job.quantum_len:
            done = min(job.quantum_len, (now - job.quantum_start) // self.cfg.hash_cost)
            self.hash_attempts += done
            job.quantum_len = 0

    def _search_step(self, mid: int, token: int) -> list:
        job = self.searches.get((mid, token))
        if job is None:
            return []
        now = self.sched.now
        self._charge(job, now)
        hi = min(job.end, job.pos + self.cfg.search_quantum)
        nonce, attempts = self.puzzle.search(job.header, job.pos, hi, job.difficulty)
        job.quantum_start, job.quantum_len = now, attempts
        cost = self.cfg.hash_cost
        if nonce is not None:
            self.sched.schedule(now + attempts * cost, mid, ("found", token, nonce))
        elif hi >= job.end:
            self.sched.schedule(now + attempts * cost, mid, ("found", token, None))
        else:
            job.pos = hi
            self.sched.schedule(now + attempts * cost, mid, ("search", token))
        return []

    # running

    def run(self, until: Optional[int] = None) -> MetricsReport:
        self._ran = True
        started = time.perf_counter()
        self.sched.run_until(self._handle, until=until or self.cfg.max_time)
        for job in list(self.searches.values()):
            self._charge(job, self.sched.now)
        return self.report(time.perf_counter() - started)

    @property
    def quiescent(self) -> bool:
        return len(self.sched) == 0

    def reference_miner(self) -> Miner:
        honest = self._honest_miners()
        return max(honest, key=lambda m: (m.settled_height, -m.id))

    def chain(self) -> MinedChain:
        return self.reference_miner().chain

    def check_liveness(self) -> list[str]:
        """Every workload S-block settled and only a short protocol tail left."""
        problems = []
        if not self.quiescent:
            problems.append("run did not reach quiescence")
        end = self.workload_end if self.workload_end is not None else self.sequencer.seq
        for m in self._honest_miners():
            covered = m.chain.last_sblock_seq
            if covered < end:
                problems.append(f"miner {m.id}: S-blocks {covered + 1}..{end} never settled")
            tail = self.sequencer.seq - covered
            if self.quiescent and tail >= self.cfg.sigma:
                problems.append(f"miner {m.id}: {tail} committed S-blocks left unsettled")
        return problems

    def report(self, wall: float = 0.0) -> MetricsReport:
        ref = self.reference_miner()
        now = self.sched.now
        latencies = []
        for block in ref.chain.blocks:
            settled_at = self.monitor.settle_time.get(block.mined_seq)
            if settled_at is None:
                continue
            for s in block.sblocks:
                latencies.append(settled_at - self.commit_times[s.seq])
        latency = {}
        if latencies:
            q = statistics.quantiles(latencies, n=20, method="inclusive") if len(latencies) > 1 \
                else [latencies[0]] * 19
            latency = {"count": len(latencies), "min": min(latencies), "median": statistics.median(latencies),
                       "p95": q[18], "max": max(latencies)}
        rounds: dict[str, int] = {}
        for b in sorted(self.monitor.settled):
            key = str(self.monitor.settled[b].shift_round)
            rounds[key] = rounds.get(key, 0) + 1
        violations = list(self.monitor.violations)
        settled = ref.settled_height
        if settled * self.cfg.sigma > self.sequencer.seq:
            violations.append("more S-blocks settled than committed")
        return MetricsReport(
            seed=self.cfg.seed, mode=self.cfg.mode, sim_time=now, quiescent=self.quiescent,
            committed_sblocks=self.sequencer.seq, settled_blocks=settled,
            settled_per_kilotick=round(1000 * settled / now, 6) if now else 0.0,
            latency=latency, shift_rounds=rounds,
            merges=max(m.stats.merges for m in self._honest_miners()),
            penalties=[[b, list(c)] for b, c in self.monitor.penalties],
            hash_attempts=self.hash_attempts,
            rewards={str(mid): a.mining for mid, a in ref.db.accounts},
            violations=violations,
            honest_penalized=[list(x) for x in self.monitor.honest_penalized],
            equivocations_seen=sum(m.stats.equivocations for m in self.miners.values()),
            trace_hash=self.trace_hash, wall_clock_s=round(wall, 3))


def run_scenario(cfg: ScenarioConfig, adversary: Optional[AdversarySpec] = None,
                 keep_trace: bool = False) -> tuple[Simulation, MetricsReport]:
    sim = Simulation(cfg, adversary, keep_trace=keep_trace)
    return sim, sim.run()


def preview_first_block(cfg: ScenarioConfig) -> tuple[MinedBlock, SliceTable]:
    """Block 1 exactly as miners will build it, provided nothing is submitted
    to the sequencer before the first ``sigma`` commits."""
    genesis, _, table = cfg.genesis()
    seq = Sequencer(cfg.system(), Authenticator(cfg.seed), derive_rng(cfg.seed, "workload"))
    sblocks = [seq.commit() for _ in range(cfg.sigma)]
    block = aggregate(sblocks, genesis, cfg.sigma, reward_split(table, cfg.reward), cfg.difficulty)
    return block, table
