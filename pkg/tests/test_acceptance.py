"""End-to-end acceptance checks.

Each test records one PASS/FAIL line; the lines are printed together at the
end of the pytest session (see conftest.py) and also when this file is run
directly with ``python tests/test_acceptance.py``.
"""

import dataclasses
import functools
import json
import math
import os
import random
import statistics
import subprocess
import sys
import tempfile
import time
from fractions import Fraction

import pytest

from pocsim import messages as msgs
from pocsim.analysis import energy_model, fork_success_prob, rebuild_time
from pocsim.chain import dump_chain
from pocsim.cli import verify_file
from pocsim.fork_attack import ForkParams, replacement_frequencies, run_fork_attack
from pocsim.puzzle import BlockHeader, NonceSpace, Puzzle, sha256
from pocsim.scenario import ScenarioConfig, Simulation, preview_first_block, run_scenario
from pocsim.slicing import ConfigError, partition, penalty_set

LINES: dict[str, str] = {}

MINER_KINDS = ("withholder", "silent", "vote-suppressor")
EQUIVOCATION = ("drop-priority", "garble", "per-miner")


def record(name, ok, detail):
    LINES[name] = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    return ok


def sizes_for(seed):
    return (4, 1) if seed % 2 == 0 else (7, 3)


# --- partition law -------------------------------------------------------------

def check_partition(cases=1000):
    rng = random.Random(20240611)
    started = time.perf_counter()
    failures = done = 0
    while done < cases:
        bits = rng.randint(1, 20)
        n = rng.randint(1, 64)
        stakes = [(mid, rng.randint(1, 10**6)) for mid in rng.sample(range(1000), n)]
        try:
            table = partition(NonceSpace(bits), stakes)
        except ConfigError:
            # only legitimate when some slice would be empty
            total = sum(s for _, s in stakes)
            if not any((1 << bits) * s // total == 0 for _, s in stakes) and n <= 1 << bits:
                failures += 1
            continue
        done += 1
        spans = sorted((s.start, s.end) for _, s in table.entries)
        cursor = 0
        for start, end in spans:
            if start != cursor or end <= start:
                failures += 1
                break
            cursor = end
        else:
            if cursor != 1 << bits or sorted(table.ids) != sorted(m for m, _ in stakes):
                failures += 1
    elapsed = time.perf_counter() - started
    ok = failures == 0 and elapsed < 10
    return ok, f"{cases} cases, {failures} failures, {elapsed:.2f}s (limit 10s)"


# --- safety -------------------------------------------------------------------------

def safety_config(seed):
    n, f = sizes_for(seed)
    adversaries = ",".join(f"{(seed + 3 * i) % n}:{MINER_KINDS[(seed + i) % 3]}" for i in range(f))
    synchronous = seed % 4 < 2
    return ScenarioConfig(seed=seed, mode="modeled", n_miners=n, f_miners=f, difficulty=15,
                          nonce_bits=16, commit_interval=5000, target_blocks=5,
                          gst=0 if synchronous else 30_000, pre_gst_max=8000,
                          drop_prob=0.1, dup_prob=0.1, miner_behaviors=adversaries,
                          replica_behaviors=f"{seed % 4}:equivocator:{EQUIVOCATION[seed % 3]}")


@functools.lru_cache(maxsize=None)
def safety_runs(runs=100):
    out = []
    for seed in range(runs):
        cfg = safety_config(seed)
        _, report = run_scenario(cfg)
        out.append((cfg, report))
    return tuple(out)


def check_safety():
    started = time.perf_counter()
    runs = safety_runs()
    elapsed = time.perf_counter() - started
    violations = [(cfg.seed, v) for cfg, r in runs for v in r.violations]
    shifts = sum(int(k) * v for _, r in runs for k, v in r.shift_rounds.items())
    penalties = sum(len(r.penalties) for _, r in runs)
    ok = not violations and elapsed < 300
    detail = (f"{len(runs)} runs, {len(violations)} violations, {shifts} shift rounds, "
              f"{penalties} penalty certificates, {elapsed:.1f}s (limit 300s)")
    if violations:
        detail += f"; first: seed {violations[0][0]} {violations[0][1]}"
    return ok, detail


# --- liveness ------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def liveness_runs(runs=50):
    out = []
    for seed in range(runs):
        n, f = sizes_for(seed)
        base = ScenarioConfig(seed=seed, n_miners=n, f_miners=f, difficulty=12, target_blocks=5,
                              drop_prob=0.1, dup_prob=0.1,
                              miner_behaviors=f"{seed % n}:{MINER_KINDS[seed % 3]}",
                              replica_behaviors=f"{seed % 4}:equivocator:garble")
        span = run_scenario(base)[1].sim_time
        cfg = dataclasses.replace(base, gst=span // 5, pre_gst_max=1500)
        sim, report = run_scenario(cfg)
        out.append((cfg, report, sim.check_liveness()))
    return tuple(out)


def check_liveness():
    runs = liveness_runs()
    bad = [(cfg.seed, problems + report.violations) for cfg, report, problems in runs
           if problems or report.violations]
    detail = f"{len(runs)} runs with GST at 20% of run length, {len(bad)} violations"
    if bad:
        detail += f"; first: seed {bad[0][0]} {bad[0][1][0]}"
    return not bad, detail


# --- shift bound -----------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def withholding_fixtures(count=50):
    """Seeds whose first block has every valid nonce inside one slice ``o``."""
    fixtures = []
    seed = 0
    shapes = ((4, 1), (7, 3), (5, 2))
    while len(fixtures) < count:
        n, f = shapes[len(fixtures) % 3]
        cfg = ScenarioConfig(seed=seed, mode="sha256", n_miners=n, f_miners=f, difficulty=16,
                             nonce_bits=16, commit_interval=5000, target_blocks=1,
                             difficulty_changes="10001:8")
        seed += 1
        block, table = preview_first_block(cfg)
        valid = Puzzle(16, "sha256").valid_nonces(block.header, 16)
        owners = {table.index_containing(x) for x in valid}
        if len(owners) != 1:
            continue
        o = owners.pop()
        withholders = sorted((o - r) % n for r in range(f))
        behaviors = ",".join(f"{w}:withholder" for w in withholders)
        fixtures.append((dataclasses.replace(cfg, miner_behaviors=behaviors), o, withholders))
    return tuple(fixtures)


@functools.lru_cache(maxsize=None)
def withholding_runs():
    out = []
    for cfg, o, wh in withholding_fixtures():
        sim, report = run_scenario(cfg)
        first = sim.monitor.settled.get(1)
        out.append((cfg, o, wh, report, None if first is None else first.shift_round))
    return tuple(out)


def check_shift_bound():
    bad = []
    rounds = []
    for cfg, o, wh, report, first_round in withholding_runs():
        rounds.append(first_round)
        named = [c for b, c in report.penalties if b == 1]
        expected = sorted(penalty_set(o, cfg.f_miners, cfg.n_miners))
        if first_round is None or first_round > cfg.f_miners or named != [wh] or expected != wh:
            bad.append((cfg.seed, first_round, named, wh))
    detail = (f"{len(rounds)} withholding fixtures, block 1 settled after "
              f"{', '.join(f'{rounds.count(r)}x r={r}' for r in sorted(set(rounds), key=str))} "
              f"shift rounds, {len(bad)} failures")
    if bad:
        detail += f"; first: {bad[0]}"
    return not bad, detail


# --- fairness --------------------------------------------------------------------------------

def check_fairness():
    reports = [r for cfg, r in safety_runs() if cfg.gst == 0]
    reports += [r for _, _, _, r, _ in withholding_runs()]
    hits = [x for r in reports for x in r.honest_penalized]
    # informational: asynchronous runs are outside the guarantee
    async_hits = sum(len(r.honest_penalized) for cfg, r in safety_runs() if cfg.gst > 0)
    async_hits += sum(len(r.honest_penalized) for _, r, _ in liveness_runs())
    detail = (f"{len(reports)} synchronous runs, {len(hits)} honest miners penalized "
              f"({async_hits} in asynchronous runs, not required)")
    return not hits, detail


# --- merge path ------------------------------------------------------------------------------------

def check_merge_path(seeds=10):
    bad = []
    merges = []
    for seed in range(seeds):
        n, f = sizes_for(seed)
        cfg = ScenarioConfig(seed=seed, mode="sha256", n_miners=n, f_miners=f, nonce_bits=10,
                             difficulty=24, target_blocks=1, max_time=30_000)
        block, _ = preview_first_block(cfg)
        if Puzzle(10, "sha256").valid_nonces(block.header, 24):
            bad.append((seed, "fixture has a valid nonce"))
            continue
        sim = Simulation(cfg, keep_trace=True)
        report = sim.run()
        certs = []
        for s in sim.sequencer.log:
            certs += [(m.m, m.r) for m in s.messages() if isinstance(m, msgs.ShiftCert) and m.b == 1]
        first_merge = sorted(r for m, r in certs if m == 0)
        pending = [json.loads(line) for line in sim.trace_lines if '"merge_pending"' in line]
        current = [m.current for m in sim.miners.values() if m.current is not None]
        ok = (first_merge == list(range(f + 1))
              and pending and all(p["summary"].endswith(f"r={f}") for p in pending)
              and report.merges >= 2 and current
              and all(c.merge_count >= 1 for c in current)
              and not report.violations)
        merges.append(report.merges)
        if not ok:
            bad.append((seed, first_merge, report.merges, report.violations))
    detail = (f"{seeds} seeds at B=10 D=24, no valid nonce per exhaustive scan, "
              f"merges per run {min(merges or [0])}..{max(merges or [0])}, {len(bad)} failures")
    if bad:
        detail += f"; first: {bad[0]}"
    return not bad, detail


# --- collaborative speedup ---------------------------------------------------------------------------

SPEEDUP_TRIALS = 21
SPEEDUP_CAP = 1.3  # trials stop after this multiple of the expected work


def measure_hash_rate():
    puzzle = Puzzle(28, "sha256")
    header = BlockHeader(1, sha256(b"rate"), sha256(b"probe"), 1, 200)
    puzzle.search(header, 0, 1 << 16, 200)
    started = time.perf_counter()
    _, attempts = puzzle.search(header, 0, 1 << 21, 200)
    return attempts / (time.perf_counter() - started)


def speedup_trial(n, difficulty, seed):
    cfg = ScenarioConfig(seed=seed, mode="sha256", n_miners=n, f_miners=0, nonce_bits=28,
                         difficulty=difficulty, commit_interval=1 << 34, search_quantum=4096,
                         max_time=1 << 40, target_blocks=1)
    cap = int(SPEEDUP_CAP * (1 << difficulty) / n)
    sim = Simulation(cfg, keep_trace=True)
    sim.run(until=cfg.sigma * cfg.commit_interval + 10 * cfg.delta + cap)
    created = found = None
    for line in sim.trace_lines:
        ev = json.loads(line)
        if not ev["summary"].startswith("b=1 "):
            continue
        if ev["kind"] == "created" and created is None:
            created = ev["t"]
        elif ev["kind"] == "nonce_found":
            found = ev["t"]
            break
    return math.inf if found is None else found - created


def check_speedup():
    started = time.perf_counter()
    rate = measure_hash_rate()
    difficulty = math.ceil(math.log2(5 * rate))
    solo_expected = (1 << difficulty) / rate
    medians = {}
    solo_walls = []
    for n in (1, 2, 4, 8):
        attempts = []
        for k in range(SPEEDUP_TRIALS):
            t = time.perf_counter()
            attempts.append(speedup_trial(n, difficulty, 7000 + k))
            if n == 1:
                solo_walls.append(time.perf_counter() - t)
        medians[n] = statistics.median(attempts)
    elapsed = time.perf_counter() - started
    ratios = {n: medians[n] * n / medians[1] for n in (2, 4, 8)}
    determined = all(math.isfinite(m) for m in medians.values())
    ok = (determined and all(0.5 <= r <= 2 for r in ratios.values())
          and 5 <= solo_expected <= 30 and elapsed < 600)
    detail = (f"rate {rate / 1e6:.2f}M/s, D={difficulty}, expected solo {solo_expected:.1f}s "
              f"(median solo wall {statistics.median(solo_walls):.1f}s), "
              f"median attempts {', '.join(f'n={n}: {medians[n]:.3g}' for n in medians)}, "
              f"median*n/solo {', '.join(f'n={n}: {r:.2f}' for n, r in ratios.items())} "
              f"(band 0.5..2), {SPEEDUP_TRIALS} trials per n, {elapsed:.0f}s (limit 600s)")
    return ok, detail


# --- analysis exactness -------------------------------------------------------------------------------------

def check_analysis():
    p = fork_success_prob(7)
    t = rebuild_time(12, 1, 2)
    energy_ok = all(energy_model(n, 3, 7)["poc"].energy * n == energy_model(n, 3, 7)["pow"].energy
                    for n in range(1, 129))
    ok = p == Fraction(1, 128) and float(p) == 0.0078125 and t == 24 and energy_ok
    return ok, f"fork_success_prob(7)={float(p)}, rebuild_time(12,1,2)={t}, energy n=1..128 exact={energy_ok}"


# --- fork attack vs model -------------------------------------------------------------------------

def check_fork_model():
    worst = 0.0
    rows = []
    for m, h in ((1, 1), (1, 2)):
        ratios = []
        for seed in range(10):
            report = run_fork_attack(ForkParams(m=m, h=h, length=200, seed=seed))
            predicted = float(rebuild_time(1, m, h))
            ratios.append(report.ratio)
            worst = max(worst, abs(report.ratio - predicted) / predicted)
        rows.append(f"m/h={Fraction(m, h)}: {min(ratios):.2f}..{max(ratios):.2f}")
    rep = replacement_frequencies(seed=5, trials=2000, max_b=4)
    geometric = all(abs(r - 0.5) <= 0.15 for r in rep.ratios)
    ok = worst <= 0.5 and geometric
    freq = ", ".join(f"{x:.3f}" for x in rep.frequencies)
    ratios = ", ".join(f"{x:.2f}" for x in rep.ratios)
    return ok, (f"rebuild ratio {'; '.join(rows)}, worst deviation {worst:.0%} (limit 50%); "
                f"replacement frequencies {freq}, successive ratios {ratios} (band 0.35..0.65)")


# --- chain audit -----------------------------------------------------------------------------------

def check_audit(positions=1000):
    started = time.perf_counter()
    sim, _ = run_scenario(ScenarioConfig(seed=12, target_blocks=8))
    data = dump_chain(sim.chain()).encode()
    rng = random.Random(99)
    escaped = []
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "chain.jsonl")
        with open(path, "wb") as fh:
            fh.write(data)
        clean, _ = verify_file(path)
        for pos in rng.sample(range(len(data)), min(positions, len(data))):
            mutated = bytearray(data)
            mutated[pos] = (mutated[pos] + rng.randint(1, 255)) % 256
            with open(path, "wb") as fh:
                fh.write(mutated)
            status, _ = verify_file(path)
            if status != 1:
                escaped.append((pos, status))
    elapsed = time.perf_counter() - started
    ok = clean == 0 and not escaped and elapsed < 30
    return ok, (f"clean dump exit {clean}, {positions} single-byte mutations, {len(escaped)} not rejected "
                f"with exit 1, {elapsed:.1f}s (limit 30s)")


# --- determinism ------------------------------------------------------------------------------

DETERMINISM_CONFIG = """\
seed = 31
n_miners = 7
f_miners = 3
gst = 2500
drop_prob = 0.15
dup_prob = 0.15
miner_behaviors = 2:withholder, 4:silent
replica_behaviors = 1:equivocator:per-miner
target_blocks = 6
"""


def cli_run(path):
    proc = subprocess.run([sys.executable, "-m", "pocsim", "run", "--config", path],
                          capture_output=True, text=True, check=False)
    metrics = json.loads(proc.stdout)
    metrics.pop("wall_clock_s")
    return proc.returncode, metrics


def check_determinism():
    from pocsim.scenario import parse_config

    cfg = parse_config(DETERMINISM_CONFIG)
    a, b = run_scenario(cfg)[1], run_scenario(cfg)[1]
    in_process = a.comparable() == b.comparable()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "det.conf")
        with open(path, "w") as fh:
            fh.write(DETERMINISM_CONFIG)
        first, second = cli_run(path), cli_run(path)
    across = first == second and first[1] == a.comparable()
    ok = in_process and across
    return ok, (f"in-process repeat identical={in_process}, two CLI invocations identical={across}, "
                f"trace hash {a.trace_hash[:16]}")


# --- pytest entry points ------------------------------------------------------------------------

CHECKS = [
    ("partition law", check_partition),
    ("safety", check_safety),
    ("liveness", check_liveness),
    ("shift bound", check_shift_bound),
    ("fairness", check_fairness),
    ("merge path", check_merge_path),
    ("collaborative speedup", check_speedup),
    ("analysis exactness", check_analysis),
    ("fork attack vs model", check_fork_model),
    ("chain audit", check_audit),
    ("determinism", check_determinism),
]


def _run(name):
    fn = dict(CHECKS)[name]
    ok, detail = fn()
    record(name, ok, detail)
    assert ok, detail


def test_partition_law():
    _run("partition law")


def test_safety():
    _run("safety")


def test_liveness():
    _run("liveness")


def test_shift_bound():
    _run("shift bound")


def test_fairness():
    _run("fairness")


def test_merge_path():
    _run("merge path")


@pytest.mark.slow
def test_collaborative_speedup():
    _run("collaborative speedup")


def test_analysis_exactness():
    _run("analysis exactness")


def test_fork_attack_vs_model():
    _run("fork attack vs model")


def test_chain_audit():
    _run("chain audit")


def test_determinism():
    _run("determinism")


if __name__ == "__main__":
    only = set(sys.argv[1:])
    for name, fn in CHECKS:
        if only and name not in only:
            continue
        ok, detail = fn()
        record(name, ok, detail)
        print(LINES[name], flush=True)
