"""A miner keeps the only valid nonce to itself; the network shifts slices and penalizes it."""

import dataclasses

from pocsim.puzzle import Puzzle
from pocsim.scenario import ScenarioConfig, preview_first_block, run_scenario

# find a seed whose first block has all of its valid nonces in one slice
for seed in range(200):
    cfg = ScenarioConfig(seed=seed, mode="sha256", difficulty=16, nonce_bits=16,
                         commit_interval=5000, target_blocks=1, difficulty_changes="10001:8")
    block, table = preview_first_block(cfg)
    valid = Puzzle(16, "sha256").valid_nonces(block.header, 16)
    owners = {table.index_containing(n) for n in valid}
    if len(owners) == 1:
        break
owner = owners.pop()
print(f"seed {seed}: valid nonces {valid} all sit in slice {owner}, mined first by miner {owner}")

cfg = dataclasses.replace(cfg, miner_behaviors=f"{owner}:withholder")
sim, report = run_scenario(cfg, keep_trace=True)
first = sim.monitor.settled[1]
print(f"block 1 settled after {first.shift_round} shift round(s)")
print("penalty certificates (block, culprits):", report.penalties)
print("stakes afterwards:", {mid: a.stake for mid, a in sim.reference_miner().db.accounts})
for line in sim.trace_lines:
    if any(k in line for k in ('"shift"', '"withheld"', '"penalty_applied"')):
        print("  ", line)
