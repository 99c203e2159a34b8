"""A 10-bit nonce space at difficulty 24 almost never has a solution; watch the block merge."""

from pocsim.puzzle import Puzzle
from pocsim.scenario import ScenarioConfig, Simulation, preview_first_block

cfg = ScenarioConfig(seed=4, mode="sha256", nonce_bits=10, difficulty=24, target_blocks=1,
                     max_time=12_000)
block, _ = preview_first_block(cfg)
print("valid nonces for block 1:", Puzzle(10, "sha256").valid_nonces(block.header, 24))

sim = Simulation(cfg, keep_trace=True)
sim.run()
for line in sim.trace_lines:
    if '"node":"0"' in line and any(k in line for k in ("created", "shift", "merge")):
        print("  ", line)
m = sim.miners[0].current or sim.miners[0].pending_merge
print(f"miner 0 now mines block {m.mined_seq} with merge_count {m.merge_count} "
      f"over S-blocks {m.sblocks[0].seq}-{m.last_sblock_seq}")
