"""Four honest miners, real SHA-256: settle a handful of blocks and audit the chain."""

from pocsim.chain import verify_chain
from pocsim.scenario import ScenarioConfig, run_scenario

cfg = ScenarioConfig(seed=1, mode="sha256", difficulty=10, nonce_bits=16, target_blocks=5)
sim, report = run_scenario(cfg)

print(f"settled {report.settled_blocks} blocks over {report.committed_sblocks} S-blocks "
      f"in {report.sim_time} ticks")
print(f"median settlement latency {report.latency['median']} ticks")
print("mining rewards:", report.rewards)
for block in sim.chain().blocks[:5]:
    h = block.header
    print(f"  block {h.mined_seq}: nonce {h.nonce:>6}  S-blocks {block.sblocks[0].seq}-"
          f"{block.last_sblock_seq}  hash {h.hash().hex()[:20]}")
print("audit:", verify_chain(sim.chain()))
