"""Collaborative proof-of-work mining on top of a BFT-committed block stream.

Miners split the nonce space into stake-weighted slices, search them in
parallel, rotate slices when a slice owner stays silent, and get their
nonces attested by the underlying consensus system. The package runs the
whole protocol inside a seeded discrete-event simulator.
"""

from .analysis import energy_model, fork_success_prob, rebuild_time
from .chain import MinedBlock, MinedChain, SBlock, aggregate, dump_chain, load_chain, merge, verify_chain
from .puzzle import BlockHeader, NonceSpace, Puzzle, SearchBudget, check_nonce, leading_zero_bits, search_slice, serialize_header
from .scenario import MetricsReport, ScenarioConfig, Simulation, parse_config, run_scenario
from .slicing import Slice, SliceTable, partition, penalty_set, slice_index_for, transfer_slice

__version__ = "0.1.0"
