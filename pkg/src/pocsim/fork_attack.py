"""Long-range fork experiments.

An adversary holding old keys can rewrite S-blocks and attestations at will,
but every replacement mined block still needs a valid nonce. Two experiments
measure what that costs:

* ``run_fork_attack``: rebuild ``length`` blocks from the fork point with
  hashpower ``m`` while honest miners keep extending their chain with ``h``.
* ``replacement_frequencies``: when the adversary may only use nonces in the
  part of the space it controls, how often does it manage ``b`` replacement
  blocks in a row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import messages as msgs
from .accounts import GenesisRecord
from .analysis import fork_success_prob, rebuild_time
from .chain import HEADER_VERSION, MinedBlock, MinedChain, SBlock, compute_root
from .netsim import derive_rng
from .puzzle import BlockHeader, Puzzle, sha256
from .system_s import Authenticator, ForgingCapability, grant_key_compromise, replica_identity


@dataclass(frozen=True)
class ForkParams:
    m: int = 1
    h: int = 1
    length: int = 200
    fork_start: int = 0
    nonce_bits: int = 32
    difficulty: int = 10
    seed: int = 0
    samples: int = 20


@dataclass
class ForkReport:
    params: ForkParams
    honest_time: int
    adversary_time: int
    honest_attempts: int
    adversary_attempts: int
    ratio: float
    predicted_ratio: float
    timeline: list = field(default_factory=list)
    caught_up: bool = False

    def to_dict(self) -> dict:
        return {"m": self.params.m, "h": self.params.h, "length": self.params.length,
                "fork_start": self.params.fork_start, "seed": self.params.seed,
                "honest_time": self.honest_time, "adversary_time": self.adversary_time,
                "honest_attempts": self.honest_attempts,
                "adversary_attempts": self.adversary_attempts,
                "ratio": self.ratio, "predicted_ratio": self.predicted_ratio,
                "timeline": self.timeline, "caught_up": self.caught_up}


class _Miner:
    """One side of the race: a chain of headers and the time each was found."""

    def __init__(self, puzzle: Puzzle, rate: int, difficulty: int, tag: bytes, start_time: int,
                 prev: bytes, seq: int):
        self.puzzle = puzzle
        self.rate = rate
        self.difficulty = difficulty
        self.tag = tag
        self.clock = start_time
        self.prev = prev
        self.seq = seq
        self.attempts = 0
        self.times: list[int] = []
        self.per_block: list[int] = []

    def mine(self, root: Optional[bytes] = None) -> BlockHeader:
        self.seq += 1
        root = root or sha256(self.tag + self.seq.to_bytes(8, "big"))
        header = BlockHeader(HEADER_VERSION, self.prev, root, self.seq, self.difficulty)
        space = 1 << self.puzzle.nonce_bits
        nonce, attempts = self.puzzle.search(header, 0, space, self.difficulty)
        if nonce is None:
            raise RuntimeError("nonce space exhausted; lower the difficulty")
        self.attempts += attempts
        self.per_block.append(attempts)
        self.clock += math.ceil(attempts / self.rate)
        self.times.append(self.clock)
        settled = header.with_nonce(nonce)
        self.prev = settled.hash()
        return settled


def run_fork_attack(params: ForkParams, capability: Optional[ForgingCapability] = None) -> ForkReport:
    """Race a forked rebuild against continued honest mining.

    ``capability`` supplies the compromised keys used to sign the forged
    S-blocks; one is granted internally when omitted.
    """
    if capability is None:
        auth = Authenticator(params.seed, allow_compromise=True)
        capability = grant_key_compromise(auth, "adversary", [replica_identity(0)])
    proposer = next(int(i.split("-")[1]) for i in sorted(capability.identities)
                    if i.startswith("replica-"))
    puzzle = Puzzle(params.nonce_bits, "modeled")
    rng = derive_rng(params.seed, "fork")
    salt = rng.getrandbits(64).to_bytes(8, "big")
    genesis = sha256(b"fork-genesis" + salt)

    honest = _Miner(puzzle, params.h, params.difficulty, b"honest" + salt, 0, genesis, 0)
    fork_headers = []
    for _ in range(params.fork_start + params.length):
        fork_headers.append(honest.mine())
    alpha_start = honest.times[params.fork_start - 1] if params.fork_start else 0
    alpha = honest.clock - alpha_start
    honest_attempts = sum(honest.per_block[params.fork_start:])

    start_prev = fork_headers[params.fork_start - 1].hash() if params.fork_start else genesis
    adversary = _Miner(puzzle, params.m, params.difficulty, b"forged" + salt, honest.clock,
                       start_prev, params.fork_start)
    for i in range(params.length):
        seq = params.fork_start + i + 1
        payload = msgs.ClientPayload(0, seq, "rewritten").encode()
        sblock, _tag = capability.forge_sblock(seq, proposer, [payload])
        adversary.mine(compute_root([sblock], []))
    rebuild = adversary.clock - honest.clock

    # the honest chain keeps growing while the adversary works
    while honest.clock < adversary.clock:
        honest.mine()

    timeline = []
    for k in range(params.samples + 1):
        t = honest.times[params.fork_start + params.length - 1] + (rebuild * k) // params.samples
        h_len = sum(1 for x in honest.times if x <= t)
        f_len = params.fork_start + sum(1 for x in adversary.times if x <= t)
        timeline.append([t, h_len, f_len])
    predicted = rebuild_time(alpha, params.m, params.h) / alpha if alpha else 0.0
    return ForkReport(params, alpha, rebuild, honest_attempts, adversary.attempts,
                      rebuild / alpha if alpha else 0.0, float(predicted), timeline,
                      caught_up=timeline[-1][2] >= timeline[-1][1])


@dataclass
class ReplacementReport:
    trials: int
    coverage: float
    frequencies: list
    ratios: list
    model: list
    redraws: int


def replacement_frequencies(seed: int, trials: int = 1000, coverage: float = 0.5,
                            nonce_bits: int = 10, difficulty: int = 13,
                            max_b: int = 5) -> ReplacementReport:
    """Fraction of trials in which the adversary replaces at least ``b`` blocks in a row.

    A replacement succeeds when the adversary's share of the nonce space holds a
    valid nonce for the forged header. Headers whose puzzle has no solution at
    all are redrawn, since the honest chain never contains such a block.
    """
    puzzle = Puzzle(nonce_bits, "modeled")
    owned = int((1 << nonce_bits) * coverage)
    rng = derive_rng(seed, "replacement")
    counts = [0] * (max_b + 1)
    redraws = 0
    for _ in range(trials):
        run = 0
        while run < max_b:
            while True:
                header = BlockHeader(HEADER_VERSION, rng.getrandbits(256).to_bytes(32, "big"),
                                     rng.getrandbits(256).to_bytes(32, "big"), run + 1, difficulty)
                valid = puzzle.valid_nonces(header, difficulty)
                if valid:
                    break
                redraws += 1
            if not any(n < owned for n in valid):
                break
            run += 1
        for b in range(run + 1):
            counts[b] += 1
    freqs = [c / trials for c in counts]
    ratios = [freqs[b + 1] / freqs[b] if freqs[b] else 0.0 for b in range(max_b)]
    model = [float(fork_success_prob(b)) for b in range(max_b + 1)]
    return ReplacementReport(trials, coverage, freqs, ratios, model, redraws)


def forge_history(genesis: GenesisRecord, capability: ForgingCapability, length: int,
                  sigma: int, rewards=()) -> MinedChain:
    """A rewritten chain whose attestations are signed with stolen miner keys
    but whose blocks carry no proof of work (every nonce is 0).

    The result is what an adversary could publish, not something
    ``MinedChain.append`` would accept.
    """
    miners = sorted(i for i in capability.identities if i.startswith("miner-"))
    n_rep = genesis.protocol.n_replicas
    chain = MinedChain(genesis)
    rewards = tuple(rewards) or ((genesis.miners[0].miner_id, genesis.stake.reward),)
    prev = genesis.hash
    seq = 0
    carry: list[bytes] = []  # attestation for the previous block rides in the next S-block
    for b in range(1, length + 1):
        sblocks = []
        for _ in range(sigma):
            seq += 1
            txns = carry + [msgs.ClientPayload(0, seq, "rewritten").encode()]
            carry = []
            sblocks.append(SBlock.build(seq, seq % n_rep, txns))
        header = BlockHeader(HEADER_VERSION, prev, compute_root(sblocks, rewards), b,
                             genesis.protocol.difficulty, 0, 0)
        votes = tuple(capability.sign(mid, msgs.NonceFind(b, 0, 0)) for mid in miners)
        carry = [msgs.NonceAttest(b, 0, 0, votes).encode()]
        chain.blocks.append(MinedBlock(header, tuple(sblocks), rewards, 0, seq + 1))
        prev = header.hash()
    seq += 1
    chain.attestations[seq] = SBlock.build(seq, seq % n_rep, carry)
    return chain
