"""S-blocks, mined blocks, merge/append and full-chain auditing."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from . import messages as msgs
from .accounts import GenesisRecord
from .messages import canonical_json
from .puzzle import BlockHeader, Puzzle, sha256

HEADER_VERSION = 1


class AggregationError(ValueError):
    pass


class ProtocolViolation(RuntimeError):
    pass


class ChainError(ValueError):
    pass


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Binary tree over ``H(leaf)``; an odd level duplicates its last node."""
    if not leaves:
        return sha256(b"")
    level = [sha256(leaf) for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class SBlock:
    seq: int
    proposer: int
    txns: tuple[bytes, ...]
    merkle_root: bytes
    committed: bool = field(default=True, compare=False)

    @staticmethod
    def build(seq: int, proposer: int, txns: Sequence[bytes]) -> "SBlock":
        txns = tuple(txns)
        return SBlock(seq, proposer, txns, merkle_root(txns))

    def root_ok(self) -> bool:
        return merkle_root(self.txns) == self.merkle_root

    def encode(self) -> bytes:
        return canonical_json({"seq": self.seq, "proposer": self.proposer,
                               "root": self.merkle_root.hex(),
                               "txns": [t.hex() for t in self.txns]})

    @staticmethod
    def decode(data: bytes) -> "SBlock":
        obj = json.loads(data)
        return SBlock(obj["seq"], obj["proposer"], tuple(bytes.fromhex(t) for t in obj["txns"]),
                      bytes.fromhex(obj["root"]))

    def messages(self) -> list:
        out = []
        for raw in self.txns:
            try:
                out.append(msgs.decode(raw))
            except (ValueError, KeyError, TypeError):
                out.append(None)
        return out


def encode_reward(miner_id: int, amount: int) -> bytes:
    return canonical_json({"kind": "reward", "miner": miner_id, "amount": amount})


def compute_root(sblocks: Sequence[SBlock], rewards: Sequence[tuple[int, int]]) -> bytes:
    reward_root = merkle_root([encode_reward(mid, amt) for mid, amt in rewards])
    return sha256(b"".join(s.merkle_root for s in sblocks) + reward_root)


@dataclass(frozen=True)
class MinedBlock:
    header: BlockHeader
    sblocks: tuple[SBlock, ...]
    rewards: tuple[tuple[int, int], ...]
    settled_nonce: Optional[int] = None
    attest_seq: Optional[int] = None

    @property
    def mined_seq(self) -> int:
        return self.header.mined_seq

    @property
    def merge_count(self) -> int:
        return self.header.merge_count

    @property
    def first_sblock_seq(self) -> int:
        return self.sblocks[0].seq

    @property
    def last_sblock_seq(self) -> int:
        return self.sblocks[-1].seq

    @property
    def hash(self) -> bytes:
        return self.header.hash()


Predecessor = Union[MinedBlock, GenesisRecord]


def _check_contiguous(sblocks: Sequence[SBlock], after: int) -> None:
    expected = after + 1
    for s in sblocks:
        if s.seq != expected:
            raise AggregationError(f"S-block {s.seq} where {expected} was expected")
        if not s.committed:
            raise ProtocolViolation(f"S-block {s.seq} is not committed")
        expected += 1


def aggregate(sblocks: Sequence[SBlock], prev: Predecessor, sigma: int,
              rewards: Sequence[tuple[int, int]], difficulty: int) -> MinedBlock:
    sblocks = tuple(sblocks)
    if len(sblocks) != sigma:
        raise AggregationError(f"need exactly {sigma} S-blocks, got {len(sblocks)}")
    _check_contiguous(sblocks, prev.last_sblock_seq)
    rewards = tuple(sorted(rewards))
    header = BlockHeader(HEADER_VERSION, prev.hash, compute_root(sblocks, rewards),
                         prev.mined_seq + 1, difficulty)
    return MinedBlock(header, sblocks, rewards)


def merge(block: MinedBlock, next_sblocks: Sequence[SBlock]) -> MinedBlock:
    """Same mined seq, old S-blocks followed by the next ones, merge count + 1."""
    if block.settled_nonce is not None:
        raise ChainError("cannot merge a settled block")
    next_sblocks = tuple(next_sblocks)
    if not next_sblocks:
        raise AggregationError("merge needs the next S-blocks")
    _check_contiguous(next_sblocks, block.last_sblock_seq)
    sblocks = block.sblocks + next_sblocks
    header = replace(block.header, aggregate_root=compute_root(sblocks, block.rewards),
                     merge_count=block.merge_count + 1, nonce=0)
    return MinedBlock(header, sblocks, block.rewards)


def find_attestation(sblock: SBlock, b: int, m: int, nonce: int) -> bool:
    for tx in sblock.messages():
        if isinstance(tx, msgs.NonceAttest) and (tx.b, tx.m, tx.nonce) == (b, m, nonce):
            return True
    return False


class MinedChain:
    """Settled blocks from genesis, plus the attesting S-blocks not inside any block."""

    def __init__(self, genesis: GenesisRecord, puzzle: Optional[Puzzle] = None):
        self.genesis = genesis
        self.puzzle = puzzle or Puzzle(genesis.protocol.nonce_bits, genesis.protocol.mode)
        self.blocks: list[MinedBlock] = []
        self.attestations: dict[int, SBlock] = {}

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Predecessor:
        return self.blocks[-1] if self.blocks else self.genesis

    @property
    def tip_hash(self) -> bytes:
        return self.tip.hash

    @property
    def last_sblock_seq(self) -> int:
        return self.tip.last_sblock_seq

    def append(self, block: MinedBlock, nonce: int, attestation: SBlock) -> "MinedChain":
        if block.header.prev_mined_hash != self.tip_hash:
            raise ChainError(f"block {block.mined_seq} does not extend the tip")
        if block.mined_seq != self.tip.mined_seq + 1:
            raise ChainError(f"block {block.mined_seq} out of order")
        if not self.puzzle.check(block.header, nonce, block.header.difficulty):
            raise ChainError(f"invalid nonce {nonce} for block {block.mined_seq}")
        if attestation.seq <= block.last_sblock_seq or not find_attestation(
                attestation, block.mined_seq, block.merge_count, nonce):
            raise ChainError(f"S-block {attestation.seq} does not attest nonce {nonce}")
        settled = replace(block, header=block.header.with_nonce(nonce),
                          settled_nonce=nonce, attest_seq=attestation.seq)
        self.blocks.append(settled)
        self.attestations[attestation.seq] = attestation
        return self

    def all_sblocks(self) -> dict[int, SBlock]:
        out = dict(self.attestations)
        for block in self.blocks:
            for s in block.sblocks:
                out[s.seq] = s
        return out


def append(chain: MinedChain, block: MinedBlock, nonce: int, attestation: SBlock) -> MinedChain:
    return chain.append(block, nonce, attestation)


@dataclass
class VerifyReport:
    ok: bool
    checked: int
    failure: Optional[str] = None
    block: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def valid_difficulty(value) -> bool:
    return type(value) is int and 0 <= value <= 256


def _difficulty_after(sblocks: dict[int, SBlock], upto: int, start: int,
                      current: int) -> int:
    for seq in range(start, upto + 1):
        for tx in sblocks[seq].messages():
            if isinstance(tx, msgs.SetDifficulty) and valid_difficulty(tx.difficulty):
                current = tx.difficulty
    return current


def verify_chain(chain: MinedChain) -> VerifyReport:
    """Re-derive every hash, root and nonce from genesis to tip."""
    genesis = chain.genesis
    try:
        genesis.table()
    except ValueError as exc:
        return VerifyReport(False, 0, f"genesis slice table: {exc}", 0)
    sigma = genesis.protocol.sigma
    n_rep = genesis.protocol.n_replicas
    reward = genesis.stake.reward
    puzzle = chain.puzzle
    known = chain.all_sblocks()
    for seq, s in sorted(known.items()):
        if not s.root_ok():
            owner = next((b.mined_seq for b in chain.blocks
                          if b.first_sblock_seq <= seq <= b.last_sblock_seq), None)
            return VerifyReport(False, 0, f"Merkle root mismatch in S-block {seq}", owner)
        if s.proposer != s.seq % n_rep:
            return VerifyReport(False, 0, f"S-block {seq} has wrong proposer", None)

    prev: Predecessor = genesis
    difficulty = genesis.protocol.difficulty
    diff_seen = 0
    for i, block in enumerate(chain.blocks, start=1):
        h = block.header

        def fail(reason: str) -> VerifyReport:
            return VerifyReport(False, i - 1, reason, i)

        if h.mined_seq != i:
            return fail(f"mined seq {h.mined_seq} at position {i}")
        if h.version != HEADER_VERSION:
            return fail("unknown header version")
        if h.prev_mined_hash != prev.hash:
            return fail("previous-hash linkage broken")
        expected_len = sigma * (h.merge_count + 1)
        if len(block.sblocks) != expected_len:
            return fail(f"holds {len(block.sblocks)} S-blocks, expected {expected_len}")
        try:
            _check_contiguous(block.sblocks, prev.last_sblock_seq)
        except (AggregationError, ProtocolViolation) as exc:
            return fail(str(exc))
        mids = [mid for mid, _ in block.rewards]
        if mids != sorted(set(mids)) or sum(a for _, a in block.rewards) != reward:
            return fail("reward transactions malformed")
        if h.aggregate_root != compute_root(block.sblocks, block.rewards):
            return fail("aggregate root mismatch")
        first = block.first_sblock_seq
        difficulty = _difficulty_after(known, first + sigma - 1, diff_seen + 1, difficulty)
        diff_seen = first + sigma - 1
        if h.difficulty != difficulty:
            return fail(f"difficulty {h.difficulty}, expected {difficulty}")
        if block.settled_nonce is None or block.settled_nonce != h.nonce:
            return fail("missing settled nonce")
        try:
            nonce_ok = puzzle.check(h, h.nonce, h.difficulty)
        except ValueError:
            nonce_ok = False
        if not nonce_ok:
            return fail(f"nonce {h.nonce} fails the difficulty check")
        att = known.get(block.attest_seq) if block.attest_seq is not None else None
        if att is None or att.seq <= block.last_sblock_seq or not find_attestation(
                att, h.mined_seq, h.merge_count, h.nonce):
            return fail("nonce is not attested by a committed S-block")
        prev = block
    return VerifyReport(True, len(chain.blocks))


# --- dump format -----------------------------------------------------------

class DumpError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_HEX = re.compile(r"^[0-9a-f]*$")


def _sblock_obj(s: SBlock) -> dict:
    return {"kind": "sblock", "seq": s.seq, "proposer": s.proposer,
            "merkle_root": s.merkle_root.hex(), "txns": [t.hex() for t in s.txns]}


def _block_obj(b: MinedBlock) -> dict:
    h = b.header
    return {"kind": "block", "seq": h.mined_seq, "version": h.version,
            "prev": h.prev_mined_hash.hex(), "root": h.aggregate_root.hex(),
            "difficulty": h.difficulty, "merge_count": h.merge_count, "nonce": h.nonce,
            "sblocks": [b.first_sblock_seq, b.last_sblock_seq],
            "rewards": [[mid, amt] for mid, amt in b.rewards],
            "attest_seq": b.attest_seq, "hash": h.hash().hex()}


def dump_chain(chain: MinedChain) -> str:
    """JSON lines: genesis, then each block's S-blocks followed by the block,
    then attesting S-blocks that sit past the last block."""
    lines = [dict(chain.genesis.to_obj(), kind="genesis", hash=chain.genesis.hash.hex())]
    in_blocks = set()
    for block in chain.blocks:
        for s in block.sblocks:
            lines.append(_sblock_obj(s))
            in_blocks.add(s.seq)
        lines.append(_block_obj(block))
    for seq in sorted(chain.attestations):
        if seq not in in_blocks:
            lines.append(_sblock_obj(chain.attestations[seq]))
    return "".join(canonical_json(obj).decode() + "\n" for obj in lines)


_KEYS = {
    "genesis": {"kind", "n_miners", "miners", "params", "stake_params", "hash"},
    "sblock": {"kind", "seq", "proposer", "merkle_root", "txns"},
    "block": {"kind", "seq", "version", "prev", "root", "difficulty", "merge_count", "nonce",
              "sblocks", "rewards", "attest_seq", "hash"},
}


def _hex(value, n: Optional[int], line: int) -> bytes:
    if not isinstance(value, str) or not _HEX.match(value) or len(value) % 2:
        raise DumpError(line, "expected lowercase hex")
    if n is not None and len(value) != 2 * n:
        raise DumpError(line, f"expected {n}-byte hex")
    return bytes.fromhex(value)


def _int(obj: dict, key: str, line: int) -> int:
    value = obj[key]
    if type(value) is not int or value < 0:
        raise DumpError(line, f"{key} must be a non-negative integer")
    return value


def load_chain(text: Union[str, bytes]) -> MinedChain:
    """Strict parser: each line must be canonical JSON with exactly the known keys."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DumpError(0, f"not UTF-8: {exc}") from None
    if not text.endswith("\n"):
        raise DumpError(text.count("\n") + 1, "truncated: missing final newline")
    raw_lines = text[:-1].split("\n")
    chain: Optional[MinedChain] = None
    pending: dict[int, SBlock] = {}
    for lineno, raw in enumerate(raw_lines, start=1):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DumpError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict) or canonical_json(obj).decode() != raw:
            raise DumpError(lineno, "not canonical JSON")
        kind = obj.get("kind")
        if kind not in _KEYS or set(obj) != _KEYS[kind]:
            raise DumpError(lineno, f"unexpected record shape for kind {kind!r}")
        try:
            if kind == "genesis":
                if chain is not None or lineno != 1:
                    raise DumpError(lineno, "genesis must be the first and only genesis line")
                body = {k: v for k, v in obj.items() if k not in ("kind", "hash")}
                genesis = GenesisRecord.from_obj(body)
                if _hex(obj["hash"], 32, lineno) != genesis.hash:
                    raise DumpError(lineno, "genesis hash mismatch")
                chain = MinedChain(genesis)
            elif chain is None:
                raise DumpError(lineno, "genesis line missing")
            elif kind == "sblock":
                txns = obj["txns"]
                if not isinstance(txns, list):
                    raise DumpError(lineno, "txns must be a list")
                s = SBlock(_int(obj, "seq", lineno), _int(obj, "proposer", lineno),
                           tuple(_hex(t, None, lineno) for t in txns),
                           _hex(obj["merkle_root"], 32, lineno))
                if s.seq in pending:
                    raise DumpError(lineno, f"duplicate S-block {s.seq}")
                pending[s.seq] = s
            else:
                first, last = obj["sblocks"]
                rewards = tuple((r[0], r[1]) for r in obj["rewards"])
                for mid, amt in rewards:
                    if type(mid) is not int or type(amt) is not int:
                        raise DumpError(lineno, "reward entries must be integers")
                try:
                    sblocks = tuple(pending.pop(seq) for seq in range(first, last + 1))
                except KeyError as exc:
                    raise DumpError(lineno, f"S-block {exc} missing before its block") from None
                header = BlockHeader(_int(obj, "version", lineno), _hex(obj["prev"], 32, lineno),
                                     _hex(obj["root"], 32, lineno), _int(obj, "seq", lineno),
                                     _int(obj, "difficulty", lineno),
                                     _int(obj, "merge_count", lineno), _int(obj, "nonce", lineno))
                if header.hash() != _hex(obj["hash"], 32, lineno):
                    raise DumpError(lineno, "block hash mismatch")
                attest = obj["attest_seq"]
                if type(attest) is not int:
                    raise DumpError(lineno, "attest_seq must be an integer")
                chain.blocks.append(MinedBlock(header, sblocks, rewards, header.nonce, attest))
        except DumpError:
            raise
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            raise DumpError(lineno, f"malformed {kind} record: {exc}") from None
    if chain is None:
        raise DumpError(1, "empty dump")
    chain.attestations.update(pending)
    return chain
