"""Miner state machine.

A ``Miner`` never touches the clock or the network. Each handler takes the
current simulated time and returns a list of action objects for the driver
to carry out (send, arm a timer, start or stop a search). Feeding two miners
the same event sequence leaves them in identical states.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Optional

from . import messages as msgs
from .accounts import (AccountDB, AccountError, GenesisRecord, StakeParams, apply_penalty,
                       credit, process_join, process_leave, reward_split, state_digest)
from .chain import MinedBlock, MinedChain, SBlock, aggregate, merge, valid_difficulty
from .messages import Signed, canonical_json
from .puzzle import BlockHeader, Puzzle, RangeError
from .slicing import (Slice, SliceTable, TransferError, neighbour_of, penalty_set,
                      slice_index_for, transfer_slice)
from .system_s import (Authenticator, GossipCopy, Signer, check_quorum, miner_identity,
                       parse_miner_identity, replica_identity)


@dataclass(frozen=True)
class MinerConfig:
    sigma: int
    f_miners: int
    f_replicas: int
    timer: int
    puzzle: Puzzle
    stake: StakeParams = field(default_factory=StakeParams)
    literal_penalty: bool = False


# --- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class SendMiners:
    msg: Signed


@dataclass(frozen=True)
class SendReplicas:
    tx: Any


@dataclass(frozen=True)
class ArmTimer:
    token: int
    delay: int


@dataclass(frozen=True)
class StartSearch:
    token: int
    header: BlockHeader
    start: int
    end: int
    difficulty: int


@dataclass(frozen=True)
class StopSearch:
    token: int


@dataclass(frozen=True)
class Settled:
    b: int
    block_hash: bytes
    digest: bytes
    shift_round: int
    merge_count: int
    culprits: tuple[int, ...]
    first_seq: int
    last_seq: int


@dataclass(frozen=True)
class Trace:
    kind: str
    b: int
    r: int
    detail: str = ""


@dataclass
class MinerStats:
    bad_tags: int = 0
    equivocations: int = 0
    invalid_nonces: int = 0
    invalid_attested: int = 0
    rejected_certs: int = 0
    dropped_requests: int = 0
    withheld: int = 0
    merges: int = 0
    shift_votes: int = 0
    penalties_applied: int = 0


class Miner:
    def __init__(self, miner_id: int, config: MinerConfig, genesis: GenesisRecord,
                 db: AccountDB, signer: Signer, auth: Authenticator, behavior: str = "honest"):
        self.id = miner_id
        self.config = config
        self.signer = signer
        self.auth = auth
        self.behavior = behavior
        self.quorum = config.f_miners + 1
        self.chain = MinedChain(genesis, config.puzzle)
        self.db = db
        self.table = genesis.table()
        self.difficulty_log: list[tuple[int, int]] = [(0, genesis.protocol.difficulty)]

        self.next_seq = 1
        self.copies: dict[int, dict[int, bytes]] = {}
        self.sblocks: dict[int, SBlock] = {}
        self.flagged_seqs: set[int] = set()

        self.current: Optional[MinedBlock] = None
        self.current_table: Optional[SliceTable] = None
        self.r = 0
        self.pending_merge: Optional[MinedBlock] = None
        self.slice_index: Optional[int] = None

        self._tokens = 0
        self.timer_token = 0
        self.search_token = 0

        self.found: dict[tuple[int, int], set[int]] = {}
        self.stash: dict[tuple[int, int], list[Signed]] = {}
        self.shift_votes: dict[tuple, dict[str, Signed]] = {}
        self.penalty_votes: dict[tuple, dict[str, Signed]] = {}
        self.voted: set[tuple] = set()
        self.certs_sent: set[tuple] = set()

        self.pending_penalty: dict[int, tuple[int, ...]] = {}
        self.applied_penalties: set[int] = set()
        self.pending_joins: list[msgs.JoinMiner] = []
        self.pending_leaves: list[msgs.LeaveMiner] = []
        self.stats = MinerStats()

    # --- small helpers -----------------------------------------------------

    @property
    def honest(self) -> bool:
        return self.behavior == "honest"

    @property
    def settled_height(self) -> int:
        return len(self.chain)

    @property
    def current_key(self) -> Optional[tuple[int, int]]:
        if self.current is None:
            return None
        return self.current.mined_seq, self.current.merge_count

    def _token(self) -> int:
        self._tokens += 1
        return self._tokens

    def _sign(self, body) -> Signed:
        return self.signer.sign(body)

    def _trace(self, kind: str, detail: str = "") -> Trace:
        b = self.current.mined_seq if self.current else self.settled_height + 1
        return Trace(kind, b, self.r, detail)

    def _stop_search(self) -> list:
        if not self.search_token:
            return []
        token, self.search_token = self.search_token, 0
        return [StopSearch(token)]

    def _arm_timer(self) -> list:
        self.timer_token = self._token()
        return [ArmTimer(self.timer_token, self.config.timer)]

    def _difficulty_at(self, seq: int) -> int:
        value = self.difficulty_log[0][1]
        for s, d in self.difficulty_log:
            if s <= seq:
                value = d
        return value

    # --- gossip intake -------------------------------------------------------

    def on_sblock_copy(self, now: int, copy: GossipCopy) -> list:
        block = copy.sblock
        raw = block.encode()
        if not self.auth.verify_bytes(replica_identity(copy.replica), raw, copy.tag):
            self.stats.bad_tags += 1
            return []
        if block.seq < self.next_seq or not block.root_ok():
            return []
        senders = self.copies.setdefault(block.seq, {})
        if copy.replica in senders:
            return []  # network duplicate
        senders[copy.replica] = raw
        if len(set(senders.values())) > 1 and block.seq not in self.flagged_seqs:
            self.flagged_seqs.add(block.seq)
            self.stats.equivocations += 1
        actions: list = []
        while True:
            ready = self._quorum_copy(self.next_seq)
            if ready is None:
                break
            del self.copies[self.next_seq]
            actions += self.process_sblock(now, SBlock.decode(ready))
        return actions

    def _quorum_copy(self, seq: int) -> Optional[bytes]:
        senders = self.copies.get(seq)
        if not senders:
            return None
        counts: dict[bytes, int] = {}
        for raw in senders.values():
            counts[raw] = counts.get(raw, 0) + 1
        for raw in sorted(counts):
            if counts[raw] >= self.config.f_replicas + 1:
                return raw
        return None

    # --- committed S-block processing ----------------------------------------

    def process_sblock(self, now: int, block: SBlock) -> list:
        """Nonce check, slice check, bookkeeping txns, then try to create the next block."""
        if block.seq != self.next_seq:
            raise ValueError(f"S-block {block.seq} processed out of order (expected {self.next_seq})")
        self.next_seq += 1
        self.sblocks[block.seq] = block
        txs = block.messages()
        actions: list = []
        actions += self.nonce_check(now, block, txs)
        actions += self.slice_check(now, txs)
        actions += self._bookkeeping(block, txs)
        actions += self.new_mine(now)
        return actions

    def nonce_check(self, now: int, block: SBlock, txs: list) -> list:
        if self.current is None:
            return []
        b, m = self.current_key
        for tx in txs:
            if not isinstance(tx, msgs.NonceAttest) or (tx.b, tx.m) != (b, m):
                continue
            if not check_quorum(self.auth, tx.votes, ("nonce_find", b, m, tx.nonce), self.quorum):
                self.stats.rejected_certs += 1
                continue
            try:
                ok = self.config.puzzle.check(self.current.header, tx.nonce,
                                              self.current.header.difficulty)
            except RangeError:
                ok = False
            if not ok:
                self.stats.invalid_attested += 1
                continue
            return self._settle(now, tx.nonce, block)
        return []

    def _settle(self, now: int, nonce: int, attestation: SBlock) -> list:
        block, table, r = self.current, self.current_table, self.r
        actions = self._stop_search()
        self.timer_token = 0
        self.chain.append(block, nonce, attestation)
        self.db = credit(self.db, block.rewards)
        culprits: tuple[int, ...] = ()
        if r > 0:
            o = table.index_containing(nonce)
            idx = penalty_set(o, r, len(table), literal=self.config.literal_penalty)
            culprits = tuple(sorted(table.ids[i] for i in idx))
            self.pending_penalty[block.mined_seq] = culprits
        settled = self.chain.blocks[-1]
        actions.append(Settled(block.mined_seq, settled.hash, state_digest(self.db), r,
                               block.merge_count, culprits, block.first_sblock_seq,
                               block.last_sblock_seq))
        actions.append(self._trace("settled", f"nonce={nonce}"))
        self.current = None
        self.current_table = None
        self.slice_index = None
        if culprits and self.honest and self.id not in culprits:
            vote = self._sign(msgs.Penalty(block.mined_seq, block.merge_count, r, culprits))
            actions.append(SendMiners(vote))
            actions += self._record_vote(self.penalty_votes, vote)
        return actions

    def slice_check(self, now: int, txs: list) -> list:
        actions: list = []
        for tx in txs:
            if self.current is None:
                break
            if not isinstance(tx, msgs.ShiftCert):
                continue
            b, m = self.current_key
            if (tx.b, tx.m, tx.r) != (b, m, self.r):
                continue  # stale, future or duplicate: no effect
            if not check_quorum(self.auth, tx.votes, ("shift", b, m, tx.r), self.quorum):
                self.stats.rejected_certs += 1
                continue
            if tx.r >= self.config.f_miners:
                actions += self._stop_search()
                self.timer_token = 0
                actions.append(self._trace("merge_pending"))
                self.pending_merge = self.current
                self.current = None
                self.current_table = None
                self.slice_index = None
                break
            self.r += 1
            actions.append(self._trace("shift"))
            actions += self._start_round()
        return actions

    def _bookkeeping(self, block: SBlock, txs: list) -> list:
        actions: list = []
        for tx in txs:
            if isinstance(tx, msgs.PenaltyCert):
                actions += self._apply_penalty_cert(tx)
            elif isinstance(tx, msgs.JoinMiner):
                self.pending_joins.append(tx)
            elif isinstance(tx, msgs.LeaveMiner):
                self.pending_leaves.append(tx)
            elif isinstance(tx, msgs.SetDifficulty) and valid_difficulty(tx.difficulty):
                self.difficulty_log.append((block.seq, tx.difficulty))
        return actions

    def _apply_penalty_cert(self, cert: msgs.PenaltyCert) -> list:
        if cert.b in self.applied_penalties or cert.b > self.settled_height:
            return []
        key = ("penalty", cert.b, cert.m, cert.r, cert.culprits)
        if not check_quorum(self.auth, cert.votes, key, self.quorum):
            self.stats.rejected_certs += 1
            return []
        try:
            self.db = apply_penalty(self.db, cert.culprits)
        except AccountError:
            self.stats.rejected_certs += 1
            return []
        self.applied_penalties.add(cert.b)
        self.pending_penalty.pop(cert.b, None)
        self.stats.penalties_applied += 1
        return [Trace("penalty_applied", cert.b, cert.r, ",".join(map(str, cert.culprits)))]

    # --- block creation ------------------------------------------------------

    def _have(self, first: int, count: int) -> bool:
        return first + count - 1 < self.next_seq

    def new_mine(self, now: int) -> list:
        if self.current is not None:
            return []
        sigma = self.config.sigma
        if self.pending_merge is not None:
            old = self.pending_merge
            first = old.last_sblock_seq + 1
            if not self._have(first, sigma):
                return []
            self.current = merge(old, [self.sblocks[s] for s in range(first, first + sigma)])
            self.pending_merge = None
            self.stats.merges += 1
            kind = "merged"
        else:
            first = self.chain.last_sblock_seq + 1
            if not self._have(first, sigma):
                return []
            self._apply_boundary()
            rewards = reward_split(self.table, self.config.stake.reward)
            difficulty = self._difficulty_at(first + sigma - 1)
            self.current = aggregate([self.sblocks[s] for s in range(first, first + sigma)],
                                     self.chain.tip, sigma, rewards, difficulty)
            kind = "created"
        # reconfiguration only happens between settled blocks, so a merged
        # block keeps the table it was created with
        self.current_table = self.table
        self.r = 0
        actions = [self._trace(kind, f"sblocks={self.current.first_sblock_seq}-"
                                     f"{self.current.last_sblock_seq}")]
        actions += self._start_round()
        for signed in self.stash.pop(self.current_key, []):
            actions += self._on_noncefind(now, signed)
        return actions

    def _start_round(self) -> list:
        actions = self._stop_search()
        self.timer_token = 0
        if self.behavior == "silent" or self.id not in self.current_table:
            return actions
        n = len(self.current_table)
        idx = slice_index_for(self.current_table.index_of(self.id), self.r, n)
        s = self.current_table.slice_at(idx)
        self.slice_index = idx
        self.search_token = self._token()
        actions.append(StartSearch(self.search_token, self.current.header, s.start, s.end,
                                   self.current.header.difficulty))
        actions += self._arm_timer()
        return actions

    def _apply_boundary(self) -> None:
        """Ejections, leaves and joins, in that order, between settled blocks."""
        db, table = self.db, self.table
        accounts = db.as_dict()
        for mid in sorted(accounts):
            acct = accounts[mid]
            if acct.eject and mid in table and len(table) > 1:
                table = transfer_slice(table, mid, neighbour_of(table, mid), table.slice_of(mid))
                accounts[mid] = type(acct)(acct.stake, acct.mining, False, acct.released, False)
        db = db.with_accounts(accounts)

        blocked = {c for cs in self.pending_penalty.values() for c in cs}
        parked = []
        for req in self.pending_leaves:
            if req.miner_id not in table:
                self.stats.dropped_requests += 1
            elif req.miner_id in blocked or req.buyer not in table or req.buyer == req.miner_id:
                parked.append(req)
            else:
                try:
                    db, table = process_leave(db, table, req.miner_id, req.buyer)
                except (TransferError, KeyError):
                    self.stats.dropped_requests += 1
        self.pending_leaves = parked

        parked = []
        for req in self.pending_joins:
            if req.miner_id in db or req.stake < db.params.min_stake:
                self.stats.dropped_requests += 1
            elif req.seller not in table:
                parked.append(req)
            else:
                try:
                    db, table = process_join(db, table, req.miner_id, req.stake, req.seller,
                                             Slice(req.start, req.end))
                except (TransferError, AccountError, ValueError):
                    self.stats.dropped_requests += 1
        self.pending_joins = parked
        self.db, self.table = db, table

    # --- miner-to-miner messages -------------------------------------------

    def on_message(self, now: int, signed: Signed) -> list:
        if parse_miner_identity(signed.signer) is None or not self.auth.verify(signed):
            self.stats.bad_tags += 1
            return []
        body = signed.body
        if isinstance(body, msgs.NonceFind):
            return self._on_noncefind(now, signed)
        if isinstance(body, msgs.Shift):
            if body.b <= self.settled_height:
                return []
            return self._record_vote(self.shift_votes, signed)
        if isinstance(body, msgs.Penalty):
            if body.b > self.settled_height + 1:
                return []
            return self._record_vote(self.penalty_votes, signed)
        return []

    def _record_vote(self, store: dict, signed: Signed) -> list:
        key = msgs.vote_key(signed.body)
        votes = store.setdefault(key, {})
        votes.setdefault(signed.signer, signed)
        if (len(votes) < self.quorum or key in self.certs_sent or not self.honest):
            return []
        self.certs_sent.add(key)
        chosen = tuple(votes[s] for s in sorted(votes)[: self.quorum])
        body = signed.body
        if isinstance(body, msgs.Shift):
            cert = msgs.ShiftCert(body.b, body.m, body.r, chosen)
        else:
            cert = msgs.PenaltyCert(body.b, body.m, body.r, body.culprits, chosen)
        return [SendReplicas(cert), Trace("cert", body.b, body.r, cert.KIND)]

    def _on_noncefind(self, now: int, signed: Signed) -> list:
        body = signed.body
        key = (body.b, body.m)
        if body.b <= self.settled_height:
            return []
        if key != self.current_key:
            waiting = self.stash.setdefault(key, [])
            if len(waiting) < 4 * self.quorum:
                waiting.append(signed)
            return []
        try:
            ok = self.config.puzzle.check(self.current.header, body.nonce,
                                          self.current.header.difficulty)
        except RangeError:
            ok = False
        if not ok:
            self.stats.invalid_nonces += 1
            return []
        seen = self.found.setdefault(key, set())
        if body.nonce in seen or self.behavior == "silent":
            return []
        seen.add(body.nonce)
        actions = self._stop_search() + self._arm_timer()
        if self.behavior != "withholder":
            actions.append(SendReplicas(self._sign(msgs.NonceFind(body.b, body.m, body.nonce))))
        actions.append(self._trace("nonce_received", f"nonce={body.nonce}"))
        return actions

    # --- local events ------------------------------------------------------

    def on_search_result(self, now: int, token: int, nonce: Optional[int]) -> list:
        if token != self.search_token or self.current is None:
            return []
        self.search_token = 0
        if nonce is None:
            return [self._trace("slice_exhausted", f"slice={self.slice_index}")]
        key = self.current_key
        seen = self.found.setdefault(key, set())
        if nonce in seen:
            return []
        seen.add(nonce)
        if self.behavior == "withholder":
            self.stats.withheld += 1
            return [self._trace("withheld", f"nonce={nonce}")]
        signed = self._sign(msgs.NonceFind(key[0], key[1], nonce))
        return ([SendMiners(signed), SendReplicas(signed)] + self._arm_timer()
                + [self._trace("nonce_found", f"nonce={nonce}")])

    def on_timer(self, now: int, token: int) -> list:
        if token != self.timer_token or self.current is None:
            return []
        self.timer_token = 0
        b, m = self.current_key
        key = ("shift", b, m, self.r)
        if self.behavior in ("silent", "vote-suppressor") or key in self.voted:
            return [self._trace("timer_expired")]
        self.voted.add(key)
        self.stats.shift_votes += 1
        vote = self._sign(msgs.Shift(b, m, self.r))
        return ([self._trace("timer_expired"), SendMiners(vote)]
                + self._record_vote(self.shift_votes, vote))

    # --- inspection ------------------------------------------------------------

    def state_digest(self) -> bytes:
        """Digest of the protocol-relevant state, for replay comparisons."""
        snap = {
            "next_seq": self.next_seq,
            "tip": self.chain.tip_hash.hex(),
            "height": self.settled_height,
            "current": self.current.header.hash().hex() if self.current else None,
            "pending_merge": self.pending_merge.header.hash().hex() if self.pending_merge else None,
            "r": self.r,
            "db": state_digest(self.db).hex(),
            "table": self.table.triples(),
            "timer": self.timer_token,
            "search": self.search_token,
            "voted": sorted(map(list, self.voted)),
            "certs": sorted(repr(k) for k in self.certs_sent),
            "pending_penalty": sorted((b, list(c)) for b, c in self.pending_penalty.items()),
            "joins": [j.to_obj() for j in self.pending_joins],
            "leaves": [x.to_obj() for x in self.pending_leaves],
        }
        return hashlib.sha256(canonical_json(snap)).digest()


def make_miner(miner_id: int, config: MinerConfig, genesis: GenesisRecord, db: AccountDB,
               auth: Authenticator, behavior: str = "honest") -> Miner:
    return Miner(miner_id, config, genesis, db, auth.signer_for(miner_identity(miner_id)),
                 auth, behavior)
