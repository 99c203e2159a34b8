"""The consensus system underneath the miners, modelled as a committed sequencer.

Replicas share one ordered log (the sequencer); what is simulated faithfully
is how committed blocks reach miners (per-replica gossip, some of it
faulty) and how protocol transactions get admitted to the log.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import messages as msgs
from .chain import SBlock
from .messages import Signed
from .slicing import ConfigError


def miner_identity(miner_id: int) -> str:
    return f"miner-{miner_id}"


def replica_identity(replica_id: int) -> str:
    return f"replica-{replica_id}"


def parse_miner_identity(identity: str) -> Optional[int]:
    if not identity.startswith("miner-"):
        return None
    try:
        return int(identity[6:])
    except ValueError:
        return None


# --- authentication --------------------------------------------------------

class Authenticator:
    """Keyed tags standing in for signatures.

    Only the simulator holds the keys. Nodes get a ``Signer`` bound to their
    own identity, so a tag for another identity can only come from a
    ``ForgingCapability`` handed out by ``grant_key_compromise``.
    """

    def __init__(self, seed: int, allow_compromise: bool = False):
        self._seed = seed
        self.allow_compromise = allow_compromise
        self._keys: dict[str, bytes] = {}

    def _key(self, identity: str) -> bytes:
        key = self._keys.get(identity)
        if key is None:
            key = hashlib.sha256(f"{self._seed}/key/{identity}".encode()).digest()
            self._keys[identity] = key
        return key

    def _tag(self, identity: str, data: bytes) -> str:
        return hmac.new(self._key(identity), data, hashlib.sha256).hexdigest()[:32]

    def signer_for(self, identity: str) -> "Signer":
        return Signer(identity, self)

    def verify(self, signed: Signed) -> bool:
        return hmac.compare_digest(self._tag(signed.signer, signed.body.encode()), signed.tag)

    def verify_bytes(self, identity: str, data: bytes, tag: str) -> bool:
        return hmac.compare_digest(self._tag(identity, data), tag)


@dataclass(frozen=True)
class Signer:
    identity: str
    _auth: Authenticator = field(repr=False, compare=False)

    def sign(self, body: msgs.Message) -> Signed:
        return Signed(body, self.identity, self._auth._tag(self.identity, body.encode()))

    def tag_bytes(self, data: bytes) -> str:
        return self._auth._tag(self.identity, data)


@dataclass(frozen=True)
class ForgingCapability:
    holder: str
    identities: frozenset[str]
    _auth: Authenticator = field(repr=False, compare=False)

    def sign(self, identity: str, body: msgs.Message) -> Signed:
        if identity not in self.identities:
            raise PermissionError(f"no key for {identity}")
        return Signed(body, identity, self._auth._tag(identity, body.encode()))

    def tag_bytes(self, identity: str, data: bytes) -> str:
        if identity not in self.identities:
            raise PermissionError(f"no key for {identity}")
        return self._auth._tag(identity, data)

    def forge_sblock(self, seq: int, proposer: int, txns: Iterable[bytes]) -> tuple[SBlock, str]:
        block = SBlock.build(seq, proposer, list(txns))
        return block, self.tag_bytes(replica_identity(proposer), block.encode())


def grant_key_compromise(auth: Authenticator, adversary: str,
                         identities: Iterable[str]) -> ForgingCapability:
    """Hand the adversary the keys of ``identities`` (long-range scenarios only)."""
    if not auth.allow_compromise:
        raise PermissionError("key compromise is disabled for this run")
    return ForgingCapability(adversary, frozenset(identities), auth)


def check_quorum(auth: Authenticator, votes: Iterable[Signed], expected: tuple,
                 quorum: int) -> bool:
    """At least ``quorum`` valid votes from distinct miners, all matching ``expected``."""
    signers = set()
    for v in votes:
        if parse_miner_identity(v.signer) is None or not auth.verify(v):
            return False
        try:
            if msgs.vote_key(v.body) != expected:
                return False
        except TypeError:
            return False
        signers.add(v.signer)
    return len(signers) >= quorum


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    n_replicas: int = 4
    f_replicas: int = 1
    n_miners: int = 4
    f_miners: int = 1
    sigma: int = 2
    commit_interval: int = 200
    txns_per_block: int = 8
    difficulty: int = 8
    nonce_bits: int = 16
    timer: Optional[int] = None  # δ in ticks; None derives it from the slice size

    def validate(self) -> None:
        if self.n_replicas < 3 * self.f_replicas + 1:
            raise ConfigError(f"need n_R >= 3 f_R + 1 (n_R={self.n_replicas}, f_R={self.f_replicas})")
        if self.n_miners < 2 * self.f_miners + 1:
            raise ConfigError(f"need n_M >= 2 f_M + 1 (n_M={self.n_miners}, f_M={self.f_miners})")
        if self.f_replicas < 0 or self.f_miners < 0:
            raise ConfigError("fault counts must be non-negative")
        if self.sigma < 1:
            raise ConfigError("sigma must be at least 1")
        if self.commit_interval < 1 or self.txns_per_block < 1:
            raise ConfigError("commit_interval and txns_per_block must be positive")
        if not 1 <= self.nonce_bits <= 64:
            raise ConfigError("nonce_bits must be in 1..64")
        if not 0 <= self.difficulty <= 256:
            raise ConfigError("difficulty must be in 0..256")
        if self.timer is not None and self.timer < 1:
            raise ConfigError("timer must be positive")


@dataclass(frozen=True)
class ReplicaBehavior:
    """``honest``, ``mute`` or ``equivocator``.

    Equivocators gossip a corrupted copy; ``rule`` picks how: ``"drop-priority"``
    strips protocol transactions, ``"garble"`` rewrites client payloads, and
    ``"per-miner"`` sends each miner a differently garbled block.
    """

    kind: str = "honest"
    rule: str = "drop-priority"

    def __post_init__(self):
        if self.kind not in ("honest", "mute", "equivocator"):
            raise ConfigError(f"unknown replica behavior {self.kind!r}")
        if self.rule not in ("drop-priority", "garble", "per-miner"):
            raise ConfigError(f"unknown corruption rule {self.rule!r}")

    @property
    def honest(self) -> bool:
        return self.kind == "honest"


HONEST_REPLICA = ReplicaBehavior()


def corrupt(block: SBlock, rule: str, miner_id: int = 0) -> SBlock:
    if rule == "drop-priority":
        keep = [t for t, m in zip(block.txns, block.messages())
                if m is None or m.KIND not in msgs.PRIORITY_KINDS]
        if len(keep) == len(block.txns):
            keep = keep[:-1]
        return SBlock.build(block.seq, block.proposer, keep)
    salt = miner_id if rule == "per-miner" else 0
    bogus = msgs.ClientPayload(-1, block.seq, f"forged-{salt}").encode()
    return SBlock.build(block.seq, block.proposer, list(block.txns) + [bogus])


@dataclass(frozen=True)
class GossipCopy:
    replica: int
    sblock: SBlock
    tag: str


def gossip(block: SBlock, behaviors: dict[int, ReplicaBehavior], signers: dict[int, Signer],
           miners: Iterable[int]) -> list[tuple[int, GossipCopy]]:
    """(miner, copy) pairs for every replica that says anything."""
    out = []
    miners = list(miners)
    for rid in sorted(signers):
        behavior = behaviors.get(rid, HONEST_REPLICA)
        if behavior.kind == "mute":
            continue
        for mid in miners:
            copy = block if behavior.honest else corrupt(block, behavior.rule, mid)
            out.append((mid, GossipCopy(rid, copy, signers[rid].tag_bytes(copy.encode()))))
    return out


# --- sequencer -------------------------------------------------------------

@dataclass
class SequencerStats:
    rejected: int = 0
    dropped_conflicts: int = 0
    attested: int = 0
    client_txns: int = 0


class Sequencer:
    """Admission rules plus the committed log.

    NonceFind copies wait until ``f_M + 1`` distinct miners sent the same
    ``(b, m, η)``; when several nonces qualify for one block the lowest wins.
    Certificates are checked for a valid quorum and deduplicated. After a
    block's nonce is attested, later nonces and certificates for the same
    block are dropped; likewise a final shift certificate closes the door on
    nonces for that merge count.
    """

    def __init__(self, config: SystemConfig, auth: Authenticator, workload_rng: random.Random):
        self.config = config
        self.auth = auth
        self.rng = workload_rng
        self.quorum = config.f_miners + 1
        self.seq = 0
        self.log: list[SBlock] = []
        self.priority: list = []  # certificates, admin txns and ("attest", b, m) markers
        self.nonce_copies: dict[tuple[int, int], dict[int, dict[str, Signed]]] = {}
        self.ready: set[tuple[int, int]] = set()
        self.settled_blocks: set[int] = set()
        self.final_shift: set[tuple[int, int]] = set()
        self.committed_keys: set[tuple] = set()
        self.queued_keys: set[tuple] = set()
        self.client_counter = 0
        self.stats = SequencerStats()

    # submissions

    def submit(self, tx) -> bool:
        if isinstance(tx, Signed):
            return self._submit_nonce(tx)
        if isinstance(tx, (msgs.ShiftCert, msgs.PenaltyCert)):
            return self._submit_cert(tx)
        if isinstance(tx, (msgs.JoinMiner, msgs.LeaveMiner, msgs.SetDifficulty)):
            self.priority.append(tx)
            return True
        if isinstance(tx, msgs.ClientPayload):
            self.priority.append(tx)
            return True
        self.stats.rejected += 1
        return False

    def _submit_nonce(self, signed: Signed) -> bool:
        body = signed.body
        if (not isinstance(body, msgs.NonceFind) or parse_miner_identity(signed.signer) is None
                or not self.auth.verify(signed)):
            self.stats.rejected += 1
            return False
        key = (body.b, body.m)
        if body.b in self.settled_blocks or key in self.final_shift:
            return False
        copies = self.nonce_copies.setdefault(key, {}).setdefault(body.nonce, {})
        copies.setdefault(signed.signer, signed)
        if len(copies) >= self.quorum and key not in self.ready:
            self.ready.add(key)
            self.priority.append(("attest", body.b, body.m))
        return True

    def _submit_cert(self, cert) -> bool:
        if isinstance(cert, msgs.ShiftCert):
            key = ("shift", cert.b, cert.m, cert.r)
            vote = ("shift", cert.b, cert.m, cert.r)
        else:
            key = ("penalty", cert.b)
            vote = ("penalty", cert.b, cert.m, cert.r, cert.culprits)
        if key in self.committed_keys or key in self.queued_keys:
            return False
        if not check_quorum(self.auth, cert.votes, vote, self.quorum):
            self.stats.rejected += 1
            return False
        self.queued_keys.add(key)
        self.priority.append(cert)
        return True

    # commit

    def has_priority(self) -> bool:
        return bool(self.priority)

    def _attestation(self, b: int, m: int) -> Optional[msgs.NonceAttest]:
        for nonce in sorted(self.nonce_copies.get((b, m), {})):
            copies = self.nonce_copies[(b, m)][nonce]
            if len(copies) >= self.quorum:
                votes = tuple(copies[s] for s in sorted(copies)[: self.quorum])
                return msgs.NonceAttest(b, m, nonce, votes)
        return None

    def _admit(self, item) -> Optional[bytes]:
        """Encode ``item`` for the next block or return None to drop it."""
        if isinstance(item, tuple):
            _, b, m = item
            self.ready.discard((b, m))
            if b in self.settled_blocks or (b, m) in self.final_shift:
                self.stats.dropped_conflicts += 1
                return None
            attest = self._attestation(b, m)
            self.settled_blocks.add(b)
            self.stats.attested += 1
            return attest.encode()
        if isinstance(item, msgs.ShiftCert):
            key = ("shift", item.b, item.m, item.r)
            self.queued_keys.discard(key)
            if item.b in self.settled_blocks or (item.b, item.m) in self.final_shift:
                self.stats.dropped_conflicts += 1
                return None
            self.committed_keys.add(key)
            if item.r >= self.config.f_miners:
                self.final_shift.add((item.b, item.m))
            return item.encode()
        if isinstance(item, msgs.PenaltyCert):
            key = ("penalty", item.b)
            self.queued_keys.discard(key)
            self.committed_keys.add(key)
            return item.encode()
        return item.encode()

    def commit(self, fill: bool = True) -> SBlock:
        """Cut the next S-block: priority lane first, then synthetic client load."""
        cap = self.config.txns_per_block
        txns: list[bytes] = []
        while self.priority and len(txns) < cap:
            raw = self._admit(self.priority.pop(0))
            if raw is not None:
                txns.append(raw)
        while fill and len(txns) < cap:
            self.client_counter += 1
            payload = msgs.ClientPayload(self.rng.randrange(16), self.client_counter,
                                         "%016x" % self.rng.getrandbits(64))
            txns.append(payload.encode())
            self.stats.client_txns += 1
        self.seq += 1
        block = SBlock.build(self.seq, self.seq % self.config.n_replicas, txns)
        self.log.append(block)
        return block

    def export_jsonl(self) -> str:
        return "".join(b.encode().decode() + "\n" for b in self.log)
