"""Staking and mining accounts, the genesis record, rewards and penalties.

Amounts are unsigned 64-bit token units. Every mutation returns a new
``AccountDB`` so a miner can keep earlier snapshots around for comparison.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .messages import canonical_json
from .puzzle import NonceSpace
from .slicing import ConfigError, Slice, SliceTable, partition, transfer_slice

U64_MAX = 2**64 - 1


class AccountError(ValueError):
    pass


def _checked(value: int) -> int:
    if not 0 <= value <= U64_MAX:
        raise OverflowError(f"token amount {value} outside unsigned 64-bit range")
    return value


@dataclass(frozen=True)
class StakeParams:
    """``e``, ``Ψ_s``, per-block reward ``◇`` and penalty ``Ψ_p``."""

    multiplier: int = 1
    unit: int = 100
    reward: int = 60
    penalty: int = 50

    @property
    def min_stake(self) -> int:
        return self.multiplier * self.unit


@dataclass(frozen=True)
class ProtocolParams:
    nonce_bits: int
    difficulty: int
    sigma: int
    f_miners: int
    n_replicas: int
    mode: str = "sha256"

    def to_obj(self) -> dict:
        return {"nonce_bits": self.nonce_bits, "difficulty": self.difficulty,
                "sigma": self.sigma, "f_miners": self.f_miners,
                "n_replicas": self.n_replicas, "mode": self.mode}


@dataclass(frozen=True)
class Account:
    stake: int = 0
    mining: int = 0
    active: bool = True
    released: int = 0
    eject: bool = False

    def __post_init__(self):
        for v in (self.stake, self.mining, self.released):
            _checked(v)

    @property
    def total(self) -> int:
        return self.stake + self.mining


@dataclass(frozen=True)
class GenesisMiner:
    miner_id: int
    staking_key: str
    mining_key: str
    stake: int
    start: int
    end: int


@dataclass(frozen=True)
class GenesisRecord:
    miners: tuple[GenesisMiner, ...]
    protocol: ProtocolParams
    stake: StakeParams

    # duck-typed predecessor interface used by chain.aggregate
    mined_seq = 0
    last_sblock_seq = 0

    @property
    def n_miners(self) -> int:
        return len(self.miners)

    def to_obj(self) -> dict:
        return {
            "n_miners": self.n_miners,
            "miners": [{"id": g.miner_id, "staking_key": g.staking_key,
                        "mining_key": g.mining_key, "stake": g.stake,
                        "slice": [g.start, g.end]} for g in self.miners],
            "params": self.protocol.to_obj(),
            "stake_params": {"multiplier": self.stake.multiplier, "unit": self.stake.unit,
                             "reward": self.stake.reward, "penalty": self.stake.penalty},
        }

    @staticmethod
    def from_obj(obj: dict) -> "GenesisRecord":
        miners = tuple(GenesisMiner(m["id"], m["staking_key"], m["mining_key"], m["stake"],
                                    m["slice"][0], m["slice"][1]) for m in obj["miners"])
        if obj["n_miners"] != len(miners):
            raise ValueError("genesis n_miners does not match the miner list")
        return GenesisRecord(miners, ProtocolParams(**obj["params"]),
                             StakeParams(**obj["stake_params"]))

    @property
    def hash(self) -> bytes:
        return hashlib.sha256(canonical_json(self.to_obj())).digest()

    def table(self) -> SliceTable:
        return SliceTable(tuple((g.miner_id, Slice(g.start, g.end)) for g in self.miners),
                          NonceSpace(self.protocol.nonce_bits))


def miner_keys(miner_id: int, label: str = "") -> tuple[str, str]:
    """Deterministic stand-in public keys for a miner's two accounts."""
    base = f"{label}miner-{miner_id}"
    return (hashlib.sha256(f"{base}/staking".encode()).hexdigest()[:32],
            hashlib.sha256(f"{base}/mining".encode()).hexdigest()[:32])


@dataclass(frozen=True)
class AccountDB:
    accounts: tuple[tuple[int, Account], ...] = ()
    params: StakeParams = field(default_factory=StakeParams)

    def get(self, miner_id: int) -> Account:
        for mid, acct in self.accounts:
            if mid == miner_id:
                return acct
        raise KeyError(miner_id)

    def __contains__(self, miner_id: int) -> bool:
        return any(mid == miner_id for mid, _ in self.accounts)

    def as_dict(self) -> dict[int, Account]:
        return dict(self.accounts)

    def with_accounts(self, accounts: dict[int, Account]) -> "AccountDB":
        return replace(self, accounts=tuple(sorted(accounts.items())))

    def snapshot(self) -> dict:
        return {str(mid): {"stake": a.stake, "mining": a.mining, "active": a.active,
                           "released": a.released, "eject": a.eject}
                for mid, a in self.accounts}


def init_genesis(miners: Iterable[int], stakes: Iterable[int], params: StakeParams,
                 protocol: ProtocolParams) -> tuple[GenesisRecord, AccountDB, SliceTable]:
    miners, stakes = list(miners), list(stakes)
    if len(miners) != len(stakes):
        raise ConfigError("one stake per miner")
    for mid, stake in zip(miners, stakes):
        if stake < params.min_stake:
            raise AccountError(f"miner {mid} stakes {stake} < minimum {params.min_stake}")
    table = partition(NonceSpace(protocol.nonce_bits), zip(miners, stakes))
    by_id = dict(zip(miners, stakes))
    records = []
    for mid, s in table.entries:
        staking, mining = miner_keys(mid)
        records.append(GenesisMiner(mid, staking, mining, by_id[mid], s.start, s.end))
    genesis = GenesisRecord(tuple(records), protocol, params)
    db = AccountDB(tuple((mid, Account(stake=_checked(by_id[mid]))) for mid in sorted(by_id)),
                   params)
    return genesis, db, table


def reward_split(table: SliceTable, reward: int) -> tuple[tuple[int, int], ...]:
    """``floor(|S_i| * reward / |S|)`` per miner, leftover units to the lowest ids."""
    size = table.space.size
    shares = [len(s) * reward // size for _, s in table.entries]
    for i in range(reward - sum(shares)):
        shares[i] += 1
    return tuple((mid, amount) for (mid, _), amount in zip(table.entries, shares))


def credit(db: AccountDB, rewards: Iterable[tuple[int, int]]) -> AccountDB:
    accounts = db.as_dict()
    for mid, amount in rewards:
        if amount == 0:
            continue
        acct = accounts.get(mid)
        if acct is None:
            raise AccountError(f"reward for unknown miner {mid}")
        accounts[mid] = replace(acct, mining=_checked(acct.mining + amount))
    return db.with_accounts(accounts)


def distribute_rewards(db: AccountDB, table: SliceTable, reward: int) -> AccountDB:
    return credit(db, reward_split(table, reward))


def apply_penalty(db: AccountDB, culprits: Iterable[int]) -> AccountDB:
    """Debit ``Ψ_p`` from stake, then mining; flag miners left under the minimum stake."""
    culprits = sorted(set(culprits))
    accounts = db.as_dict()
    unknown = [c for c in culprits if c not in accounts]
    if unknown:
        raise AccountError(f"penalty names unknown miners {unknown}")
    due_total = db.params.penalty
    for mid in culprits:
        acct = accounts[mid]
        from_stake = min(acct.stake, due_total)
        from_mining = min(acct.mining, due_total - from_stake)
        stake = acct.stake - from_stake
        accounts[mid] = replace(acct, stake=stake, mining=acct.mining - from_mining,
                                eject=acct.eject or (acct.active and stake < db.params.min_stake))
    return db.with_accounts(accounts)


def open_account(db: AccountDB, miner_id: int, stake: int) -> AccountDB:
    if stake < db.params.min_stake:
        raise AccountError(f"stake {stake} below minimum {db.params.min_stake}")
    if miner_id in db:
        raise AccountError(f"miner {miner_id} already has accounts")
    accounts = db.as_dict()
    accounts[miner_id] = Account(stake=_checked(stake))
    return db.with_accounts(accounts)


def release_stake(db: AccountDB, miner_id: int) -> AccountDB:
    accounts = db.as_dict()
    acct = accounts[miner_id]
    accounts[miner_id] = replace(acct, stake=0, active=False, eject=False,
                                 released=_checked(acct.released + acct.stake))
    return db.with_accounts(accounts)


def process_join(db: AccountDB, table: SliceTable, miner_id: int, stake: int,
                 seller: Optional[int], subrange: Slice) -> tuple[AccountDB, SliceTable]:
    """Apply a committed join at a block boundary.

    Raises ``AccountError`` for an understaked request. A missing seller is
    not an error for the caller to surface: it returns the inputs unchanged
    and the request stays parked.
    """
    if stake < db.params.min_stake:
        raise AccountError(f"join stake {stake} below minimum {db.params.min_stake}")
    if seller is None or seller not in table:
        return db, table
    new_table = transfer_slice(table, seller, miner_id, subrange)
    return open_account(db, miner_id, stake), new_table


def process_leave(db: AccountDB, table: SliceTable, miner_id: int,
                  buyer: Optional[int]) -> tuple[AccountDB, SliceTable]:
    """Hand the leaver's whole slice to ``buyer`` and release its stake."""
    if buyer is None:
        return db, table
    new_table = transfer_slice(table, miner_id, buyer, table.slice_of(miner_id))
    return release_stake(db, miner_id), new_table


def state_digest(db: AccountDB) -> bytes:
    return hashlib.sha256(canonical_json(db.snapshot())).digest()
