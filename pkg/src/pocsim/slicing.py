"""Stake-weighted partition of the nonce space and slice rotation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .puzzle import NonceSpace


class ConfigError(ValueError):
    pass


class TransferError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Slice:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad slice [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def __contains__(self, nonce: int) -> bool:
        return self.start <= nonce < self.end

    def contains(self, other: "Slice") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass(frozen=True)
class SliceTable:
    """Immutable ``(miner_id, Slice)`` entries ordered by miner id."""

    entries: tuple[tuple[int, Slice], ...]
    space: NonceSpace

    def __post_init__(self):
        ids = [mid for mid, _ in self.entries]
        if ids != sorted(set(ids)):
            raise ValueError("slice table entries must be unique and ordered by miner id")
        ordered = sorted(s for _, s in self.entries)
        cursor = 0
        for s in ordered:
            if s.start != cursor or len(s) == 0:
                raise ValueError("slices must be non-empty, disjoint and cover the space")
            cursor = s.end
        if cursor != self.space.size:
            raise ValueError("slices must cover the whole nonce space")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [mid for mid, _ in self.entries]

    def slice_at(self, index: int) -> Slice:
        return self.entries[index][1]

    def slice_of(self, miner_id: int) -> Slice:
        return self.entries[self.index_of(miner_id)][1]

    def index_of(self, miner_id: int) -> int:
        for i, (mid, _) in enumerate(self.entries):
            if mid == miner_id:
                return i
        raise KeyError(miner_id)

    def __contains__(self, miner_id: int) -> bool:
        return any(mid == miner_id for mid, _ in self.entries)

    def index_containing(self, nonce: int) -> int:
        for i, (_, s) in enumerate(self.entries):
            if nonce in s:
                return i
        raise KeyError(nonce)

    def triples(self) -> list[tuple[int, int, int]]:
        return [(mid, s.start, s.end) for mid, s in self.entries]


def partition(space: NonceSpace, stakes: Iterable[tuple[int, int]]) -> SliceTable:
    """Contiguous slices sized ``floor(2^B * stake / total)``; leftover units go to the lowest ids."""
    stakes = sorted(stakes)
    if not stakes:
        raise ConfigError("partition needs at least one miner")
    if any(s <= 0 for _, s in stakes):
        raise ConfigError("all stakes must be positive")
    total = sum(s for _, s in stakes)
    size = space.size
    sizes = [size * s // total for _, s in stakes]
    for i in range(size - sum(sizes)):
        sizes[i] += 1
    if any(n == 0 for n in sizes):
        raise ConfigError("nonce space too small for this many miners")
    entries, cursor = [], 0
    for (mid, _), n in zip(stakes, sizes):
        entries.append((mid, Slice(cursor, cursor + n)))
        cursor += n
    return SliceTable(tuple(entries), space)


def slice_index_for(i: int, shift_round: int, n: int) -> int:
    return (i + shift_round) % n


def penalty_set(o: int, shift_round: int, n: int, literal: bool = False) -> frozenset[int]:
    """Table indices that held slice ``o`` during rounds ``0..r-1``.

    ``literal=True`` gives ``(o + l - 1) mod n`` instead, which names the
    miners *after* ``o`` and so contradicts the rotation direction.
    """
    if literal:
        return frozenset((o + l - 1) % n for l in range(1, shift_round + 1))
    return frozenset((o - l + 1) % n for l in range(1, shift_round + 1))


def transfer_slice(table: SliceTable, seller_id: int, buyer_id: int,
                   subrange: Slice) -> SliceTable:
    """Hand ``subrange`` of the seller's slice to the buyer.

    Both parties must keep one contiguous slice: the subrange is a prefix or
    suffix of the seller's slice, and an existing buyer must border it.
    A seller left with nothing drops out of the table.
    """
    if len(subrange) == 0:
        return table
    if seller_id not in table:
        raise TransferError(f"seller {seller_id} holds no slice")
    own = table.slice_of(seller_id)
    if not own.contains(subrange):
        raise TransferError(f"{subrange} is not inside seller slice {own}")
    if subrange.start == own.start:
        remainder: Optional[Slice] = Slice(subrange.end, own.end)
    elif subrange.end == own.end:
        remainder = Slice(own.start, subrange.start)
    else:
        raise TransferError("subrange would split the seller slice in two")
    if len(remainder) == 0:
        remainder = None

    got = subrange
    if buyer_id in table and buyer_id != seller_id:
        theirs = table.slice_of(buyer_id)
        if theirs.end == subrange.start:
            got = Slice(theirs.start, subrange.end)
        elif subrange.end == theirs.start:
            got = Slice(subrange.start, theirs.end)
        else:
            raise TransferError("existing buyer's slice does not border the subrange")
    elif buyer_id == seller_id:
        return table

    entries = dict(table.entries)
    if remainder is None:
        del entries[seller_id]
    else:
        entries[seller_id] = remainder
    entries[buyer_id] = got
    return SliceTable(tuple(sorted(entries.items())), table.space)


def neighbour_of(table: SliceTable, miner_id: int) -> int:
    """Id of a miner whose slice borders ``miner_id``'s (lower side preferred)."""
    own = table.slice_of(miner_id)
    for mid, s in table.entries:
        if s.end == own.start:
            return mid
    for mid, s in table.entries:
        if s.start == own.end:
            return mid
    raise TransferError(f"miner {miner_id} has no neighbour")
