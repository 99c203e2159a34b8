"""Block-header serialization, leading-zero-bit difficulty and slice search.

Two hash backends share one interface:

* ``"sha256"`` -- the real puzzle. A nonce is valid when
  ``SHA-256(serialize_header(h))`` has at least ``D`` leading zero bits.
* ``"modeled"`` -- a cheap 64-bit keyed mixer (splitmix64 finalizer) seeded
  by the SHA-256 of the nonce-free header prefix. It keeps the
  leading-zero-bit semantics and is evaluated in bulk with numpy, so large
  desk-scale sweeps stay fast. Difficulty is capped at 64 in this mode.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

HEADER_SIZE = 92
_PREFIX = struct.Struct(">I32s32sQII")
_NONCE = struct.Struct(">Q")

MODES = ("sha256", "modeled")

U32 = 2**32
U64 = 2**64


_TAILS = [bytes([i]) for i in range(256)]


class RangeError(ValueError):
    """Nonce outside the configured nonce space."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class NonceSpace:
    bit_width: int = 42

    def __post_init__(self):
        if not 1 <= self.bit_width <= 64:
            raise ValueError(f"nonce bit width must be in 1..64, got {self.bit_width}")

    @property
    def size(self) -> int:
        return 1 << self.bit_width


@dataclass(frozen=True)
class SearchBudget:
    max_attempts: Optional[int] = None

    def __post_init__(self):
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ValueError("bounded search budget needs max_attempts >= 1")


UNBOUNDED = SearchBudget()


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_mined_hash: bytes
    aggregate_root: bytes
    mined_seq: int
    difficulty: int
    merge_count: int = 0
    nonce: int = 0

    def __post_init__(self):
        if len(self.prev_mined_hash) != 32 or len(self.aggregate_root) != 32:
            raise ValueError("header hashes must be 32 bytes")
        if not 0 <= self.difficulty <= 256:
            raise ValueError(f"difficulty must be in 0..256, got {self.difficulty}")
        for name, bound in (("version", U32), ("merge_count", U32),
                            ("mined_seq", U64), ("nonce", U64)):
            value = getattr(self, name)
            if not 0 <= value < bound:
                raise ValueError(f"{name} out of range: {value}")

    def prefix(self) -> bytes:
        """Everything but the trailing 8 nonce bytes."""
        return _PREFIX.pack(self.version, self.prev_mined_hash, self.aggregate_root,
                            self.mined_seq, self.difficulty, self.merge_count)

    def with_nonce(self, nonce: int) -> "BlockHeader":
        return replace(self, nonce=nonce)

    def hash(self) -> bytes:
        return sha256(serialize_header(self))


def serialize_header(h: BlockHeader) -> bytes:
    """92-byte big-endian layout; frozen wire and disk format."""
    return h.prefix() + _NONCE.pack(h.nonce)


def deserialize_header(data: bytes) -> BlockHeader:
    if len(data) != HEADER_SIZE:
        raise ValueError(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
    version, prev, root, seq, diff, merges = _PREFIX.unpack(data[:84])
    (nonce,) = _NONCE.unpack(data[84:])
    return BlockHeader(version, prev, root, seq, diff, merges, nonce)


def leading_zero_bits(d: bytes) -> int:
    value = int.from_bytes(d, "big")
    return 8 * len(d) - value.bit_length()


# --- modeled backend -------------------------------------------------------

_M64 = U64 - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = (z + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64, matching the scalar masks above
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _modeled_key(prefix: bytes) -> int:
    return int.from_bytes(sha256(prefix)[:8], "big")


def modeled_digest(h: BlockHeader) -> bytes:
    """Digest used for the difficulty check in modeled mode."""
    prefix = h.prefix()
    word = _mix64(_modeled_key(prefix) ^ h.nonce)
    return word.to_bytes(8, "big") + sha256(prefix)[8:]


# --- checking and searching ------------------------------------------------

def _target(difficulty: int, width: int) -> Optional[bytes]:
    """Digests strictly below this are valid; None means everything is."""
    if difficulty == 0:
        return None
    if difficulty > width:
        return bytes(width // 8)  # nothing is below all-zero
    return (1 << (width - difficulty)).to_bytes(width // 8, "big")


@dataclass(frozen=True)
class Puzzle:
    """Puzzle parameters shared by every miner of a run."""

    nonce_bits: int = 42
    mode: str = "sha256"

    def __post_init__(self):
        NonceSpace(self.nonce_bits)
        if self.mode not in MODES:
            raise ValueError(f"unknown puzzle mode {self.mode!r}")

    @property
    def space(self) -> NonceSpace:
        return NonceSpace(self.nonce_bits)

    def _check_range(self, nonce: int) -> None:
        if not 0 <= nonce < (1 << self.nonce_bits):
            raise RangeError(f"nonce {nonce} outside 2^{self.nonce_bits} space")

    def digest(self, h: BlockHeader) -> bytes:
        if self.mode == "sha256":
            return sha256(serialize_header(h))
        return modeled_digest(h)

    def check(self, h: BlockHeader, nonce: int, difficulty: int) -> bool:
        self._check_range(nonce)
        if self.mode == "modeled" and difficulty > 64:
            return False
        return leading_zero_bits(self.digest(h.with_nonce(nonce))) >= difficulty

    def search(self, h: BlockHeader, start: int, end: int, difficulty: int,
               budget: SearchBudget = UNBOUNDED,
               cancelled: Optional[Callable[[], bool]] = None) -> tuple[Optional[int], int]:
        """Ascending scan of ``[start, end)``; returns (first valid nonce or None, attempts).

        ``cancelled`` is polled every 4096 attempts for live searches.
        """
        if start >= end:
            return None, 0
        self._check_range(start)
        self._check_range(end - 1)
        stop = end
        if budget.max_attempts is not None:
            stop = min(end, start + budget.max_attempts)
        if self.mode == "modeled":
            return self._search_modeled(h, start, stop, difficulty, cancelled)
        return self._search_sha(h, start, stop, difficulty, cancelled)

    def _search_sha(self, h, start, stop, difficulty, cancelled):
        if difficulty == 0:
            return start, 1
        target = _target(difficulty, 256)
        # the 84-byte prefix spans one full compression block; hash it once,
        # then extend by the 7 high nonce bytes once per run of 256 nonces
        base = hashlib.sha256(h.prefix())
        pack = _NONCE.pack
        n = start
        polled = start
        while n < stop:
            high = n >> 8
            mid = base.copy()
            mid.update(pack(high)[1:])
            end = min(stop, (high + 1) << 8)
            for tail in _TAILS[n & 0xFF:end - (high << 8)]:
                d = mid.copy()
                d.update(tail)
                if d.digest() < target:
                    return n, n - start + 1
                n += 1
            if cancelled is not None and n < stop and n - polled >= 4096:
                polled = n
                if cancelled():
                    return None, n - start
        return None, stop - start

    def _search_modeled(self, h, start, stop, difficulty, cancelled):
        if difficulty == 0:
            return start, 1
        if difficulty > 64:
            return None, stop - start
        key = np.uint64(_modeled_key(h.prefix()))
        shift = np.uint64(64 - difficulty)
        # easy puzzles finish early; do not evaluate a huge chunk for them
        chunk = min(1 << 16, max(1 << 10, 4 << difficulty))
        lo = start
        while lo < stop:
            hi = min(stop, lo + chunk)
            words = _mix64_array(np.arange(lo, hi, dtype=np.uint64) ^ key)
            hits = np.flatnonzero((words >> shift) == 0)
            if hits.size:
                n = lo + int(hits[0])
                return n, n - start + 1
            lo = hi
            if cancelled is not None and lo < stop and cancelled():
                return None, lo - start
        return None, stop - start

    def valid_nonces(self, h: BlockHeader, difficulty: int) -> list[int]:
        """Exhaustive scan of the whole space. Only sensible for small spaces."""
        found = []
        start, end = 0, 1 << self.nonce_bits
        while start < end:
            nonce, attempts = self.search(h, start, end, difficulty)
            if nonce is None:
                break
            found.append(nonce)
            start = nonce + 1
        return found


SHA256 = Puzzle(nonce_bits=64)


def check_nonce(h: BlockHeader, nonce: int, difficulty: int, nonce_bits: int = 64) -> bool:
    return Puzzle(nonce_bits).check(h, nonce, difficulty)


def search_slice(h: BlockHeader, s, difficulty: int, budget: SearchBudget = UNBOUNDED,
                 nonce_bits: int = 64) -> tuple[Optional[int], int]:
    """Scan slice ``s`` (anything with ``start``/``end``) ascending from its start."""
    return Puzzle(nonce_bits).search(h, s.start, s.end, difficulty, budget)
