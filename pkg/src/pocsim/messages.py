"""Protocol messages, S-block transactions and their canonical encoding.

Every message carries the mined sequence ``b`` together with the block's
merge count ``m``: after a merge the block keeps its sequence number but is
a different puzzle, so votes and nonces for the old content must not count
toward the new one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Any, ClassVar, Union


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class Signed:
    """A message with its sender tag (see ``system_s.Authenticator``)."""

    body: "Message"
    signer: str
    tag: str

    def to_obj(self) -> dict:
        return {"body": self.body.to_obj(), "signer": self.signer, "tag": self.tag}

    @staticmethod
    def from_obj(obj: dict) -> "Signed":
        return Signed(decode_obj(obj["body"]), obj["signer"], obj["tag"])


class _Codec:
    KIND: ClassVar[str] = ""

    def to_obj(self) -> dict:
        out: dict[str, Any] = {"kind": self.KIND}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple) and value and isinstance(value[0], Signed):
                value = [v.to_obj() for v in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def encode(self) -> bytes:
        return canonical_json(self.to_obj())


@dataclass(frozen=True)
class NonceFind(_Codec):
    KIND: ClassVar[str] = "nonce_find"
    b: int
    m: int
    nonce: int


@dataclass(frozen=True)
class Shift(_Codec):
    KIND: ClassVar[str] = "shift"
    b: int
    m: int
    r: int


@dataclass(frozen=True)
class Penalty(_Codec):
    KIND: ClassVar[str] = "penalty"
    b: int
    m: int
    r: int
    culprits: tuple[int, ...]


@dataclass(frozen=True)
class NonceAttest(_Codec):
    """The committed form of a NonceFind: the nonce plus its matching copies."""

    KIND: ClassVar[str] = "nonce_attest"
    b: int
    m: int
    nonce: int
    votes: tuple[Signed, ...]


@dataclass(frozen=True)
class ShiftCert(_Codec):
    KIND: ClassVar[str] = "shift_cert"
    b: int
    m: int
    r: int
    votes: tuple[Signed, ...]


@dataclass(frozen=True)
class PenaltyCert(_Codec):
    KIND: ClassVar[str] = "penalty_cert"
    b: int
    m: int
    r: int
    culprits: tuple[int, ...]
    votes: tuple[Signed, ...]


@dataclass(frozen=True)
class JoinMiner(_Codec):
    KIND: ClassVar[str] = "join"
    miner_id: int
    stake: int
    seller: int
    start: int
    end: int


@dataclass(frozen=True)
class LeaveMiner(_Codec):
    KIND: ClassVar[str] = "leave"
    miner_id: int
    buyer: int


@dataclass(frozen=True)
class SetDifficulty(_Codec):
    KIND: ClassVar[str] = "difficulty"
    difficulty: int


@dataclass(frozen=True)
class ClientPayload(_Codec):
    KIND: ClassVar[str] = "client"
    client: int
    counter: int
    data: str


Message = Union[NonceFind, Shift, Penalty, NonceAttest, ShiftCert, PenaltyCert,
                JoinMiner, LeaveMiner, SetDifficulty, ClientPayload]

_KINDS = {cls.KIND: cls for cls in (NonceFind, Shift, Penalty, NonceAttest, ShiftCert,
                                    PenaltyCert, JoinMiner, LeaveMiner, SetDifficulty,
                                    ClientPayload)}

PRIORITY_KINDS = frozenset({"nonce_attest", "shift_cert", "penalty_cert", "join", "leave",
                            "difficulty"})


def decode_obj(obj: dict) -> Message:
    cls = _KINDS[obj["kind"]]
    kwargs = {}
    for f in fields(cls):
        value = obj[f.name]
        if f.name == "votes":
            value = tuple(Signed.from_obj(v) for v in value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def decode(data: bytes) -> Message:
    return decode_obj(json.loads(data))


def vote_key(msg: Message) -> tuple:
    """Fields a quorum of matching messages must agree on."""
    if isinstance(msg, Penalty):
        return ("penalty", msg.b, msg.m, msg.r, msg.culprits)
    if isinstance(msg, Shift):
        return ("shift", msg.b, msg.m, msg.r)
    if isinstance(msg, NonceFind):
        return ("nonce_find", msg.b, msg.m, msg.nonce)
    raise TypeError(f"{type(msg).__name__} is not a vote")
