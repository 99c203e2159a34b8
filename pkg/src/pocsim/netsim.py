"""Deterministic discrete-event core: scheduler, delays, fault specs."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .slicing import ConfigError
from .system_s import ReplicaBehavior

MINER_BEHAVIORS = ("honest", "silent", "withholder", "vote-suppressor")


class DelayViolation(AssertionError):
    """A post-GST delivery exceeded the Δ bound."""


def derive_rng(seed: int, label: str) -> random.Random:
    """Independent stream per label, so adding a consumer never shifts another's draws."""
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(order=True)
class Event:
    fire_time: int
    tiebreak: int
    target: Any = field(compare=False)
    payload: Any = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class Scheduler:
    def __init__(self):
        self.now = 0
        self._heap: list[Event] = []
        self._counter = 0
        self._live = 0
        self.delivered = 0

    def schedule(self, fire_time: int, target, payload) -> Event:
        assert fire_time >= self.now, f"event scheduled in the past ({fire_time} < {self.now})"
        self._counter += 1
        self._live += 1
        ev = Event(fire_time, self._counter, target, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def cancel(self, ev: Event) -> None:
        if not ev.cancelled:
            ev.cancelled = True
            self._live -= 1

    def __len__(self) -> int:
        return self._live

    def _drop_cancelled(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        self._drop_cancelled()
        return self._heap[0].fire_time if self._heap else None

    def pop(self) -> Event:
        self._drop_cancelled()
        ev = heapq.heappop(self._heap)
        ev.cancelled = True  # delivered events can no longer be cancelled
        self._live -= 1
        self.now = ev.fire_time
        self.delivered += 1
        return ev

    def run_until(self, handler: Callable[[Event], None], until: Optional[int] = None,
                  stop: Optional[Callable[[], bool]] = None) -> int:
        """Deliver events in (time, tiebreak) order until ``until``, ``stop()`` or quiescence."""
        count = 0
        while self.peek_time() is not None:
            if until is not None and self._heap[0].fire_time > until:
                self.now = until
                break
            handler(self.pop())
            count += 1
            if stop is not None and stop():
                break
        return count


@dataclass(frozen=True)
class DelayModel:
    """Partial synchrony.

    Before ``gst`` a message may be delayed up to ``pre_gst_max``, dropped
    (then resent after ``retry_delay``, at most ``retry_budget`` times) or
    duplicated. Every copy still lands by ``max(send, gst) + delta``.
    """

    gst: int = 0
    delta: int = 20
    min_delay: int = 1
    pre_gst_max: int = 2000
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    retry_budget: int = 3
    retry_delay: int = 50

    def __post_init__(self):
        if self.delta < self.min_delay or self.min_delay < 0:
            raise ConfigError("need 0 <= min_delay <= delta")
        if self.gst < 0 or self.pre_gst_max < 0 or self.retry_budget < 0:
            raise ConfigError("delay parameters must be non-negative")
        if not (0 <= self.drop_prob < 1 and 0 <= self.dup_prob < 1):
            raise ConfigError("drop/dup probabilities must be in [0, 1)")

    def bound(self, send_time: int) -> int:
        return max(send_time, self.gst) + self.delta

    def delivery_times(self, rng: random.Random, send_time: int) -> list[int]:
        limit = self.bound(send_time)
        t = send_time
        if t < self.gst:
            for _ in range(self.retry_budget):
                if rng.random() >= self.drop_prob:
                    break
                t += self.retry_delay
            first = t + rng.randint(self.min_delay, max(self.min_delay, self.pre_gst_max))
            times = [min(first, limit)]
            if rng.random() < self.dup_prob:
                extra = send_time + rng.randint(self.min_delay, max(self.min_delay, self.pre_gst_max))
                times.append(min(extra, limit))
            return times
        return [t + rng.randint(self.min_delay, self.delta)]

    def check(self, send_time: int, delivery_time: int) -> None:
        if delivery_time > self.bound(send_time):
            raise DelayViolation(f"sent {send_time}, delivered {delivery_time}, bound {self.bound(send_time)}")


SYNCHRONOUS = DelayModel()


@dataclass(frozen=True)
class AdversarySpec:
    miners: tuple[tuple[int, str], ...] = ()
    replicas: tuple[tuple[int, ReplicaBehavior], ...] = ()
    compromised: tuple[str, ...] = ()
    hashpower: tuple[int, int] = (1, 1)  # (m, h) for fork scenarios
    activate_at: int = 0

    def miner_behavior(self, miner_id: int) -> str:
        return dict(self.miners).get(miner_id, "honest")

    def replica_behavior(self, replica_id: int) -> ReplicaBehavior:
        return dict(self.replicas).get(replica_id, ReplicaBehavior())

    def validate(self, n_miners: int, f_miners: int, n_replicas: int, f_replicas: int) -> None:
        for mid, kind in self.miners:
            if kind not in MINER_BEHAVIORS:
                raise ConfigError(f"unknown miner behavior {kind!r}")
            if not 0 <= mid < n_miners:
                raise ConfigError(f"adversarial miner {mid} out of range")
        for rid, _ in self.replicas:
            if not 0 <= rid < n_replicas:
                raise ConfigError(f"faulty replica {rid} out of range")
        bad_m = sum(1 for _, k in self.miners if k != "honest")
        bad_r = sum(1 for _, b in self.replicas if not b.honest)
        if bad_m > f_miners:
            raise ConfigError(f"{bad_m} adversarial miners exceed f_M={f_miners}")
        if bad_r > f_replicas:
            raise ConfigError(f"{bad_r} faulty replicas exceed f_R={f_replicas}")
        if self.activate_at < 0:
            raise ConfigError("activate_at must be non-negative")
        if min(self.hashpower) <= 0:
            raise ConfigError("hashpower values must be positive")


def inject(simulation, adversary: AdversarySpec):
    """Install ``adversary`` on a built simulation; behaviors switch on at ``activate_at``."""
    return simulation.inject(adversary)


def run_fork_attack(*args, **kwargs):
    from .fork_attack import run_fork_attack as _run
    return _run(*args, **kwargs)
