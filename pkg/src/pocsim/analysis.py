"""Closed-form attack and energy models."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class AttackParams:
    b: int = 0
    alpha: Number = 0
    m: Number = 1
    h: Number = 1

    def __post_init__(self):
        if self.b < 0 or self.alpha < 0:
            raise ValueError("b and alpha must be non-negative")
        if self.m <= 0 or self.h <= 0:
            raise ValueError("hashpower values must be positive")


@dataclass(frozen=True)
class EnergyParams:
    n: int
    E: Number
    tau: Number

    def __post_init__(self):
        if self.n <= 0 or self.E <= 0 or self.tau <= 0:
            raise ValueError("n, E and tau must be positive")


def fork_success_prob(b: int, coverage: Fraction = Fraction(1, 2)) -> Fraction:
    """Chance of replacing ``b`` consecutive blocks when the adversary holds
    ``coverage`` of the nonce space. The default of one half is the standard
    assumption; other values are an extrapolation."""
    if b < 0:
        raise ValueError("b must be non-negative")
    coverage = Fraction(coverage)
    if not 0 <= coverage <= 1:
        raise ValueError("coverage must be within [0, 1]")
    return coverage ** b


def rebuild_time(alpha: Number, m: Number, h: Number) -> Number:
    """Time for hashpower ``m`` to redo work that took hashpower ``h`` a span ``alpha``."""
    if m == 0:
        raise ZeroDivisionError("adversary hashpower m must be non-zero")
    if m < 0 or h <= 0 or alpha < 0:
        raise ValueError("need alpha >= 0, m > 0, h > 0")
    if all(isinstance(x, (int, Fraction)) for x in (alpha, m, h)):
        value = Fraction(alpha) * Fraction(h) / Fraction(m)
        return int(value) if value.denominator == 1 else value
    return alpha * h / m


@dataclass(frozen=True)
class Cost:
    resources: Number
    time: Number
    energy: Number


def energy_model(n: int, E: Number, tau: Number) -> dict[str, Cost]:
    """Solo proof of work versus collaborative search over disjoint slices."""
    EnergyParams(n, E, tau)
    exact = all(isinstance(x, (int, Fraction)) for x in (E, tau))
    poc_time = Fraction(tau) / n if exact else tau / n
    if exact and poc_time.denominator == 1:
        poc_time = int(poc_time)
    return {
        "pow": Cost(n * E, tau, n * E * tau),
        "poc": Cost(n * E, poc_time, E * tau),
    }


def as_json_number(x: Number):
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else float(x)
    return x
