"""Collective Risk Dilemma payoffs, group success and welfare accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import PopulationGraph


class GameError(ValueError):
    pass


def as_fraction(T) -> Fraction:
    """Exact threshold from a fraction string ("2/3"), int, float or Fraction.

    Floats go through their shortest repr so ``0.5`` becomes ``1/2`` rather
    than the binary expansion.
    """
    if isinstance(T, Fraction):
        return T
    if isinstance(T, float):
        return Fraction(repr(T))
    return Fraction(T)


@dataclass(frozen=True)
class GameParams:
    B: float = 1.0
    c: float = 0.2
    r: float = 0.4
    T: Fraction = Fraction(1, 2)

    def __post_init__(self):
        object.__setattr__(self, "T", as_fraction(self.T))
        if not self.B > 0:
            raise GameError(f"endowment B must be > 0, got {self.B}")
        for name in ("c", "r"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise GameError(f"{name} must lie in [0, 1], got {v}")
        if not 0 <= self.T <= 1:
            raise GameError(f"threshold T must lie in [0, 1], got {self.T}")

    @property
    def rational_cooperation(self) -> bool:
        """Cooperating at the threshold pays off only when ``c < r``."""
        return self.c < self.r

    @property
    def T_float(self) -> float:
        return float(self.T)

    def required(self, M: int) -> int:
        return required_cooperators(M, self.T)

    def to_json(self) -> dict:
        return {"B": self.B, "c": self.c, "r": self.r, "T": str(self.T)}

    @classmethod
    def from_json(cls, obj: dict) -> "GameParams":
        try:
            return cls(B=float(obj.get("B", 1.0)), c=float(obj["c"]), r=float(obj["r"]), T=as_fraction(obj["T"]))
        except (KeyError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, GameError):
                raise
            raise GameError(f"bad game params {obj!r}: {exc}") from exc


def required_cooperators(M: int, T) -> int:
    """``ceil(T * M)`` in exact arithmetic."""
    return math.ceil(as_fraction(T) * M)


def required_vector(g: PopulationGraph, T) -> np.ndarray:
    return np.array([required_cooperators(int(m), T) for m in g.group_sizes], dtype=np.int64)


def _check_count(k: int, M: int) -> None:
    if not 0 <= k <= M:
        raise GameError(f"cooperator count {k} out of range [0, {M}]")


def group_success(k: int, M: int, T) -> bool:
    _check_count(k, M)
    return k >= required_cooperators(M, T)


def defector_payoff(k: int, M: int, p: GameParams) -> float:
    _check_count(k, M)
    return p.B if k >= p.required(M) else p.B * (1 - p.r)


def cooperator_payoff(k: int, M: int, p: GameParams) -> float:
    if k < 1:
        raise GameError("a cooperator's group contains at least one cooperator (itself)")
    return defector_payoff(k, M, p) - p.c * p.B


def switch_gain(k_others: int, M: int, p: GameParams) -> float:
    """Payoff change from defecting to cooperating when ``k_others`` neighbours cooperate."""
    return cooperator_payoff(k_others + 1, M, p) - defector_payoff(k_others, M, p)


def is_indifferent(k_others: int, M: int, p: GameParams) -> bool:
    return switch_gain(k_others, M, p) == 0


def group_counts(actions, g: PopulationGraph) -> np.ndarray:
    a = np.asarray(actions, dtype=float)
    return a + g.adjacency_matrix @ a


def successes(actions, g: PopulationGraph, T) -> np.ndarray:
    k = np.rint(group_counts(actions, g)).astype(np.int64)
    return k >= required_vector(g, T)


def social_welfare(actions, g: PopulationGraph, p: GameParams) -> float:
    """One step of population welfare: ``B * sum_i (success_i * r - a_i * c)``."""
    a = np.asarray(actions)
    if a.shape != (g.node_count,):
        raise GameError(f"expected {g.node_count} actions, got shape {a.shape}")
    s = successes(a, g, p.T)
    return float(p.B * (s.sum() * p.r - a.sum() * p.c))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def soft_success(k_soft, M, T, temp: float = 1.0):
    if temp <= 0:
        raise GameError(f"temperature must be > 0, got {temp}")
    return sigmoid(temp * (np.asarray(k_soft, dtype=float) / M - float(as_fraction(T))))
