"""Exact analysis of binary predictions under full trust.

With every agent fully trusting the predictor and predictions in {0, 1},
agent ``i`` cooperates iff exactly ``ceil(T M_i) - 1`` of its neighbours are
predicted to cooperate (and cooperating at the threshold pays, ``c < r``).
Everything here enumerates the ``2**n`` predictions of a small graph.

Prediction index ``k`` encodes node ``i`` in bit ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .game import GameParams, cooperator_payoff, defector_payoff, required_vector
from .graph import PopulationGraph, blocking_hubs, check_hub_condition

DEFAULT_CAP = 20
CHUNK = 1 << 16


class EnumerationCapError(ValueError):
    def __init__(self, n: int, cap: int):
        super().__init__(f"graph has {n} nodes, above the enumeration cap of {cap}; "
                         f"raise the cap (--force on the command line) to enumerate 2**{n} predictions")


def bits_of(index: int, n: int) -> tuple[int, ...]:
    return tuple((index >> i) & 1 for i in range(n))


def index_of(bits) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))


def _bit_matrix(indices: np.ndarray, n: int) -> np.ndarray:
    return ((indices[:, None] >> np.arange(n)) & 1).astype(np.int64)


def induced_actions(prediction, graph: PopulationGraph, game: GameParams) -> np.ndarray:
    """Best responses of fully trusting agents to a binary prediction (batched over rows)."""
    x = np.asarray(prediction, dtype=np.int64)
    pivot = required_vector(graph, game.T) - 1
    counts = x @ graph.adjacency_matrix.astype(np.int64)
    pivotal = (counts == pivot).astype(float)
    return (game.r * pivotal > game.c).astype(np.int64)


def nash_status(actions, graph: PopulationGraph, game: GameParams) -> str:
    """'strict', 'weak' (some deviation is payoff-neutral) or 'none'.

    Checks every unilateral deviation against the game payoffs directly.
    """
    a = [int(v) for v in actions]
    status = "strict"
    for i in range(graph.node_count):
        M = graph.group_size(i)
        k = a[i] + sum(a[j] for j in graph.neighbors(i))
        if a[i] == 1:
            stay, move = cooperator_payoff(k, M, game), defector_payoff(k - 1, M, game)
        else:
            stay, move = defector_payoff(k, M, game), cooperator_payoff(k + 1, M, game)
        if move > stay:
            return "none"
        if move == stay:
            status = "weak"
    return status


@dataclass(frozen=True)
class ProphecyReport:
    prediction: tuple[int, ...]
    induced_actions: tuple[int, ...]
    self_fulfilling: bool
    is_nash: bool
    indifferent: bool
    full_success: bool
    welfare: float
    accuracy: float

    def as_row(self) -> dict:
        return {
            "prediction": "".join(map(str, self.prediction)),
            "induced": "".join(map(str, self.induced_actions)),
            "self_fulfilling": int(self.self_fulfilling),
            "strict_nash": int(self.is_nash),
            "indifferent": int(self.indifferent),
            "full_success": int(self.full_success),
            "welfare": repr(self.welfare),
            "accuracy": repr(self.accuracy),
        }


class ProphecyTable:
    """Columnar results for every binary prediction of one (graph, game)."""

    def __init__(self, graph: PopulationGraph, game: GameParams, cap: int = DEFAULT_CAP):
        n = graph.node_count
        if n > cap:
            raise EnumerationCapError(n, cap)
        self.graph, self.game, self.n = graph, game, n
        size = 1 << n
        self.induced = np.zeros(size, dtype=np.int64)
        self.self_fulfilling = np.zeros(size, dtype=bool)
        self.strict_nash = np.zeros(size, dtype=bool)
        self.indifferent = np.zeros(size, dtype=bool)
        self.full_success = np.zeros(size, dtype=bool)
        self.success_count = np.zeros(size, dtype=np.int64)
        self.welfare = np.zeros(size)
        self.accuracy = np.zeros(size)
        G = (graph.adjacency_matrix + np.eye(n)).astype(np.int64)
        req = required_vector(graph, game.T)
        weights = 1 << np.arange(n, dtype=np.int64)
        B, c, r = game.B, game.c, game.r
        for start in range(0, size, CHUNK):
            idx = np.arange(start, min(size, start + CHUNK), dtype=np.int64)
            x = _bit_matrix(idx, n)
            a = induced_actions(x, graph, game)
            succ = (a @ G) >= req
            sl = slice(start, start + len(idx))
            self.induced[sl] = a @ weights
            self.self_fulfilling[sl] = (a == x).all(axis=1)
            self.full_success[sl] = succ.all(axis=1)
            self.success_count[sl] = succ.sum(axis=1)
            self.welfare[sl] = B * (succ.sum(axis=1) * r - a.sum(axis=1) * c)
            self.accuracy[sl] = (a == x).mean(axis=1)
            # strictness of the predicted profile itself, from payoffs
            k = x @ G
            ok_def = k >= req  # success if i defects with current count
            pay_d_stay = np.where(ok_def, B, B * (1 - r))
            pay_c_move = np.where(k + 1 >= req, B, B * (1 - r)) - c * B
            pay_c_stay = np.where(k >= req, B, B * (1 - r)) - c * B
            pay_d_move = np.where(k - 1 >= req, B, B * (1 - r))
            stay = np.where(x == 1, pay_c_stay, pay_d_stay)
            move = np.where(x == 1, pay_d_move, pay_c_move)
            self.strict_nash[sl] = (stay > move).all(axis=1)
            self.indifferent[sl] = ((stay == move).any(axis=1)) & (stay >= move).all(axis=1)

    def __len__(self):
        return len(self.induced)

    def __getitem__(self, k: int) -> ProphecyReport:
        return ProphecyReport(bits_of(k, self.n), bits_of(int(self.induced[k]), self.n),
                              bool(self.self_fulfilling[k]), bool(self.strict_nash[k]),
                              bool(self.indifferent[k]), bool(self.full_success[k]),
                              float(self.welfare[k]), float(self.accuracy[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def self_fulfilling_set(self) -> set[tuple[int, ...]]:
        return {bits_of(int(k), self.n) for k in np.flatnonzero(self.self_fulfilling)}

    def summary(self) -> dict:
        mask = non_dominated_mask(self.accuracy, self.welfare)
        sf = self.self_fulfilling
        return {
            "predictions": len(self),
            "self_fulfilling": int(sf.sum()),
            "strict_nash": int(self.strict_nash.sum()),
            "indifferent": int(self.indifferent.sum()),
            "full_success": int(self.full_success.sum()),
            "self_fulfilling_full_success": int((sf & self.full_success).sum()),
            "pareto_undominated": int(mask.sum()),
        }


def enumerate_prophecies(graph: PopulationGraph, game: GameParams, cap: int = DEFAULT_CAP) -> ProphecyTable:
    return ProphecyTable(graph, game, cap)


def non_dominated_mask(acc: np.ndarray, wel: np.ndarray) -> np.ndarray:
    """Undominated (accuracy, welfare) pairs when maximising both."""
    pts = np.unique(np.stack([acc, wel], axis=1), axis=0)
    keep_pts = []
    best_w = -np.inf
    for a, w in pts[np.lexsort((-pts[:, 1], -pts[:, 0]))]:
        if w > best_w:
            keep_pts.append((a, w))
            best_w = w
    keep = np.zeros(len(acc), dtype=bool)
    for a, w in keep_pts:
        keep |= (acc == a) & (wel == w)
    return keep


def best_prediction_for_welfare(graph: PopulationGraph, game: GameParams, require_self_fulfilling: bool,
                                cap: int = DEFAULT_CAP, table: ProphecyTable | None = None) -> ProphecyReport | None:
    """Highest-welfare prediction; ties go to higher accuracy, then the
    lexicographically smallest prediction vector."""
    table = table or enumerate_prophecies(graph, game, cap)
    cand = np.flatnonzero(table.self_fulfilling) if require_self_fulfilling else np.arange(len(table))
    if cand.size == 0:
        return None
    wel, acc = table.welfare[cand], table.accuracy[cand]
    top = cand[(wel == wel.max())]
    top = top[table.accuracy[top] == table.accuracy[top].max()]
    best = min(top, key=lambda k: bits_of(int(k), table.n))
    return table[int(best)]


@dataclass(frozen=True)
class Attainability:
    attainable: bool
    witness: tuple[int, ...] | None
    checked: int


def full_success_attainable(graph: PopulationGraph, game: GameParams, cap: int = DEFAULT_CAP,
                            table: ProphecyTable | None = None) -> Attainability:
    table = table or enumerate_prophecies(graph, game, cap)
    hits = np.flatnonzero(table.full_success)
    if hits.size:
        return Attainability(True, bits_of(int(hits[0]), table.n), len(table))
    return Attainability(False, None, len(table))


@dataclass(frozen=True)
class TheoremCheck:
    condition: str | None
    verified: bool
    witness: tuple[int, ...] | None


def _witness_is_successful_prophecy(graph: PopulationGraph, game: GameParams, w) -> bool:
    a = induced_actions(np.array(w), graph, game)
    if not np.array_equal(a, np.array(w)):
        return False
    k = a @ (graph.adjacency_matrix + np.eye(graph.node_count))
    return bool((np.rint(k) >= required_vector(graph, game.T)).all())


def check_theorem1(graph: PopulationGraph, game: GameParams) -> TheoremCheck:
    """Detect the clique / T=1 / T=0 sufficient conditions and exhibit a
    self-fulfilling full-success prediction for the one that applies."""
    n = graph.node_count
    if graph.is_clique():
        k = game.required(n)
        cond, w = "clique", tuple([1] * k + [0] * (n - k))
    elif game.T == 1:
        cond, w = "T=1", tuple([1] * n)
    elif game.T == 0:
        cond, w = "T=0", tuple([0] * n)
    else:
        return TheoremCheck(None, False, None)
    return TheoremCheck(cond, _witness_is_successful_prophecy(graph, game, w), w)


def hub_condition_holds(graph: PopulationGraph, T) -> bool:
    return check_hub_condition(graph, Fraction(T))


__all__ = [
    "Attainability", "EnumerationCapError", "ProphecyReport", "ProphecyTable", "TheoremCheck",
    "best_prediction_for_welfare", "bits_of", "blocking_hubs", "check_theorem1", "enumerate_prophecies",
    "full_success_attainable", "hub_condition_holds", "index_of", "induced_actions", "nash_status",
    "non_dominated_mask",
]
