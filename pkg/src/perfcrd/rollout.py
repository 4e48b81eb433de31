"""Repeated play: predict, act, score, update trust.

Each step the predictor sees the previous step's actions (the initial token
on step 1), all agents respond simultaneously to the same prediction using
the trust they held before the step, groups are scored and trust is
updated from the realised neighbour actions.

``run_hard`` plays the true game with threshold decisions and is what every
reported metric comes from. ``run_soft`` replaces both step functions with
sigmoids and lets realised soft actions act as likelihood exponents, so the
whole rollout is differentiable when the parameters are taped.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .agents import EPS, AgentState, GroupTensors
from .game import GameParams, successes
from .graph import PopulationGraph
from .predictors import PredictorModel, embed_actions, initial_embedding


class RolloutError(ValueError):
    pass


# "ratio":    sigmoid(temp * (k/M - T))
# "centered": sigmoid(temp * (k - ceil(TM) + 1/2) / M), midpoint halfway
#             between the last failing and first succeeding integer count
SURROGATES = ("ratio", "centered")


@dataclass(frozen=True)
class RolloutConfig:
    horizon: int = 20
    temp: float = 1.0
    tau0: float = 0.5
    alpha: float = 0.8
    seed: int = 0
    success_surrogate: str = "ratio"

    def __post_init__(self):
        if self.success_surrogate not in SURROGATES:
            raise RolloutError(f"unknown success surrogate {self.success_surrogate!r}; choose from {SURROGATES}")
        if self.horizon < 1:
            raise RolloutError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 <= self.tau0 <= 1:
            raise RolloutError(f"tau0 must lie in [0, 1], got {self.tau0}")
        if not 0 <= self.alpha <= 1:
            raise RolloutError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.temp <= 0:
            raise RolloutError(f"temp must be > 0, got {self.temp}")


@dataclass
class RolloutTrace:
    mode: str
    predictions: np.ndarray  # (H, n)
    actions: np.ndarray  # (H, n)
    trust: np.ndarray  # (H, n), trust after the update of step t
    successes: np.ndarray  # (H, n)
    welfare: np.ndarray  # (H,)
    tau0: float = 0.5

    @property
    def horizon(self) -> int:
        return self.predictions.shape[0]

    @property
    def trust_before(self) -> np.ndarray:
        """Trust each agent acted on at each step."""
        first = np.full((1, self.trust.shape[1]), self.tau0)
        return np.vstack([first, self.trust[:-1]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "i", "theta_hat", "action", "trust", "group_success"])
        H, n = self.actions.shape
        for t in range(H):
            for i in range(n):
                w.writerow([t + 1, i, repr(float(self.predictions[t, i])), repr(float(self.actions[t, i])),
                            repr(float(self.trust[t, i])), int(self.successes[t, i])])
        return buf.getvalue()


def _tensors(graph: PopulationGraph, game: GameParams, cfg: RolloutConfig) -> tuple[AgentState, GroupTensors]:
    state = AgentState.homogeneous(graph, cfg.tau0, cfg.alpha)
    return state, GroupTensors(graph, game, state.alpha)


def run_hard(graph: PopulationGraph, game: GameParams, model: PredictorModel, cfg: RolloutConfig,
             tensors: GroupTensors | None = None) -> RolloutTrace:
    if model.graph.node_count != graph.node_count:
        raise RolloutError("model is bound to a graph of a different size")
    state, gt = _tensors(graph, game, cfg) if tensors is None else (None, tensors)
    n, H = graph.node_count, cfg.horizon
    preds, acts, trusts, succ = (np.zeros((H, n)) for _ in range(4))
    wel = np.zeros(H)
    tau = np.full(n, float(cfg.tau0))
    X = initial_embedding(n)
    for t in range(H):
        theta = np.asarray(model.forward(X), dtype=float)
        a = gt.hard_actions(tau, gt.g_pred(theta), game)
        s = successes(a, graph, game.T)
        tau = gt.trust_step(tau, theta, a)
        preds[t], acts[t], trusts[t], succ[t] = theta, a, tau, s
        wel[t] = game.B * (s.sum() * game.r - a.sum() * game.c)
        X = embed_actions(a)
    return RolloutTrace("hard", preds, acts, trusts, succ, wel, float(cfg.tau0))


@dataclass
class SoftTrace:
    """Taped soft rollout; every list holds one ``(n,)`` Var (or array) per step."""

    predictions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    trust_before: list = field(default_factory=list)
    g_pred: list = field(default_factory=list)
    drive: list = field(default_factory=list)
    success: list = field(default_factory=list)
    g_own: np.ndarray | None = None
    group_sizes: np.ndarray | None = None
    group_matrix: np.ndarray | None = None
    temp: float = 1.0

    def values(self) -> RolloutTrace:
        """Forward values as a (soft-mode) trace."""
        v = lambda xs: np.array([ad.value(x) for x in xs])
        trust_after = v(self.trust_before[1:]) if len(self.trust_before) > 1 else np.zeros((0, len(self.g_own)))
        return RolloutTrace("soft", v(self.predictions), v(self.actions),
                            trust_after, v(self.success), np.zeros(len(self.actions)),
                            float(ad.value(self.trust_before[0])[0]))


def run_soft(graph: PopulationGraph, game: GameParams, model: PredictorModel, cfg: RolloutConfig,
             params=None, tensors: GroupTensors | None = None) -> SoftTrace:
    """Differentiable rollout; pass a taped Var as ``params`` to record it.

    ``trust_before`` has ``horizon + 1`` entries: the trust used at each step
    followed by the final posterior.
    """
    if model.graph.node_count != graph.node_count:
        raise RolloutError("model is bound to a graph of a different size")
    if not model.trainable:
        raise RolloutError("soft rollouts need a trainable predictor")
    _, gt = _tensors(graph, game, cfg) if tensors is None else (None, tensors)
    n = graph.node_count
    tr = SoftTrace(g_own=gt.g_own, group_sizes=gt.group_sizes, group_matrix=gt.group_matrix, temp=cfg.temp)
    tau = np.full(n, float(cfg.tau0))
    X = initial_embedding(n)
    T = float(game.T)
    for _ in range(cfg.horizon):
        theta = model.forward(X, params)
        gp = gt.g_pred(theta)
        h = gt.drive(tau, gp, game)
        a = ad.sigmoid(cfg.temp * h)
        k = gt.group_matrix @ a
        if cfg.success_surrogate == "centered":
            s = ad.sigmoid(cfg.temp * (k - gt.required + 0.5) / gt.group_sizes)
        else:
            s = ad.sigmoid(cfg.temp * (k / gt.group_sizes - T))
        tr.predictions.append(theta)
        tr.g_pred.append(gp)
        tr.trust_before.append(tau)
        tr.drive.append(h)
        tr.actions.append(a)
        tr.success.append(s)
        tau = gt.trust_step(tau, theta, a)
        X = embed_actions(a)
    tr.trust_before.append(tau)
    return tr


@dataclass
class Metrics:
    accuracy: float
    log_likelihood: float
    welfare: float
    welfare_normalized: float
    cooperators: float
    cooperation_rate: float
    successful_groups: float
    success_fraction: float
    mean_trust: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def metrics(trace: RolloutTrace, game: GameParams, graph: PopulationGraph) -> Metrics:
    """Hard-mode summary. Accuracy counts a prediction as 'cooperate' when
    ``theta_hat >= 0.5``; welfare is normalised per agent-step and by ``B``."""
    if trace.mode != "hard":
        raise RolloutError("metrics are defined on hard rollouts only")
    H, n = trace.actions.shape
    a, th = trace.actions, trace.predictions
    hits = (th >= 0.5).astype(float) == a
    thc = np.clip(th, EPS, 1 - EPS)
    ll = a * np.log(thc) + (1 - a) * np.log(1 - thc)
    welfare = float(trace.welfare.sum())
    return Metrics(
        accuracy=float(hits.mean()),
        log_likelihood=float(ll.mean()),
        welfare=welfare,
        welfare_normalized=welfare / (game.B * H * n),
        cooperators=float(a.sum()),
        cooperation_rate=float(a.mean()),
        successful_groups=float(trace.successes.sum()),
        success_fraction=float(trace.successes.mean()),
        mean_trust=float(trace.trust[-1].mean()),
    )
