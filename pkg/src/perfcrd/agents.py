"""Agent behaviour: Bayesian trust in the predictor and threshold best responses.

Agent ``i`` keeps a trust level ``tau_i`` (posterior probability that the
external predictions explain its neighbours better than its own fixed
expectations ``alpha_ij``). It cooperates when

    r * (tau_i * g(theta_hat_N(i)) + (1 - tau_i) * g(alpha_i,N(i))) > c

where ``g`` is the Poisson-binomial probability that exactly
``ceil(T * M_i) - 1`` neighbours cooperate, i.e. that ``i`` is pivotal.

The scalar functions here follow one agent at a time and serve as the
reference; :class:`GroupTensors` is the vectorised form used by rollouts and
works on numpy arrays and taped ``Var`` values alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .game import GameParams, required_cooperators, required_vector
from .graph import PopulationGraph

EPS = 1e-6


class AgentError(ValueError):
    pass


@dataclass
class AgentState:
    trust: np.ndarray  # (n,)
    alpha: np.ndarray  # (n, n); alpha[i, j] is used only for j in N(i)

    @classmethod
    def homogeneous(cls, g: PopulationGraph, tau0: float = 0.5, alpha: float = 0.8) -> "AgentState":
        if not 0 <= tau0 <= 1:
            raise AgentError(f"initial trust must lie in [0, 1], got {tau0}")
        if not 0 <= alpha <= 1:
            raise AgentError(f"internal expectation must lie in [0, 1], got {alpha}")
        return cls(np.full(g.node_count, float(tau0)), alpha * g.adjacency_matrix)

    def copy(self) -> "AgentState":
        return AgentState(self.trust.copy(), self.alpha.copy())


def poisson_binomial_distribution(probs) -> np.ndarray:
    """Full pmf of the number of successes among independent Bernoullis."""
    p = np.asarray(probs, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise AgentError("Bernoulli parameters must lie in [0, 1]")
    pmf = np.zeros(p.size + 1)
    pmf[0] = 1.0
    for k, q in enumerate(p, start=1):
        pmf[1:k + 1] = pmf[1:k + 1] * (1 - q) + pmf[:k] * q
        pmf[0] *= 1 - q
    return pmf


def poisson_binomial_pmf(probs, m: int) -> float:
    p = np.asarray(probs, dtype=float)
    if not 0 <= m <= p.size:
        raise AgentError(f"count {m} out of range [0, {p.size}]")
    return float(poisson_binomial_distribution(p)[m])


def g_threshold(probs, M: int, T) -> float:
    """Probability that exactly ``ceil(T*M) - 1`` of the ``M - 1`` neighbours cooperate."""
    p = np.asarray(probs, dtype=float)
    if p.size != M - 1:
        raise AgentError(f"expected {M - 1} neighbour probabilities for group size {M}, got {p.size}")
    m = required_cooperators(M, T) - 1
    if m < 0 or m > M - 1:
        return 0.0
    return poisson_binomial_pmf(p, m)


def _mixture(i, pred, state, p: GameParams, g: PopulationGraph) -> float:
    nbrs = list(g.neighbors(i))
    M = g.group_size(i)
    theta = np.asarray(pred, dtype=float)
    g_pred = g_threshold(theta[nbrs], M, p.T)
    g_own = g_threshold(state.alpha[i, nbrs], M, p.T)
    tau = state.trust[i]
    return tau * g_pred + (1 - tau) * g_own


def cooperation_drive(i, pred, state, p: GameParams, g: PopulationGraph) -> float:
    """Expected payoff gain of cooperating over defecting, ``h_i``."""
    return p.r * p.B * _mixture(i, pred, state, p, g) - p.c * p.B


def best_response(i, pred, state, p: GameParams, g: PopulationGraph) -> int:
    # exact indifference resolves to defect
    return int(p.r * _mixture(i, pred, state, p, g) > p.c)


def soft_action(i, pred, state, p: GameParams, g: PopulationGraph, temp: float = 1.0) -> float:
    if temp <= 0:
        raise AgentError(f"temperature must be > 0, got {temp}")
    return float(ad.sigmoid(temp * cooperation_drive(i, pred, state, p, g)))


def bernoulli_loglik(theta, actions) -> float:
    th = np.clip(np.asarray(theta, dtype=float), EPS, 1 - EPS)
    a = np.asarray(actions, dtype=float)
    return float(np.sum(a * np.log(th) + (1 - a) * np.log(1 - th)))


def trust_update(state: AgentState, pred, realized, i: int, g: PopulationGraph) -> float:
    """Posterior trust of agent ``i`` after observing its neighbours' actions.

    Realized actions may be soft (in ``[0, 1]``); they then act as continuous
    exponents in the Bernoulli likelihood.
    """
    nbrs = list(g.neighbors(i))
    tau = float(state.trust[i])
    a = np.asarray(realized, dtype=float)[nbrs]
    ll_pred = bernoulli_loglik(np.asarray(pred, dtype=float)[nbrs], a)
    ll_own = bernoulli_loglik(state.alpha[i, nbrs], a)
    return tau / (tau + (1 - tau) * np.exp(ll_own - ll_pred))


class GroupTensors:
    """Padded neighbour tables for vectorised agent updates on one graph."""

    def __init__(self, g: PopulationGraph, game: GameParams, alpha: np.ndarray):
        n = g.node_count
        deg = [len(g.neighbors(i)) for i in range(n)]
        D = max(1, max(deg))
        self.n, self.D = n, D
        self.nbr_idx = np.zeros((n, D), dtype=np.int64)
        self.mask = np.zeros((n, D))
        for i in range(n):
            nb = g.neighbors(i)
            self.nbr_idx[i, :len(nb)] = nb
            self.mask[i, :len(nb)] = 1.0
        self.group_sizes = g.group_sizes.astype(float)
        self.group_matrix = g.adjacency_matrix + np.eye(n)
        self.required = required_vector(g, game.T)
        pivot = self.required - 1
        self.pivot_onehot = np.zeros((n, D + 1))
        for i in range(n):
            if 0 <= pivot[i] <= deg[i]:
                self.pivot_onehot[i, pivot[i]] = 1.0
        self.shift = np.eye(D + 1, k=1)  # (pmf @ shift)[m] = pmf[m - 1]
        self.alpha_pad = np.take_along_axis(np.asarray(alpha, dtype=float), self.nbr_idx, axis=1) * self.mask
        a_c = np.clip(self.alpha_pad, EPS, 1 - EPS)
        self.log_alpha = np.log(a_c) * self.mask
        self.log_alpha_c = np.log(1 - a_c) * self.mask
        self.g_own = self.pivot_prob(self.alpha_pad)

    def pivot_prob(self, P):
        """Row-wise Poisson-binomial mass at each agent's pivotal count.

        ``P`` is ``(n, D)`` with padded entries zero. The DP cells are
        recorded on the tape when ``P`` is taped.
        """
        pmf = np.zeros((self.n, self.D + 1))
        pmf[:, 0] = 1.0
        for d in range(self.D):
            q = P[:, d:d + 1]
            pmf = pmf + (pmf @ self.shift - pmf) * q
        return ad.sum_(pmf * self.pivot_onehot, axis=1)

    def gather(self, x):
        """Per-agent neighbour values ``(n, D)``, zero in padded slots."""
        return x[self.nbr_idx] * self.mask

    def g_pred(self, theta):
        return self.pivot_prob(self.gather(theta))

    def drive(self, tau, g_pred, game: GameParams):
        """``h = rB (tau g_pred + (1 - tau) g_own) - cB`` for all agents."""
        mix = tau * (g_pred - self.g_own) + self.g_own
        return game.r * game.B * mix - game.c * game.B

    def hard_actions(self, tau, g_pred, game: GameParams) -> np.ndarray:
        mix = tau * g_pred + (1 - tau) * self.g_own
        return (game.r * mix > game.c).astype(float)

    def group_counts(self, actions):
        return self.group_matrix @ actions

    def trust_step(self, tau, theta, actions):
        th = ad.clip(theta, EPS, 1 - EPS)
        a = self.gather(actions)
        ll_pred = ad.sum_(a * ad.log(self.gather(th) + (1 - self.mask))
                          + (self.mask - a) * ad.log(1 - self.gather(th)), axis=1)
        ll_own = ad.sum_(a * self.log_alpha + (self.mask - a) * self.log_alpha_c, axis=1)
        return tau / (tau + (1 - tau) * ad.exp(ll_own - ll_pred))
