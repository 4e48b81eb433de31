"""Accuracy / steering split of utility gradients.

A soft action is ``a = sigmoid(temp * h)`` with
``h = rB * (tau * (g_pred - g_own) + g_own) - cB``, so

    da/dphi = psi * [(g_pred - g_own) * dtau/dphi + tau * dg_pred/dphi]
    psi     = a (1 - a) * rB * temp

where both derivatives are total (through every earlier step). The first
term moves trust (it pays to be believed), the second moves what trusting
agents expect (it pays to say the right thing). Any utility that is a
weighted sum of ``da`` terms splits the same way; the welfare surrogate is
one after chaining through the soft success of each group.

Components are obtained by seeding the trust and prediction-pivot nodes of
the tape instead of the utility itself, so no extra forward pass is needed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .game import GameParams
from .rollout import SoftTrace


@dataclass
class GradientDecomposition:
    psi: np.ndarray  # (H, n)
    weight: np.ndarray  # (H, n), utility weight on each soft action
    gap: np.ndarray  # (H, n), g_pred - g_own
    accuracy: np.ndarray  # (P,), summed over (t, i)
    steering: np.ndarray  # (P,)
    accuracy_per: np.ndarray | None = None  # (H, n, P)
    steering_per: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.accuracy + self.steering

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "i", "psi", "acc_norm", "steer_norm", "gap_sign"])
        H, n = self.psi.shape
        for t in range(H):
            for i in range(n):
                acc = np.linalg.norm(self.accuracy_per[t, i]) if self.accuracy_per is not None else float("nan")
                st = np.linalg.norm(self.steering_per[t, i]) if self.steering_per is not None else float("nan")
                w.writerow([t + 1, i, repr(float(self.psi[t, i])), repr(float(acc)), repr(float(st)),
                            int(np.sign(self.gap[t, i]))])
        return buf.getvalue()


def psi_values(trace: SoftTrace, game: GameParams) -> np.ndarray:
    a = np.array([ad.value(x) for x in trace.actions])
    return a * (1 - a) * game.r * game.B * trace.temp


def upop_weights(trace: SoftTrace, game: GameParams) -> np.ndarray:
    """d U_Pop / d a_{t,j}, holding everything upstream of the actions fixed."""
    s = np.array([ad.value(x) for x in trace.success])
    # both surrogates have slope s(1-s) * temp / M in the group count
    ds = s * (1 - s) * trace.temp / trace.group_sizes
    return game.B * (game.r * ds @ trace.group_matrix - game.c)


def _is_taped(x) -> bool:
    return isinstance(x, ad.Var)


def decompose(trace: SoftTrace, game: GameParams, phi: ad.Var, weights=None,
              per_pair: bool = False) -> GradientDecomposition:
    """Split ``sum_{t,i} weights[t,i] * grad a_{t,i}`` into its two components.

    ``weights`` defaults to ones, which is the cooperator count. With
    ``per_pair`` every ``(t, i)`` term is kept separately (two backward
    passes per term).
    """
    tape = phi.tape
    H, n = len(trace.actions), len(trace.g_own)
    w = np.ones((H, n)) if weights is None else np.asarray(weights, dtype=float)
    psi = psi_values(trace, game)
    gp = np.array([ad.value(x) for x in trace.g_pred])
    tau = np.array([ad.value(x) for x in trace.trust_before[:H]])
    gap = gp - trace.g_own
    coef_acc = w * psi * gap
    coef_steer = w * psi * tau

    def run(coef, nodes):
        seeds = [(v, coef[t]) for t, v in enumerate(nodes) if _is_taped(v)]
        if not seeds:
            return np.zeros_like(phi.value)
        return tape.backward(seeds, [phi])[0]

    acc = run(coef_acc, trace.trust_before[:H])
    steer = run(coef_steer, trace.g_pred)
    out = GradientDecomposition(psi, w, gap, acc, steer)
    if per_pair:
        P = phi.value.size
        out.accuracy_per = np.zeros((H, n, P))
        out.steering_per = np.zeros((H, n, P))
        for t in range(H):
            for i in range(n):
                e = np.zeros(n)
                for nodes, coef, dest in ((trace.trust_before, coef_acc, out.accuracy_per),
                                          (trace.g_pred, coef_steer, out.steering_per)):
                    if _is_taped(nodes[t]) and coef[t, i] != 0.0:
                        e[:] = 0.0
                        e[i] = coef[t, i]
                        dest[t, i] = tape.backward([(nodes[t], e)], [phi])[0].ravel()
    return out


def decompose_uc_gradient(trace: SoftTrace, game: GameParams, phi: ad.Var, per_pair: bool = False):
    return decompose(trace, game, phi, None, per_pair)


def decompose_upop_gradient(trace: SoftTrace, game: GameParams, phi: ad.Var, per_pair: bool = False):
    return decompose(trace, game, phi, upop_weights(trace, game), per_pair)
