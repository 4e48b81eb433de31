"""Losses on soft rollouts, single- and two-objective training, Pareto sweeps."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .agents import EPS, GroupTensors
from .game import GameParams
from .graph import PopulationGraph
from .predictors import PredictorModel
from .rollout import RolloutConfig, SoftTrace, metrics, run_hard, run_soft

log = logging.getLogger(__name__)

OBJECTIVES = ("accuracy-ce", "welfare-upop", "welfare-uc", "multi-mgda", "multi-scalarized")


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int, history: list, cause: str):
        super().__init__(f"training diverged at epoch {epoch}: {cause}")
        self.epoch = epoch
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "welfare-upop"
    lam: float = 0.5
    epochs: int = 500
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 25
    seed: int = 0
    detach_targets: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise TrainingError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if not 0 <= self.lam <= 1:
            raise TrainingError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise TrainingError(f"eval_every must be >= 1, got {self.eval_every}")


def _total(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def loss_ce(trace: SoftTrace, detach_targets: bool = True):
    """Summed binary cross-entropy of predictions against the soft actions they induced."""
    terms = []
    for theta, a in zip(trace.predictions, trace.actions):
        if detach_targets:
            a = ad.value(a)
        th = ad.clip(theta, EPS, 1 - EPS)
        terms.append(-ad.sum_(a * ad.log(th) + (1 - a) * ad.log(1 - th)))
    return _total(terms)


def utility_uc(trace: SoftTrace):
    """Soft count of cooperators over all agent-steps."""
    return _total([ad.sum_(a) for a in trace.actions])


def utility_upop(trace: SoftTrace, game: GameParams):
    """Soft welfare ``B * sum (S~ r - a~ c)``; to be maximised."""
    return game.B * _total([ad.sum_(s * game.r - a * game.c) for s, a in zip(trace.success, trace.actions)])


def mgda_combine(g_acc: np.ndarray, g_wel: np.ndarray) -> tuple[np.ndarray, float]:
    """Min-norm convex combination of two gradients; returns (direction, weight on ``g_acc``)."""
    diff = g_acc - g_wel
    denom = float(diff @ diff)
    if denom == 0.0:
        return g_acc.copy(), 0.5
    gamma = float(np.clip((g_wel - g_acc) @ g_wel / denom, 0.0, 1.0))
    return gamma * g_acc + (1 - gamma) * g_wel, gamma


class Adam:
    def __init__(self, size: int, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Objective:
    """Scalar loss (to minimise) and its gradient(s) for one soft rollout."""

    graph: PopulationGraph
    game: GameParams
    model: PredictorModel
    rollout: RolloutConfig
    train: TrainConfig
    tensors: GroupTensors
    scale_ce: float = 1.0
    scale_upop: float = 1.0

    def evaluate(self, params: np.ndarray) -> dict:
        tape = ad.Tape()
        phi = tape.leaf(params)
        tr = run_soft(self.graph, self.game, self.model, self.rollout, phi, self.tensors)
        ce = loss_ce(tr, self.train.detach_targets)
        upop = utility_upop(tr, self.game)
        uc = utility_uc(tr)
        obj = self.train.objective
        out = {"ce": float(ce.value), "upop": float(upop.value), "uc": float(uc.value), "gamma": float("nan")}
        if obj == "accuracy-ce":
            loss = ce
        elif obj == "welfare-upop":
            loss = -upop
        elif obj == "welfare-uc":
            loss = -uc
        elif obj == "multi-scalarized":
            lam = self.train.lam
            loss = lam * (ce / self.scale_ce) - (1 - lam) * (upop / self.scale_upop)
        else:
            g_acc, g_wel = tape.backward([(ce, 1.0 / self.scale_ce)], [phi])[0], \
                tape.backward([(upop, -1.0 / self.scale_upop)], [phi])[0]
            direction, gamma = mgda_combine(g_acc, g_wel)
            out.update(loss=gamma * out["ce"] / self.scale_ce - (1 - gamma) * out["upop"] / self.scale_upop,
                       grad=direction, gamma=gamma)
            return out
        (g,) = tape.backward([(loss, 1.0)], [phi])
        out.update(loss=float(loss.value), grad=g)
        return out


def _scale(v: float) -> float:
    return max(abs(v), 1e-6)


@dataclass
class TrainResult:
    model: PredictorModel
    history: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def history_csv(self) -> str:
        return rows_to_csv(self.history)


HISTORY_FIELDS = ("epoch", "loss", "ce", "upop", "uc", "gamma", "accuracy", "log_likelihood", "welfare",
                  "welfare_normalized", "success_fraction", "cooperation_rate", "mean_trust")


def rows_to_csv(rows: list[dict], fields=None) -> str:
    buf = io.StringIO()
    fields = list(fields or (rows[0].keys() if rows else HISTORY_FIELDS))
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def evaluate(model: PredictorModel, graph: PopulationGraph, game: GameParams, rollout: RolloutConfig,
             tensors: GroupTensors | None = None) -> dict:
    return metrics(run_hard(graph, game, model, rollout, tensors), game, graph).as_dict()


def train(graph: PopulationGraph, game: GameParams, model: PredictorModel, rollout: RolloutConfig,
          cfg: TrainConfig) -> TrainResult:
    """Full-batch training: one soft rollout per epoch, Adam on the chosen objective.

    Hard-rollout metrics are logged at epoch 0, every ``eval_every`` epochs
    and after the last update.
    """
    if not model.trainable:
        raise TrainingError("static predictors have no trainable parameters")
    tensors = GroupTensors(graph, game, rollout.alpha * graph.adjacency_matrix)
    obj = Objective(graph, game, model, rollout, cfg, tensors)
    params = model.params.copy()
    history: list[dict] = []
    try:
        first = obj.evaluate(params)
    except ad.NumericalError as exc:
        raise TrainingDiverged(0, history, str(exc)) from exc
    obj.scale_ce, obj.scale_upop = _scale(first["ce"]), _scale(first["upop"])
    opt = Adam(params.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    cur = obj.evaluate(params) if cfg.objective.startswith("multi") else first

    def log_row(epoch, stats):
        row = {"epoch": epoch, **{k: stats[k] for k in ("loss", "ce", "upop", "uc", "gamma")}}
        row.update(evaluate(model.with_params(params), graph, game, rollout, tensors))
        history.append(row)
        log.debug("epoch %d loss %.5g acc %.3f succ %.3f", epoch, row["loss"], row["accuracy"],
                  row["success_fraction"])

    for epoch in range(cfg.epochs):
        if epoch % cfg.eval_every == 0:
            log_row(epoch, cur)
        if not np.all(np.isfinite(cur["grad"])) or not np.isfinite(cur["loss"]):
            raise TrainingDiverged(epoch, history, "non-finite loss or gradient")
        params = opt.step(params, cur["grad"])
        try:
            cur = obj.evaluate(params)
        except ad.NumericalError as exc:
            raise TrainingDiverged(epoch + 1, history, str(exc)) from exc
    log_row(cfg.epochs, cur)
    trained = model.with_params(params)
    return TrainResult(trained, history, dict(history[-1]))


@dataclass
class ParetoPoint:
    label: str
    lam: float | None
    seed: int
    accuracy: float
    welfare: float
    welfare_normalized: float
    success_fraction: float
    dominated: bool = False
    checkpoint: str | None = None


def non_dominated(points: list[tuple[float, float]]) -> list[bool]:
    """Mask of points not dominated when maximising both coordinates."""
    keep = []
    for i, (x, y) in enumerate(points):
        dom = any((u >= x and v >= y) and (u > x or v > y) for j, (u, v) in enumerate(points) if j != i)
        keep.append(not dom)
    return keep


def run_seed(master: int, *indices: int) -> int:
    """Independent per-run seed derived from the master seed and run indices."""
    return int(np.random.SeedSequence([master, *indices]).generate_state(1)[0])


def pareto_sweep(graph: PopulationGraph, game: GameParams, make_model, rollout: RolloutConfig,
                 base: TrainConfig, lambdas, seeds, mgda_seeds=(), master_seed: int = 0,
                 on_result=None) -> list[ParetoPoint]:
    """Train one predictor per (lambda, seed) and per MGDA seed; flag dominated points.

    ``make_model(seed)`` returns a fresh untrained predictor. Model
    initialisation depends on the seed index only, so every lambda starts
    from the same weights for a given seed.
    """
    lambdas = list(lambdas)
    if not lambdas and not mgda_seeds:
        raise TrainingError("empty sweep grid")
    runs = [(f"lambda={lam:g}", lam, s, replace(base, objective="multi-scalarized", lam=lam))
            for lam in lambdas for s in seeds]
    runs += [("mgda", None, s, replace(base, objective="multi-mgda")) for s in mgda_seeds]
    points = []
    for label, lam, s, cfg in runs:
        init_seed = run_seed(master_seed, s)
        result = train(graph, game, make_model(init_seed), rollout, replace(cfg, seed=init_seed))
        f = result.final
        point = ParetoPoint(label, lam, s, f["accuracy"], f["welfare"], f["welfare_normalized"],
                            f["success_fraction"])
        if on_result is not None:
            point.checkpoint = on_result(point, result)
        points.append(point)
    mask = non_dominated([(p.accuracy, p.welfare) for p in points])
    for p, keep in zip(points, mask):
        p.dominated = not keep
    return points


def pareto_front(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points sorted by accuracy."""
    return sorted((p for p in points if not p.dominated), key=lambda p: (p.accuracy, -p.welfare))


def sweep_csv(points: list[ParetoPoint]) -> str:
    rows = [{k: v for k, v in asdict(p).items()} for p in points]
    return rows_to_csv(rows, ["label", "lam", "seed", "accuracy", "welfare", "welfare_normalized",
                              "success_fraction", "dominated", "checkpoint"])
