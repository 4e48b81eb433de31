"""perfcrd command line: analyze | train | sweep | gradcheck | rollout.

Exit codes: 0 ok, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ConfigError, ExperimentConfig, provenance, write_csv, write_json
from .decomposition import decompose_uc_gradient, decompose_upop_gradient
from .graph import blocking_hubs
from .predictors import PredictorError, PredictorModel, build_predictor
from .prophecy import (DEFAULT_CAP, EnumerationCapError, best_prediction_for_welfare, check_theorem1,
                       enumerate_prophecies, full_success_attainable, hub_condition_holds)
from .rollout import metrics, run_hard, run_soft
from .training import (HISTORY_FIELDS, TrainingDiverged, loss_ce, pareto_front, pareto_sweep, rows_to_csv,
                       sweep_csv, train, utility_uc, utility_upop)

log = logging.getLogger("perfcrd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericFailure(RuntimeError):
    pass


def _bits(b) -> str:
    return "".join(map(str, b))


def _report(r) -> dict | None:
    if r is None:
        return None
    return {"prediction": _bits(r.prediction), "induced": _bits(r.induced_actions), "welfare": r.welfare,
            "accuracy": r.accuracy, "full_success": r.full_success, "self_fulfilling": r.self_fulfilling}


def cmd_analyze(cfg: ExperimentConfig, out: Path, force: bool = False) -> dict:
    g, game = cfg.graph, cfg.game
    cap = int(cfg.analysis.get("cap", DEFAULT_CAP))
    if force:
        cap = max(cap, g.node_count)
    table = enumerate_prophecies(g, game, cap)
    meta = provenance(cfg, "analyze")
    rows = [r.as_row() for r in table]
    write_csv(out / "prophecies.csv", meta, rows_to_csv(rows, list(rows[0])))
    best_any = best_prediction_for_welfare(g, game, False, cap, table)
    best_sf = best_prediction_for_welfare(g, game, True, cap, table)
    att = full_success_attainable(g, game, cap, table)
    thm = check_theorem1(g, game)
    sf = sorted(_bits(b) for b in table.self_fulfilling_set())
    summary = {
        **table.summary(),
        "self_fulfilling_set": sf if len(sf) <= 1024 else None,
        "best_welfare": _report(best_any),
        "best_self_fulfilling_welfare": _report(best_sf),
        # no prediction is both perfectly accurate and welfare-maximal
        "trade_off": best_sf is None or best_sf.welfare < best_any.welfare,
        "full_success_attainable": att.attainable,
        "full_success_witness": _bits(att.witness) if att.witness else None,
        "self_fulfilling_full_success": bool(best_sf is not None and best_sf.full_success),
        "theorem1": {"condition": thm.condition, "verified": thm.verified,
                     "witness": _bits(thm.witness) if thm.witness else None},
        "hub_condition": hub_condition_holds(g, game.T),
        "blocking_hubs": blocking_hubs(g),
    }
    write_json(out / "summary.json", meta, {"summary": summary})
    log.info("%d self-fulfilling of %d; full success attainable: %s", summary["self_fulfilling"],
             summary["predictions"], att.attainable)
    return summary


def _model(cfg: ExperimentConfig, seed: int) -> PredictorModel:
    return build_predictor(cfg.predictor, cfg.graph, seed)


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    meta = provenance(cfg, "train")
    model = _model(cfg, cfg.seed)
    try:
        result = train(cfg.graph, cfg.game, model, cfg.rollout, cfg.train)
    except TrainingDiverged as exc:
        write_csv(out / "history.csv", meta, rows_to_csv(exc.history, HISTORY_FIELDS))
        write_json(out / "result.json", meta, {"status": "diverged", "epoch": exc.epoch, "error": str(exc)})
        raise NumericFailure(str(exc)) from exc
    write_csv(out / "history.csv", meta, rows_to_csv(result.history, HISTORY_FIELDS))
    write_csv(out / "trace.csv", meta, run_hard(cfg.graph, cfg.game, result.model, cfg.rollout).to_csv())
    (out / "checkpoint.json").write_text(result.model.dumps())
    write_json(out / "result.json", meta, {"status": "ok", "final": result.final, "checkpoint": "checkpoint.json"})
    log.info("final accuracy %.3f, success %.3f, normalised welfare %.4f", result.final["accuracy"],
             result.final["success_fraction"], result.final["welfare_normalized"])
    return result.final


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> list:
    meta = provenance(cfg, "sweep")
    sw = cfg.sweep
    lambdas = [float(v) for v in sw.get("lambdas", [round(0.1 * k, 1) for k in range(11)])]
    seeds = [int(s) for s in sw.get("seeds", [0, 1, 2])]
    mgda = [int(s) for s in sw.get("mgda_seeds", seeds)]
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)

    def save(point, result):
        name = f"{point.label.replace('=', '')}_seed{point.seed}.json"
        (ckdir / name).write_text(result.model.dumps())
        log.info("%s seed %d: accuracy %.3f welfare %.3f", point.label, point.seed, point.accuracy, point.welfare)
        return f"checkpoints/{name}"

    try:
        points = pareto_sweep(cfg.graph, cfg.game, lambda s: _model(cfg, s), cfg.rollout, cfg.train, lambdas,
                              seeds, mgda, cfg.seed, save)
    except TrainingDiverged as exc:
        raise NumericFailure(str(exc)) from exc
    write_csv(out / "sweep.csv", meta, sweep_csv(points))
    front = pareto_front(points)
    write_json(out / "sweep.json", meta, {
        "points": [p.__dict__ for p in points],
        "front": [{"label": p.label, "seed": p.seed, "accuracy": p.accuracy, "welfare": p.welfare} for p in front],
    })
    return points


LOSSES = {
    "ce": lambda tr, game: loss_ce(tr, detach_targets=False),
    "uc": lambda tr, game: utility_uc(tr),
    "upop": utility_upop,
}


def cmd_gradcheck(cfg: ExperimentConfig, out: Path) -> dict:
    meta = provenance(cfg, "gradcheck")
    gc = cfg.gradcheck
    g, game, ro = cfg.graph, cfg.game, cfg.rollout
    model = _model(cfg, cfg.seed)
    if not model.trainable:
        raise ConfigError("gradcheck needs a trainable predictor")
    step, tol = float(gc.get("step", 1e-5)), float(gc.get("tolerance", 1e-4))
    floor = float(gc.get("floor", 1e-8))
    dec_tol = float(gc.get("decomposition_tolerance", 1e-10))
    coords = None
    if gc.get("coords") is not None:
        rng = np.random.default_rng(cfg.seed)
        k = min(int(gc["coords"]), model.params.size)
        coords = sorted(rng.choice(model.params.size, size=k, replace=False).tolist())
    corrupt = gc.get("corrupt")
    ctx = ad.corrupted_primitive(corrupt["primitive"], float(corrupt.get("factor", 1.5))) if corrupt else None
    report: dict = {"losses": {}, "passed": True}
    if ctx is not None:
        ctx.__enter__()
    try:
        for name in gc.get("losses", ["ce", "uc", "upop"]):
            if name not in LOSSES:
                raise ConfigError(f"unknown gradcheck loss {name!r}")
            fn = lambda p, L=LOSSES[name]: L(run_soft(g, game, model, ro, p), game)
            r = ad.finite_diff_check(fn, model.params, step, tol, coords, floor)
            report["losses"][name] = {"passed": r.passed, "max_rel_error": r.max_rel_error,
                                      "max_abs_error": r.max_abs_error, "failing": r.failing}
            report["passed"] &= r.passed
        tape = ad.Tape()
        phi = tape.leaf(model.params)
        tr = run_soft(g, game, model, ro, phi)
        dec = decompose_uc_gradient(tr, game, phi, per_pair=bool(gc.get("per_pair", True)))
        (total,) = tape.backward([(utility_uc(tr), 1.0)], [phi])
        upop_dec = decompose_upop_gradient(tr, game, phi)
        (total_pop,) = tape.backward([(utility_upop(tr, game), 1.0)], [phi])
    finally:
        if ctx is not None:
            ctx.__exit__(None, None, None)
    err = float(np.abs(dec.total - total).max())
    err_pop = float(np.abs(upop_dec.total - total_pop).max())
    report["decomposition"] = {
        "uc_max_abs_error": err, "upop_max_abs_error": err_pop, "tolerance": dec_tol,
        "passed": err <= dec_tol and err_pop <= dec_tol,
        "accuracy_norm": float(np.linalg.norm(dec.accuracy)), "steering_norm": float(np.linalg.norm(dec.steering)),
    }
    report["passed"] &= report["decomposition"]["passed"]
    if dec.accuracy_per is not None:
        write_csv(out / "decomposition.csv", meta, dec.to_csv())
    write_json(out / "gradcheck.json", meta, {"report": report, "coords": coords})
    if not report["passed"]:
        parts = []
        for k, v in report["losses"].items():
            if v["failing"]:
                more = f" (+{len(v['failing']) - 20} more)" if len(v["failing"]) > 20 else ""
                parts.append(f"{k}: {v['failing'][:20]}{more}")
        if not report["decomposition"]["passed"]:
            parts.append("decomposition identity")
        raise NumericFailure("gradient check failed; failing coordinates " + "; ".join(parts))
    return report


def cmd_rollout(cfg: ExperimentConfig, out: Path) -> dict:
    meta = provenance(cfg, "rollout")
    rp = cfg.replay
    if "checkpoint" in rp:
        model = PredictorModel.from_json(json.loads(Path(rp["checkpoint"]).read_text()))
    elif "prediction" in rp:
        bits = [int(ch) for ch in str(rp["prediction"])]
        model = PredictorModel.static(cfg.graph, bits)
    else:
        model = _model(cfg, cfg.seed)
    trace = run_hard(cfg.graph, cfg.game, model, cfg.rollout)
    m = metrics(trace, cfg.game, cfg.graph).as_dict()
    write_csv(out / "trace.csv", meta, trace.to_csv())
    write_json(out / "metrics.json", meta, {"metrics": m})
    return m


COMMAND_FNS = {"analyze": cmd_analyze, "train": cmd_train, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
               "rollout": cmd_rollout}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfcrd", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMAND_FNS))
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", help="output directory (default: the config's 'out' or runs/<name>)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--force", action="store_true", help="allow enumeration above the node cap")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(command: str, cfg: ExperimentConfig, out: Path, force: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    if command == "analyze":
        return cmd_analyze(cfg, out, force)
    return COMMAND_FNS[command](cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        out = Path(args.out or cfg.out or f"runs/{cfg.name}")
        run(args.command, cfg, out, args.force)
    except (ConfigError, EnumerationCapError, PredictorError) as exc:
        print(f"perfcrd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, ad.NumericalError, FloatingPointError) as exc:
        print(f"perfcrd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
