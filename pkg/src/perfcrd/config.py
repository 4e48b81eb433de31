"""Experiment configs and output provenance.

A config is one JSON file; only the seed, output directory and the
enumeration cap can be overridden from the command line. Every artifact
records the config hash, the content version of the package sources and
the master seed, so re-running a config reproduces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .game import GameError, GameParams
from .graph import GraphError, PopulationGraph, build_graph
from .predictors import ARCHITECTURES
from .rollout import RolloutConfig, RolloutError
from .training import TrainConfig, TrainingError

COMMANDS = ("analyze", "train", "sweep", "gradcheck", "rollout")
SECTIONS = ("name", "command", "graph", "game", "agents", "predictor", "train", "sweep", "analysis",
            "gradcheck", "rollout", "out", "seed")
DEFAULT_LAMBDAS = tuple(round(0.1 * k, 1) for k in range(11))


class ConfigError(ValueError):
    pass


def _sub(obj: dict, key: str) -> dict:
    v = obj.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return v


def _dataclass_kw(cls, section: dict, where: str, rename=None) -> dict:
    rename = rename or {}
    names = {f.name for f in fields(cls)}
    out = {}
    for k, v in section.items():
        k2 = rename.get(k, k)
        if k2 not in names:
            raise ConfigError(f"unknown key {k!r} in {where}")
        out[k2] = v
    return out


@dataclass
class ExperimentConfig:
    name: str
    graph: PopulationGraph
    game: GameParams
    rollout: RolloutConfig
    predictor: dict
    train: TrainConfig
    sweep: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    gradcheck: dict = field(default_factory=dict)
    replay: dict = field(default_factory=dict)
    command: str | None = None
    out: str | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, obj: dict, seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        extra = sorted(set(obj) - set(SECTIONS))
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        if "graph" not in obj:
            raise ConfigError("config needs a 'graph' section")
        raw = json.loads(json.dumps(obj))
        if seed is not None:
            raw["seed"] = int(seed)
        try:
            graph = build_graph(_sub(raw, "graph"))
            game = GameParams.from_json(_sub(raw, "game"))
            rollout = RolloutConfig(**_dataclass_kw(RolloutConfig, _sub(raw, "agents"), "agents"))
            train = TrainConfig(**_dataclass_kw(TrainConfig, _sub(raw, "train"), "train", {"lambda": "lam"}))
        except (GraphError, GameError, RolloutError, TrainingError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        predictor = _sub(raw, "predictor")
        arch = predictor.get("architecture", "mlp")
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
        command = raw.get("command")
        if command is not None and command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        sweep = _sub(raw, "sweep")
        lams = sweep.get("lambdas", DEFAULT_LAMBDAS)
        if any(not 0 <= float(v) <= 1 for v in lams):
            raise ConfigError("sweep lambdas must lie in [0, 1]")
        return cls(
            name=str(raw.get("name", "experiment")),
            graph=graph,
            game=game,
            rollout=rollout,
            predictor=predictor,
            train=train,
            sweep=sweep,
            analysis=_sub(raw, "analysis"),
            gradcheck=_sub(raw, "gradcheck"),
            replay=_sub(raw, "rollout"),
            command=command,
            out=raw.get("out"),
            seed=int(raw.get("seed", 0)),
            raw=raw,
        )

    @classmethod
    def load(cls, path, seed: int | None = None) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(obj, seed)

    @property
    def config_hash(self) -> str:
        """Hash of the resolved config; the output directory is not part of it."""
        body = {k: v for k, v in self.raw.items() if k != "out"}
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_VERSION = None


def content_version() -> str:
    """Git-style digest of the package sources (stable across installs)."""
    global _VERSION
    if _VERSION is None:
        h = hashlib.sha1()
        root = Path(__file__).parent
        for p in sorted(root.glob("*.py")):
            data = p.read_bytes()
            h.update(f"blob {p.name} {len(data)}\0".encode())
            h.update(data)
        _VERSION = h.hexdigest()[:12]
    return _VERSION


def provenance(cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "config": cfg.name, "config_hash": cfg.config_hash,
            "content_version": content_version(), "master_seed": cfg.seed}


def csv_header(meta: dict) -> str:
    """Comment line prepended to every CSV artifact."""
    return "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"


def write_csv(path: Path, meta: dict, body: str):
    path.write_text(csv_header(meta) + body)


def write_json(path: Path, meta: dict, payload: dict):
    path.write_text(json.dumps({"meta": meta, **payload}, indent=2, sort_keys=True) + "\n")
