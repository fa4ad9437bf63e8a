"""JSON run configuration and the builders that turn it into live objects.

Example::

    {
      "seed": 0,
      "max_steps": 6,
      "epsilon": 0.0,
      "parallelism": 2,
      "step_retries": 2,
      "margins": {"delta_lp": 0.05, "margin_lp": 0.0},
      "backends": {
        "main": {"type": "http", "base_url": "https://api.example.com/v1",
                 "model": "some-model", "api_key_env": "OPENAI_API_KEY"},
        "fixture": {"type": "replay", "path": "replay.json"}
      },
      "generators": [
        {"name": "oog", "role": "OOG", "backend": "main", "temperature": 0.7},
        {"name": "fvr", "role": "FVR", "backend": "main"},
        {"name": "reg-lp", "role": "REG", "backend": "main", "feedback": ["LP"]}
      ],
      "judge": {"backend": "main", "votes_per_aspect": 1, "temperature": 0.0},
      "prover": {"type": "command", "command": "lake env lean {file}", "timeout": 120},
      "adaptive_budget": {"total": 3, "floor": 1},
      "simulation": {"noise_sigma": 0.05}
    }

Credentials are never stored in the file; HTTP backends read the key from
the environment variable named by ``api_key_env`` at request time.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .backends import ChatBackend, HTTPChatBackend, ReplayBackend
from .generators import GeneratorSpec
from .judges import FusionWeights, JudgeEnsemble
from .model import MarginConfig, Role
from .process import AdaptiveBudget, MonotonicProcess, ProcessConfig
from .prover import DEFAULT_BLOCKLIST, DEFAULT_TIMEOUT, CommandProver, MockProver, ProverGate


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "max_steps": 6,
    "epsilon": 0.0,
    "parallelism": 1,
    "step_retries": 2,
    "workers_per_theorem": 1,
    "margins": {},
    "backends": {},
    "generators": [],
    "judge": {},
    "prover": {"type": "mock"},
}


def load_config(path: str | Path | None) -> dict[str, Any]:
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg.update(data)
    cfg["_base_dir"] = str(p.parent.resolve())
    return cfg


def apply_overrides(cfg: dict[str, Any], pairs: list[str]) -> dict[str, Any]:
    """Apply ``dotted.key=json-value`` overrides (plain strings allowed)."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-object at {key!r}")
        node[parts[-1]] = value
    return cfg


def public_config(cfg: Mapping[str, Any]) -> dict[str, Any]:
    """The config as recorded in artifacts (internal keys dropped)."""
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _resolve(cfg: Mapping[str, Any], path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and "_base_dir" in cfg:
        p = Path(cfg["_base_dir"]) / p
    return p


def build_backend(cfg: Mapping[str, Any], spec: Mapping[str, Any]) -> ChatBackend:
    kind = spec.get("type")
    if kind == "http":
        try:
            return HTTPChatBackend(
                spec["base_url"], spec["model"],
                api_key_env=spec.get("api_key_env", "OPENAI_API_KEY"),
                timeout=float(spec.get("timeout", 120.0)),
                attempts=int(spec.get("attempts", 3)),
                base_delay=float(spec.get("base_delay", 0.5)),
                send_seed=bool(spec.get("send_seed", True)),
                send_metadata=bool(spec.get("send_metadata", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"http backend needs {exc.args[0]!r}") from exc
    if kind == "replay":
        try:
            return ReplayBackend.from_file(_resolve(cfg, spec["path"]))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load replay backend: {exc}") from exc
    raise ConfigError(f"unknown backend type {kind!r}")


def build_prover(cfg: Mapping[str, Any]) -> ProverGate:
    spec = cfg.get("prover") or {"type": "mock"}
    kind = spec.get("type", "mock")
    if kind == "command":
        if "command" not in spec:
            raise ConfigError("command prover needs 'command'")
        backend = CommandProver(spec["command"], diagnostic_format=spec.get("format", "text"),
                                cwd=spec.get("cwd"))
    elif kind == "mock":
        backend = MockProver.from_dict(spec)
    else:
        raise ConfigError(f"unknown prover type {kind!r}")
    return ProverGate(
        backend,
        timeout=float(spec.get("timeout", DEFAULT_TIMEOUT)),
        blocklist=tuple(spec.get("blocklist", DEFAULT_BLOCKLIST)),
        max_parallel=int(spec.get("max_parallel", 4)),
    )


@dataclass
class Built:
    process: MonotonicProcess
    parallelism: int


def build_process(cfg: Mapping[str, Any]) -> Built:
    backends: dict[str, ChatBackend] = {}

    def backend(name: str) -> ChatBackend:
        if name not in backends:
            spec = cfg.get("backends", {}).get(name)
            if spec is None:
                raise ConfigError(f"unknown backend {name!r}")
            backends[name] = build_backend(cfg, spec)
        return backends[name]

    specs: dict[Role, list[GeneratorSpec]] = {Role.OOG: [], Role.FVR: [], Role.REG: []}
    for g in cfg.get("generators", []):
        try:
            role = Role(g["role"])
            specs[role].append(GeneratorSpec(
                g["name"], role, backend(g["backend"]),
                tuple(g.get("feedback", ())) if role is Role.REG else (),
                temperature=float(g.get("temperature", 0.7)),
                max_tokens=g.get("max_tokens"),
                samples=int(g.get("samples", 1)),
                max_workers=int(g.get("max_workers", 1)),
            ))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad generator entry {g!r}: {exc}") from exc

    j = cfg.get("judge") or {}
    if "backend" not in j:
        raise ConfigError("judge.backend is required")
    try:
        weights = FusionWeights.from_mapping(j["weights"]) if "weights" in j else None
        judge = JudgeEnsemble(
            backend(j["backend"]), weights, int(j.get("votes_per_aspect", 1)),
            temperature=float(j.get("temperature", 0.0)), max_tokens=j.get("max_tokens"),
            parse_retries=int(j.get("parse_retries", 2)), max_workers=int(j.get("max_workers", 1)),
        )
        margins = MarginConfig(**cfg.get("margins", {}))
        ab = cfg.get("adaptive_budget")
        adaptive = None
        if ab:
            adaptive = AdaptiveBudget(int(ab["total"]), int(ab.get("floor", 1)),
                                      tuple(ab.get("dimension_weights", (1.0, 1.0, 1.0, 1.0))))
        pc = ProcessConfig(
            tuple(specs[Role.OOG]), tuple(specs[Role.FVR]), tuple(specs[Role.REG]),
            max_steps=int(cfg["max_steps"]), epsilon=float(cfg["epsilon"]), margins=margins,
            adaptive_budget=adaptive, step_retries=int(cfg["step_retries"]),
            max_workers=int(cfg.get("workers_per_theorem", 1)), seed=cfg.get("seed"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return Built(MonotonicProcess(pc, build_prover(cfg), judge), int(cfg.get("parallelism", 1)))
