"""Declarative JSON configs with dotted-path overrides.

A config file is a plain JSON document; `--set a.b.c=value` overrides nest
into it (values parse as JSON, falling back to a bare string). The effective
post-override document is fingerprinted and the fingerprint embedded in every
output artifact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .envs import MdpSpec, make_garnet, make_gridworld, mdp_from_json
from .harness import SweepConfig
from .optim import OptimHyper
from .training import ResetPolicy, TrainConfig


class ConfigError(ValueError):
    """Malformed configuration document or override."""


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, assignments: list[str]) -> dict:
    """Apply KEY=VALUE overrides with dotted paths, returning a new document."""
    doc = json.loads(json.dumps(doc))  # deep copy
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad override path {key!r}")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-object value")
        node[parts[-1]] = parse_override_value(raw)
    return doc


def fingerprint(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_env(env_cfg: dict) -> tuple[str, MdpSpec]:
    """Build an environment from its config block. Returns (name, spec)."""
    try:
        kind = env_cfg["kind"]
    except KeyError:
        raise ConfigError("env config needs a 'kind'") from None
    feats = env_cfg.get("features", {})
    fkind = feats.get("kind", "one_hot")
    fdim = int(feats.get("dim", 0))
    try:
        if kind == "gridworld":
            width, height = int(env_cfg["width"]), int(env_cfg["height"])
            spec = make_gridworld(
                width,
                height,
                goal=tuple(env_cfg["goal"]),
                step_penalty=float(env_cfg.get("step_penalty", -0.05)),
                seed=int(env_cfg.get("seed", 0)),
                gamma=float(env_cfg.get("gamma", 0.9)),
                start=tuple(env_cfg.get("start", (0, 0))),
                feature_kind=fkind,
                feature_dim=fdim,
            )
            name = env_cfg.get("name", f"gridworld_{width}x{height}")
        elif kind == "garnet":
            n, seed = int(env_cfg["n_states"]), int(env_cfg.get("seed", 0))
            spec = make_garnet(
                n,
                int(env_cfg.get("n_actions", 4)),
                int(env_cfg.get("branching", 3)),
                seed=seed,
                gamma=float(env_cfg.get("gamma", 0.9)),
                feature_kind=fkind,
                feature_dim=fdim,
            )
            name = env_cfg.get("name", f"garnet_{n}s_{seed}")
        elif kind == "file":
            path = Path(env_cfg["path"])
            spec = mdp_from_json(json.loads(path.read_text()))
            name = env_cfg.get("name", path.stem)
        else:
            raise ConfigError(f"unknown env kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad env config: {exc}") from exc
    return name, spec


def build_optimizer(opt_cfg: dict) -> OptimHyper:
    known = {"alpha", "beta1", "beta2", "epsilon", "kind", "prox_coeff", "radam_threshold"}
    fields = {k: v for k, v in opt_cfg.items() if k in known}
    unknown = set(opt_cfg) - known - {"name"}
    if unknown:
        raise ConfigError(f"unknown optimizer fields: {sorted(unknown)}")
    return OptimHyper(**fields)


def build_reset(reset_cfg: dict, k: int) -> ResetPolicy:
    kind = reset_cfg.get("kind", "never")
    prob = reset_cfg.get("probability")
    if kind == "random" and prob is None:
        prob = 1.0 / k
    return ResetPolicy(kind=kind, probability=float(prob) if prob else 0.0)


_TRAIN_KEYS = {
    "K", "T", "batch_size", "env_steps_per_grad", "eval_episodes", "eval_horizon",
    "prefill_steps", "epsilon_greedy", "buffer_capacity", "gamma",
    "exact_minimization", "save_checkpoint",
}


def _train_fields(doc: dict) -> dict:
    train = doc.get("train", {})
    unknown = set(train) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train fields: {sorted(unknown)}")
    net = doc.get("net", {})
    fields = dict(train)
    fields["hidden_widths"] = tuple(net.get("hidden", ()))
    fields["activation"] = net.get("activation", "tanh")
    fields["optimizer"] = build_optimizer(doc.get("optimizer", {}))
    if "seeds" in doc:
        fields["seeds"] = tuple(doc["seeds"])
    elif "seed" in doc:
        fields["seeds"] = (int(doc["seed"]),)
    return fields


def build_train(doc: dict) -> tuple[TrainConfig, str, MdpSpec]:
    """Assemble a TrainConfig plus its environment from a train document."""
    if "env" not in doc:
        raise ConfigError("train config needs an 'env' block")
    name, spec = build_env(doc["env"])
    fields = _train_fields(doc)
    if "K" not in fields or "T" not in fields:
        raise ConfigError("train config needs train.K and train.T")
    try:
        fields["reset"] = build_reset(doc.get("reset", {}), int(fields["K"]))
        config = TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    return config, name, spec


def build_sweep(doc: dict) -> SweepConfig:
    """Assemble a SweepConfig from a sweep document."""
    for required in ("envs", "K", "budget", "seeds"):
        if required not in doc:
            raise ConfigError(f"sweep config needs {required!r}")
    if not doc["envs"]:
        raise ConfigError("sweep has an empty env list")
    envs = [build_env(e) for e in doc["envs"]]
    opt_cfgs = doc.get("optimizers", [doc.get("optimizer", {"kind": "adam"})])
    optimizers = []
    for cfg in opt_cfgs:
        hyper = build_optimizer(cfg)
        optimizers.append((cfg.get("name", hyper.kind), hyper))
    if len({n for n, _ in optimizers}) != len(optimizers):
        raise ConfigError("optimizer names must be unique; add explicit 'name' fields")
    policies = doc.get("policies", ["never", "per_iteration"])

    base_doc = dict(doc.get("base", {}))
    base_doc.setdefault("train", {})
    fields = _train_fields(base_doc)
    fields.pop("K", None), fields.pop("T", None)
    anchors = doc.get("anchors", {})
    try:
        base = TrainConfig(K=1, T=1, **fields)
        return SweepConfig(
            envs=envs,
            optimizers=optimizers,
            policies=list(policies),
            k_values=[int(k) for k in doc["K"]],
            budget=int(doc["budget"]),
            seeds=[int(s) for s in doc["seeds"]],
            base=base,
            anchor_episodes=int(anchors.get("episodes", 200)),
            anchor_seed=int(anchors.get("seed", 0)),
            auc_normalized=bool(doc.get("auc_normalized", True)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sweep config: {exc}") from exc
