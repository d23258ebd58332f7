"""Sweep harness: run grids of (env x optimizer x reset policy x K x seed)
cells under a fixed gradient budget, normalize scores against per-environment
anchors, aggregate with median/mean, and distill curves to area under the
curve.

Results persist as one JSON line per run in results.jsonl (written in
canonical grid order so identical sweeps produce byte-identical files) plus
an anchors.json with the normalization anchors per environment. Reruns skip
cells already recorded with a matching fingerprint.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import MdpSpec, episode_return, value_iteration
from .optim import OptimHyper
from .training import ResetPolicy, TrainConfig, run_training

CellKey = tuple[str, str, str, int, int]  # env, optimizer, policy, K, seed


class DegenerateEnvironment(ValueError):
    """Anchors coincide: the environment cannot tell policies apart."""


@dataclass(frozen=True)
class NormalizationAnchors:
    """Score anchors per environment: the uniform-random policy's mean return
    and the greedy-on-oracle reference return."""

    random_score: float
    reference_score: float


def normalize_score(score: float, anchors: NormalizationAnchors) -> float:
    """(score - random) / (reference - random)."""
    span = anchors.reference_score - anchors.random_score
    if span == 0.0:
        raise DegenerateEnvironment("reference and random scores coincide")
    return (score - anchors.random_score) / span


def compute_anchors(
    spec: MdpSpec,
    oracle_q: np.ndarray,
    n_episodes: int,
    rng: np.random.Generator,
    horizon: int = 50,
) -> NormalizationAnchors:
    """Monte-Carlo anchors: mean undiscounted return of the uniform policy
    and of the policy greedy in the oracle q-table."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    rand_returns = [
        episode_return(spec, lambda s: int(rng.integers(spec.n_actions)), horizon, rng)
        for _ in range(n_episodes)
    ]
    greedy_returns = [
        episode_return(spec, lambda s: int(np.argmax(oracle_q[s])), horizon, rng)
        for _ in range(n_episodes)
    ]
    anchors = NormalizationAnchors(
        random_score=float(np.mean(rand_returns)),
        reference_score=float(np.mean(greedy_returns)),
    )
    if anchors.reference_score == anchors.random_score:
        raise DegenerateEnvironment(
            f"random and reference scores both {anchors.random_score}"
        )
    return anchors


def aggregate(curves, stat: str = "median") -> np.ndarray:
    """Pointwise median or mean of equal-length curves."""
    if stat not in ("median", "mean"):
        raise ValueError(f"stat must be 'median' or 'mean', got {stat!r}")
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to aggregate")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have unequal lengths: {sorted(lengths)}")
    arr = np.asarray(curves, dtype=np.float64)
    return np.median(arr, axis=0) if stat == "median" else np.mean(arr, axis=0)


def area_under_curve(curve, normalized: bool = True) -> float:
    """Trapezoidal integral over the iteration index; when normalized, divided
    by the index span so a constant curve c has AUC c regardless of length."""
    arr = np.asarray(curve, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("curve must be a nonempty 1-D sequence")
    if arr.size == 1:
        return float(arr[0])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    area = float(trapezoid(arr))
    return area / (arr.size - 1) if normalized else area


@dataclass
class SweepConfig:
    """The grid plus the per-run base settings.

    budget is the fixed total K*T of gradient steps for every cell; it must
    be divisible by every K in k_values. Optimizers are (label, hyper) pairs
    so a grid may contain two differently-tuned instances of one kind.
    """

    envs: list[tuple[str, MdpSpec]]
    optimizers: list[tuple[str, OptimHyper]]
    policies: list[str]
    k_values: list[int]
    budget: int
    seeds: list[int]
    base: TrainConfig
    anchor_episodes: int = 200
    anchor_seed: int = 0
    auc_normalized: bool = True

    def __post_init__(self):
        if not (self.envs and self.optimizers and self.policies and self.k_values and self.seeds):
            raise ValueError("sweep grid has an empty axis")
        names = [n for n, _ in self.envs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate environment names: {names}")
        for k in self.k_values:
            if k < 1 or self.budget % k != 0:
                raise ValueError(
                    f"budget {self.budget} is not a positive multiple of K={k}"
                )


def sweep_cells(cfg: SweepConfig) -> list[CellKey]:
    """Canonical cell order; results are written in this order."""
    return [
        (env_name, opt_name, policy, k, seed)
        for env_name, _ in cfg.envs
        for opt_name, _ in cfg.optimizers
        for policy in cfg.policies
        for k in cfg.k_values
        for seed in cfg.seeds
    ]


def cell_config(cfg: SweepConfig, key: CellKey) -> TrainConfig:
    _, opt_name, policy, k, seed = key
    hyper = dict(cfg.optimizers)[opt_name]
    reset = ResetPolicy(kind=policy, probability=1.0 / k if policy == "random" else 0.0)
    return dataclasses.replace(
        cfg.base,
        K=k,
        T=cfg.budget // k,
        optimizer=hyper,
        reset=reset,
        seeds=(seed,),
    )


def _run_cell(payload) -> dict:
    key, config, spec = payload
    env_name, opt_name, policy, k, seed = key
    row = {
        "env": env_name,
        "optimizer": opt_name,
        "policy": policy,
        "K": k,
        "T": config.T,
        "seed": seed,
    }
    try:
        out = run_training(config, spec, seed=seed)
    except Exception as exc:  # recorded, sweep continues
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        status="ok",
        fingerprint=out.record.fingerprint,
        eval_returns=out.record.eval_returns,
        resets=out.record.resets_per_iteration,
        total_steps=out.record.total_steps,
    )
    return row


def _row_key(row: dict) -> CellKey:
    return (row["env"], row["optimizer"], row["policy"], int(row["K"]), int(row["seed"]))


@dataclass
class SweepResult:
    rows: dict[CellKey, dict]
    anchors: dict[str, NormalizationAnchors]

    @property
    def failed(self) -> dict[CellKey, str]:
        return {
            k: r.get("error", "unknown")
            for k, r in self.rows.items()
            if r["status"] != "ok"
        }


def compute_sweep_anchors(cfg: SweepConfig) -> dict[str, NormalizationAnchors]:
    anchors = {}
    for idx, (name, spec) in enumerate(cfg.envs):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.anchor_seed, spawn_key=(idx,))
        )
        oracle_q = value_iteration(spec)
        anchors[name] = compute_anchors(
            spec, oracle_q, cfg.anchor_episodes, rng, horizon=cfg.base.eval_horizon
        )
    return anchors


def run_sweep(
    cfg: SweepConfig,
    results_dir,
    workers: int = 1,
    log=None,
) -> SweepResult:
    """Execute every missing cell of the grid, appending rows to
    results.jsonl in canonical order. Failed cells are recorded and do not
    stop the sweep. Returns the merged result of all recorded rows."""
    results_dir = Path(results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    results_path = results_dir / "results.jsonl"
    anchors = compute_sweep_anchors(cfg)
    write_anchors(results_dir / "anchors.json", anchors)

    done: dict[CellKey, dict] = {}
    if results_path.exists():
        for row in _read_jsonl(results_path):
            if row["status"] == "ok":
                done[_row_key(row)] = row

    cells = sweep_cells(cfg)
    todo = [key for key in cells if key not in done]
    payloads = [(key, cell_config(cfg, key), dict(cfg.envs)[key[0]]) for key in todo]

    rows = dict(done)
    finished = 0
    with open(results_path, "a") as fh:
        def record(row: dict):
            nonlocal finished
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.flush()
            rows[_row_key(row)] = row
            finished += 1
            if log is not None:
                log(f"[{finished}/{len(todo)}] "
                    f"env={row['env']} opt={row['optimizer']} policy={row['policy']} "
                    f"K={row['K']} seed={row['seed']} {row['status']}")

        if workers <= 1:
            for payload in payloads:
                record(_run_cell(payload))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_cell, p) for p in payloads]
                for fut in futures:  # submission order keeps the file canonical
                    record(fut.result())
    return SweepResult(rows=rows, anchors=anchors)


def _read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_anchors(path, anchors: dict[str, NormalizationAnchors]) -> None:
    doc = {
        name: {"random_score": a.random_score, "reference_score": a.reference_score}
        for name, a in anchors.items()
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_anchors(path) -> dict[str, NormalizationAnchors]:
    doc = json.loads(Path(path).read_text())
    return {
        name: NormalizationAnchors(d["random_score"], d["reference_score"])
        for name, d in doc.items()
    }


def load_results(results_dir) -> SweepResult:
    """Rebuild a SweepResult from a results directory (last row wins per
    cell, so amended reruns supersede stale rows)."""
    results_dir = Path(results_dir)
    results_path = results_dir / "results.jsonl"
    if not results_path.exists():
        raise FileNotFoundError(f"no results.jsonl under {results_dir}")
    rows = {}
    for row in _read_jsonl(results_path):
        rows[_row_key(row)] = row
    anchors_path = results_dir / "anchors.json"
    anchors = read_anchors(anchors_path) if anchors_path.exists() else {}
    return SweepResult(rows=rows, anchors=anchors)


def normalized_curve(result: SweepResult, key: CellKey) -> list[float]:
    row = result.rows[key]
    anchors = result.anchors[key[0]]
    return [normalize_score(x, anchors) for x in row["eval_returns"]]


def _ok_keys(result: SweepResult):
    return [k for k, r in sorted(result.rows.items()) if r["status"] == "ok"]


def group_aggregate(
    result: SweepResult, optimizer: str, policy: str, k: int, stat: str = "median"
) -> np.ndarray:
    """Pointwise aggregate over every (env, seed) normalized curve of one
    (optimizer, policy, K) cell group."""
    curves = [
        normalized_curve(result, key)
        for key in _ok_keys(result)
        if key[1] == optimizer and key[2] == policy and key[3] == k
    ]
    return aggregate(curves, stat)


def auc_table(
    result: SweepResult, stat: str = "median", normalized_auc: bool = True
) -> dict[tuple[str, str, int], float]:
    """AUC of the aggregate normalized curve per (optimizer, policy, K)."""
    groups = sorted({(k[1], k[2], k[3]) for k in _ok_keys(result)})
    table = {}
    for opt, policy, k in groups:
        curve = group_aggregate(result, opt, policy, k, stat)
        table[(opt, policy, k)] = area_under_curve(curve, normalized=normalized_auc)
    return table


def format_auc_table(table: dict[tuple[str, str, int], float]) -> str:
    """Human-readable table per optimizer: rows are reset policies, columns K."""
    lines = []
    optimizers = sorted({opt for opt, _, _ in table})
    for opt in optimizers:
        ks = sorted({k for o, _, k in table if o == opt})
        policies = sorted({p for o, p, _ in table if o == opt})
        lines.append(f"median AUC (normalized scores), optimizer={opt}")
        header = ["policy/K"] + [str(k) for k in ks]
        rows = [header]
        for policy in policies:
            rows.append(
                [policy]
                + [
                    f"{table[(opt, policy, k)]:.6g}" if (opt, policy, k) in table else "-"
                    for k in ks
                ]
            )
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        for r in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _source_fingerprint(result: SweepResult) -> str:
    parts = sorted(
        r.get("fingerprint", "") + str(k) for k, r in result.rows.items()
    )
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def write_curves_csv(result: SweepResult, path) -> None:
    """Long-format per-iteration scores. Columns: env, optimizer, policy, K,
    seed, iteration, raw, normalized. The first line is a comment carrying a
    fingerprint derived from all source runs."""
    lines = [f"# source_fingerprint={_source_fingerprint(result)}"]
    lines.append("env,optimizer,policy,K,seed,iteration,raw,normalized")
    for key in _ok_keys(result):
        env, opt, policy, k, seed = key
        row = result.rows[key]
        norm = normalized_curve(result, key)
        for it, (raw, ns) in enumerate(zip(row["eval_returns"], norm)):
            lines.append(f"{env},{opt},{policy},{k},{seed},{it},{raw!r},{ns!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_auc_csv(result: SweepResult, path, normalized_auc: bool = True) -> None:
    """Aggregate AUC per cell group. Columns: optimizer, policy, K,
    median_auc, mean_auc, n_runs."""
    med = auc_table(result, "median", normalized_auc)
    mean = auc_table(result, "mean", normalized_auc)
    counts = {}
    for key in _ok_keys(result):
        counts[key[1:4]] = counts.get(key[1:4], 0) + 1
    lines = [f"# source_fingerprint={_source_fingerprint(result)}"]
    lines.append("optimizer,policy,K,median_auc,mean_auc,n_runs")
    for group in sorted(med):
        opt, policy, k = group
        lines.append(
            f"{opt},{policy},{k},{med[group]!r},{mean[group]!r},{counts[group]}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
