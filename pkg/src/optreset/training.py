"""Iterative training driver: T outer iterations of K inner gradient steps
against a frozen target network, a hard target sync after each iteration,
and three optimizer-reset policies (never, per-iteration, random).

RNG discipline: parameter init, environment interaction, batch sampling,
reset coin flips, and evaluation each draw from their own seeded stream, so
runs that differ only in reset policy replay identical random draws.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets
from .envs import MdpSpec, env_step, episode_return, episode_start, state_features
from .optim import (
    OptimHyper,
    OptimizerState,
    StepReport,
    apply_proximal,
    fresh_state,
    optimizer_step,
    reset_state,
)
from .replay import AgentParams, ReplayBuffer, Transition, sample_batch, sync_target

RESET_KINDS = ("never", "per_iteration", "random")


@dataclass(frozen=True)
class ResetPolicy:
    """When to zero the optimizer state inside an iteration of K steps."""

    kind: str = "never"
    probability: float = 0.0  # Bernoulli rate for kind == "random"

    def __post_init__(self):
        if self.kind not in RESET_KINDS:
            raise ValueError(f"unknown reset policy {self.kind!r}")
        if self.kind == "random" and not 0.0 < self.probability <= 1.0:
            raise ValueError(
                f"random reset needs probability in (0, 1], got {self.probability}"
            )


def decide_reset(policy: ResetPolicy, k: int, rng: np.random.Generator) -> bool:
    """True iff the optimizer state should be reset before inner step k."""
    if policy.kind == "per_iteration":
        return k == 0
    if policy.kind == "random":
        return bool(rng.random() < policy.probability)
    return False


@dataclass(frozen=True)
class TrainConfig:
    """Everything one run needs besides the environment itself.

    K*T is the total gradient budget; sweeps hold it fixed while varying K.
    gamma None means "use the environment's own discount".
    """

    K: int
    T: int
    batch_size: int = 16
    env_steps_per_grad: int = 1
    eval_episodes: int = 2
    eval_horizon: int = 50
    seeds: tuple[int, ...] = (0,)
    optimizer: OptimHyper = OptimHyper()
    reset: ResetPolicy = ResetPolicy()
    gamma: float | None = None
    prefill_steps: int = 100
    epsilon_greedy: float = 0.1
    buffer_capacity: int = 10_000
    hidden_widths: tuple[int, ...] = ()
    activation: str = "tanh"
    exact_minimization: bool = False
    save_checkpoint: bool = False

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise ValueError(f"K and T must be >= 1, got K={self.K}, T={self.T}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.env_steps_per_grad < 0:
            raise ValueError("env_steps_per_grad must be >= 0")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not 0.0 <= self.epsilon_greedy <= 1.0:
            raise ValueError(f"epsilon_greedy must be in [0, 1], got {self.epsilon_greedy}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


@dataclass
class RunRecord:
    """Per-run results: one eval score and one reset count per iteration."""

    eval_returns: list[float]
    resets_per_iteration: list[int]
    fingerprint: str
    seed: int
    wall_clock_sec: float
    total_steps: int


@dataclass
class IterationStats:
    reports: list[StepReport] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    resets: int = 0


@dataclass
class RngStreams:
    init_seed: int
    env: np.random.Generator
    batch: np.random.Generator
    reset: np.random.Generator
    eval: np.random.Generator


def make_streams(seed: int) -> RngStreams:
    def gen(k: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))

    init_seed = int(
        np.random.SeedSequence(entropy=seed, spawn_key=(0,)).generate_state(1)[0]
    )
    return RngStreams(
        init_seed=init_seed, env=gen(1), batch=gen(2), reset=gen(3), eval=gen(4)
    )


def train_fingerprint(config: TrainConfig, spec: MdpSpec) -> str:
    """Stable hash of the effective configuration plus the environment."""
    from .envs import mdp_to_json

    doc = {"config": asdict(config), "env": mdp_to_json(spec)}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _greedy_action(mlp: nets.MlpDef, params: np.ndarray, feats: np.ndarray) -> int:
    return int(np.argmax(nets.forward(mlp, params, feats)))


def _collect_step(
    spec: MdpSpec,
    mlp: nets.MlpDef,
    w: np.ndarray,
    buffer: ReplayBuffer,
    env_state: int,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """One epsilon-greedy environment step pushed into the buffer. Returns the
    new environment state (restarting the episode on terminal)."""
    if env_state in spec.terminal:
        env_state = episode_start(spec, rng)
    feats = state_features(spec, env_state)
    if rng.random() < epsilon:
        a = int(rng.integers(spec.n_actions))
    else:
        a = _greedy_action(mlp, w, feats)
    nxt, r, term = env_step(spec, env_state, a, rng)
    buffer.push(Transition(feats, a, r, state_features(spec, nxt), term))
    return episode_start(spec, rng) if term else nxt


def run_inner_iteration(
    spec: MdpSpec,
    mlp: nets.MlpDef,
    agent: AgentParams,
    buffer: ReplayBuffer,
    opt_state: OptimizerState,
    config: TrainConfig,
    streams: RngStreams,
    env_state: int,
) -> tuple[AgentParams, OptimizerState, int, IterationStats]:
    """K gradient steps on the loss defined by the frozen target parameters.

    The online parameters start from a copy of the target parameters; the
    reset policy is consulted before every step (a per-iteration policy fires
    only at k == 0). Returns the updated agent, optimizer state, environment
    state, and per-step stats.
    """
    if len(buffer) == 0 and config.env_steps_per_grad == 0:
        raise ValueError("empty buffer and no environment interaction configured")
    gamma = config.gamma if config.gamma is not None else spec.gamma
    w = agent.theta.copy()
    stats = IterationStats()
    hyper = config.optimizer
    for k in range(config.K):
        if decide_reset(config.reset, k, streams.reset):
            opt_state = reset_state(opt_state)
            stats.resets += 1
        for _ in range(config.env_steps_per_grad):
            env_state = _collect_step(
                spec, mlp, w, buffer, env_state, config.epsilon_greedy, streams.env
            )
        batch = sample_batch(buffer, config.batch_size, streams.batch)
        loss, grad = nets.grad_td_loss(mlp, w, agent.theta, batch, gamma)
        if hyper.prox_coeff > 0:
            grad = apply_proximal(grad, w, agent.theta, hyper.prox_coeff)
        w, opt_state, report = optimizer_step(w, grad, opt_state, hyper)
        stats.reports.append(report)
        stats.losses.append(loss)
    return AgentParams(theta=agent.theta, w=w), opt_state, env_state, stats


def build_mlp(spec: MdpSpec, config: TrainConfig, init_seed: int) -> nets.MlpDef:
    widths = (spec.feature_dim, *config.hidden_widths, spec.n_actions)
    return nets.MlpDef(widths, activation=config.activation, seed=init_seed)


def evaluate_greedy(
    spec: MdpSpec,
    mlp: nets.MlpDef,
    params: np.ndarray,
    episodes: int,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Mean undiscounted return of the greedy policy, episodes capped at
    `horizon` steps; argmax ties break toward the lowest action index."""
    returns = [
        episode_return(
            spec,
            lambda s: _greedy_action(mlp, params, state_features(spec, s)),
            horizon,
            rng,
        )
        for _ in range(episodes)
    ]
    return float(np.mean(returns))


def exact_minimize(
    spec: MdpSpec, mlp: nets.MlpDef, theta: np.ndarray, gamma: float
) -> np.ndarray:
    """Closed-form least-squares replacement for the K inner steps.

    Only valid for a single linear layer. Fits the squared bootstrapped loss
    over every non-terminal (s, a), with successor states enumerated and rows
    weighted by their transition probability, so the fitted q-values equal
    one optimality backup of q(.; theta) exactly when features are one-hot.
    """
    if len(mlp.layer_widths) != 2:
        raise ValueError("exact minimization requires a single linear layer")
    d, n_act = mlp.layer_widths
    q_next = nets.forward_batch(mlp, theta, spec.features)  # (S, A)
    v_next = q_next.max(axis=1)
    for t in spec.terminal:
        v_next[t] = 0.0
    rows, targets, weights = [], [], []
    for s in range(spec.n_states):
        if s in spec.terminal:
            continue
        feats = spec.features[s]
        for a in range(spec.n_actions):
            for s2 in np.nonzero(spec.transition[s, a])[0]:
                phi = np.zeros(d * n_act + n_act)
                phi[a : d * n_act : n_act] = feats  # W[:, a] entries
                phi[d * n_act + a] = 1.0  # bias
                rows.append(phi)
                targets.append(spec.reward[s, a] + gamma * v_next[s2])
                weights.append(spec.transition[s, a, s2])
    phi_mat = np.asarray(rows)
    y = np.asarray(targets)
    sw = np.sqrt(np.asarray(weights))
    sol, *_ = np.linalg.lstsq(phi_mat * sw[:, None], y * sw, rcond=None)
    return sol


@dataclass
class TrainOutput:
    record: RunRecord
    agent: AgentParams
    opt_state: OptimizerState
    mlp: nets.MlpDef


def run_training(
    config: TrainConfig,
    spec: MdpSpec,
    seed: int | None = None,
    fingerprint: str | None = None,
) -> TrainOutput:
    """T iterations of inner optimization, each followed by a hard target
    sync and a greedy evaluation. Fully deterministic given the seed."""
    started = time.perf_counter()
    seed = config.seeds[0] if seed is None else int(seed)
    streams = make_streams(seed)
    mlp = build_mlp(spec, config, streams.init_seed)
    w0 = nets.init_params(mlp)
    agent = AgentParams(theta=w0.copy(), w=w0)
    opt_state = fresh_state(w0.shape)
    if fingerprint is None:
        fingerprint = train_fingerprint(config, spec)
    gamma = config.gamma if config.gamma is not None else spec.gamma

    eval_returns: list[float] = []
    resets: list[int] = []
    total_steps = 0

    if config.exact_minimization:
        for _ in range(config.T):
            w = exact_minimize(spec, mlp, agent.theta, gamma)
            agent = sync_target(AgentParams(theta=agent.theta, w=w))
            eval_returns.append(
                evaluate_greedy(
                    spec, mlp, agent.theta, config.eval_episodes,
                    config.eval_horizon, streams.eval,
                )
            )
            resets.append(0)
    else:
        buffer = ReplayBuffer(config.buffer_capacity)
        env_state = episode_start(spec, streams.env)
        for _ in range(config.prefill_steps):
            env_state = _collect_step(
                spec, mlp, agent.w, buffer, env_state, 1.0, streams.env
            )
        for _ in range(config.T):
            agent, opt_state, env_state, stats = run_inner_iteration(
                spec, mlp, agent, buffer, opt_state, config, streams, env_state
            )
            total_steps += len(stats.reports)
            agent = sync_target(agent)
            eval_returns.append(
                evaluate_greedy(
                    spec, mlp, agent.theta, config.eval_episodes,
                    config.eval_horizon, streams.eval,
                )
            )
            resets.append(stats.resets)

    record = RunRecord(
        eval_returns=eval_returns,
        resets_per_iteration=resets,
        fingerprint=fingerprint,
        seed=seed,
        wall_clock_sec=time.perf_counter() - started,
        total_steps=total_steps,
    )
    return TrainOutput(record=record, agent=agent, opt_state=opt_state, mlp=mlp)


CHECKPOINT_MAGIC = b"QCKPT1\n"


def write_checkpoint(
    path, mlp: nets.MlpDef, agent: AgentParams, opt_state: OptimizerState
) -> None:
    """Binary checkpoint: magic, online params block, target params block
    (both little-endian, width-prefixed), then uint64 LE step counter and the
    two moment vectors as float64 LE."""
    widths = mlp.layer_widths
    blob = CHECKPOINT_MAGIC
    blob += nets.params_to_bytes(widths, agent.w)
    blob += nets.params_to_bytes(widths, agent.theta)
    blob += struct.pack("<Q", opt_state.i)
    blob += np.asarray(opt_state.m, dtype="<f8").tobytes()
    blob += np.asarray(opt_state.v, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path) -> tuple[tuple[int, ...], AgentParams, OptimizerState]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    widths, w, off = nets.params_from_bytes(buf, off)
    widths2, theta, off = nets.params_from_bytes(buf, off)
    if widths2 != widths:
        raise ValueError("checkpoint blocks disagree on layer widths")
    (i,) = struct.unpack_from("<Q", buf, off)
    off += 8
    n = w.size
    m = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    v = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
    return widths, AgentParams(theta=theta, w=w), OptimizerState(m=m, v=v, i=int(i))
