"""optreset: resettable first-order optimizers and a toy fitted-Q lab.

The package splits into small numpy modules:

- nets: flat-parameter MLPs with hand-written forward/backward passes
- optim: SGD/Adam/RMSProp/rectified-Adam steps over explicit, resettable state
- envs: gridworld and garnet MDPs plus tabular value iteration
- replay: FIFO experience buffer and the target/online parameter pair
- training: the K-inner-steps / hard-sync driver with reset policies
- harness: sweeps, score normalization, median/mean aggregation, AUC
- cli: train / sweep / oracle / report commands
"""

from .envs import (
    MdpSpec,
    env_step,
    episode_return,
    make_garnet,
    make_gridworld,
    mdp_from_json,
    mdp_to_json,
    state_features,
    value_iteration,
)
from .harness import (
    NormalizationAnchors,
    SweepConfig,
    SweepResult,
    aggregate,
    area_under_curve,
    compute_anchors,
    normalize_score,
    run_sweep,
)
from .nets import (
    MlpDef,
    finite_diff_grad,
    forward,
    forward_batch,
    grad_td_loss,
    init_params,
    param_count,
    td_loss,
)
from .optim import (
    OptimHyper,
    OptimizerState,
    StepReport,
    adam_step,
    apply_proximal,
    fresh_state,
    optimizer_step,
    radam_step,
    reset_state,
    rmsprop_step,
    sgd_step,
)
from .replay import AgentParams, ReplayBuffer, Transition, bellman_target, sample_batch, sync_target
from .training import (
    ResetPolicy,
    RunRecord,
    TrainConfig,
    decide_reset,
    evaluate_greedy,
    exact_minimize,
    run_inner_iteration,
    run_training,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
