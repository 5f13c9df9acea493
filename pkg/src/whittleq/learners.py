"""Two-timescale Q-learning drivers for the per-arm subsidy.

The fast timescale runs Q-learning on the subsidized single-arm problem, the
slow timescale moves the subsidy for one target state toward the point where
that state is indifferent between its two actions. Three function classes are
supported: a plain table, a linear architecture over pair features, and a
two-layer ReLU network trained on its top layer preactivations.

All trajectory randomness flows through a single generator that is consumed
in a fixed pattern (three uniforms per step), so runs are reproducible for a
given (seed, algorithm, target state, trial) tuple regardless of how the loop
is chunked internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._rng import ALGORITHM_STREAMS, derive_seed
from .arms import ArmModel, FeatureMap, check_arm, one_hot_features
from .errors import DivergenceError, ValidationError
from .nets import TwoLayerReluNet, init_net

ETA_EXPONENT = 4.0 / 3.0
TRAILING_WINDOW = 1000

ALGORITHMS = ("tabular", "linear", "neural")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes alpha_k = alpha0/(k+1), eta_k = eta0/(k+1)^(4/3), k >= 1.

    The exponent pair (1, 4/3) keeps eta_k/alpha_k -> 0, which is what makes
    the subsidy the slow variable. eta0 = 0 freezes the subsidy entirely,
    which is occasionally useful for probing the fast timescale alone.
    """

    alpha0: float = 0.1
    eta0: float = 0.1

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValidationError(f"alpha0 must be positive, got {self.alpha0}")
        if self.eta0 < 0:
            raise ValidationError(f"eta0 must be nonnegative, got {self.eta0}")

    def alpha(self, k: int) -> float:
        return self.alpha0 / (k + 1.0)

    def eta(self, k: int) -> float:
        return self.eta0 / (k + 1.0) ** ETA_EXPONENT

    def ratio(self, k: int) -> float:
        """eta_k / alpha_k, the timescale separation at step k."""
        return self.eta(k) / self.alpha(k)


@dataclass(frozen=True)
class TrainConfig:
    """Run parameters. The defaults are the reference experiment settings:
    epsilon-greedy at 0.5, alpha_k = 0.5/(k+1), eta_k = 0.1/(k+1)^(4/3),
    width-200 network, 50k steps per target state."""

    iterations: int = 50_000
    epsilon: float = 0.5
    alpha0: float = 0.5
    eta0: float = 0.1
    seed: int = 0
    checkpoint_every: int = 100
    divergence_cap: float = 1e6
    width: int = 200
    linearized: bool = False
    step_index: str = "per_pair"  # linear alpha clock: "per_pair" or "global"
    record_snapshots: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError(
                f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError(
                f"epsilon must be in [0, 1], got {self.epsilon}")
        if not self.alpha0 > 0:
            raise ValidationError(f"alpha0 must be positive, got {self.alpha0}")
        if self.eta0 < 0:
            raise ValidationError(f"eta0 must be nonnegative, got {self.eta0}")
        if self.checkpoint_every < 0:
            raise ValidationError(
                f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if not self.divergence_cap > 0:
            raise ValidationError(
                f"divergence_cap must be positive, got {self.divergence_cap}")
        if self.width < 1:
            raise ValidationError(f"width must be >= 1, got {self.width}")
        if self.step_index not in ("per_pair", "global"):
            raise ValidationError(
                f"step_index must be 'per_pair' or 'global', "
                f"got {self.step_index!r}")

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.alpha0, self.eta0)


@dataclass
class TrainResult:
    algorithm: str
    target_state: int
    seed: int
    initial_state: int
    iterations: int
    backend: str
    lam_final: float
    steps: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    eta: np.ndarray
    visited: np.ndarray
    action: np.ndarray
    td: np.ndarray
    theta_final: np.ndarray
    f_final: np.ndarray
    lam_osc: float
    trailing_window: int
    last_step_norm: float
    theta_snapshots: dict = field(default_factory=dict)
    net: TwoLayerReluNet | None = None
    counts: np.ndarray | None = None


@dataclass
class IndexTable:
    """Learned subsidies for every state of one arm."""

    algorithm: str
    lam: np.ndarray
    results: list


def epsilon_greedy(f_passive: float, f_active: float, epsilon: float,
                   u_explore: float, u_action: float) -> int:
    """Action choice used by every learner.

    Both uniforms are always consumed by the kernels whether or not the
    explore branch is taken; this helper mirrors that decision exactly.
    Greedy ties go to the passive action.
    """
    if u_explore < epsilon:
        return 0 if u_action < 0.5 else 1
    return 1 if f_active > f_passive else 0


def td_error(reward: float, action: int, subsidy: float, mean_offset: float,
             f_next_max: float, f_current: float) -> float:
    """One-step temporal difference with the subsidy paid on passive moves
    and the mean of f over all pairs playing the role of the average reward.
    """
    return (reward + (1.0 - action) * subsidy - mean_offset
            + f_next_max - f_current)


def _resolve_backend(backend):
    if backend is None:
        return kernels.active, kernels.backend_name()
    if isinstance(backend, str):
        mod = kernels.get_backend(backend)
        if mod is None:
            raise ValidationError(f"backend {backend!r} is not available")
        return mod, backend
    name = "compiled" if backend is not kernels.pure else "pure"
    return backend, name


def _chunk_fn(backend, algorithm: str):
    return getattr(backend, f"{algorithm}_chunk")


def _events(total: int, every: int, snapshots: bool) -> list[int]:
    marks = {total}
    if every > 0:
        marks.update(range(every, total + 1, every))
    if snapshots:
        decade = 1
        while decade <= total:
            marks.add(decade)
            decade *= 10
    if total > TRAILING_WINDOW:
        marks.add(total - TRAILING_WINDOW)
    return sorted(marks)


def _snapshot_steps(total: int) -> set[int]:
    out = {total}
    decade = 1
    while decade <= total:
        out.add(decade)
        decade *= 10
    return out


def _last_step_norm(ws, alpha: float, delta: float, n_active: int,
                    pair: int) -> float:
    base = abs(alpha * delta)
    if ws.algorithm == "tabular":
        return base
    phi = float(np.linalg.norm(ws.feats[pair]))
    if ws.algorithm == "linear":
        return base * phi
    return base * ws.inv_sqrt_m * phi * float(np.sqrt(n_active))


def _run(ws, config: TrainConfig, rng, chunk, backend_name: str,
         seed: int, initial_state: int) -> TrainResult:
    total = config.iterations
    every = config.checkpoint_every
    snap_at = _snapshot_steps(total) if config.record_snapshots else set()

    steps, lam_rows, alpha_rows, eta_rows = [], [], [], []
    visited_rows, action_rows, td_rows = [], [], []
    snapshots: dict[int, np.ndarray] = {}

    window_lo = total - min(total, TRAILING_WINDOW)
    osc_min = np.inf
    osc_max = -np.inf
    last = (0, 0, 0, 0.0, 0.0, 0.0, np.inf, -np.inf, 0, 0)

    prev = ws.k
    start = ws.k
    for mark in _events(total, every, config.record_snapshots):
        mark += start
        if mark <= prev:
            continue
        n = mark - prev
        uniforms = rng.random((n, 3))
        last = chunk(ws, n, uniforms)
        k_rel = ws.k - start
        if k_rel > window_lo:
            osc_min = min(osc_min, last[6])
            osc_max = max(osc_max, last[7])
        if (every > 0 and k_rel % every == 0) or k_rel == total:
            steps.append(k_rel)
            lam_rows.append(float(ws.lam[ws.target]))
            alpha_rows.append(last[4])
            eta_rows.append(last[5])
            visited_rows.append(last[0])
            action_rows.append(last[1])
            td_rows.append(last[3])
        if k_rel in snap_at:
            snapshots[k_rel] = ws.theta()
        norm = ws.theta_norm()
        if not np.isfinite(norm) or norm > config.divergence_cap:
            raise DivergenceError("theta_norm", ws.k, norm,
                                  float(ws.lam[ws.target]))
        prev = mark

    vis, act, _nxt, delta, alpha, eta, _lo, _hi, n_active, pair = last
    if ws.algorithm == "tabular":
        f_final = np.concatenate([ws.Q[:, 0], ws.Q[:, 1]])
        counts = ws.counts.copy()
    elif ws.algorithm == "linear":
        f_final = ws.ftab.copy()
        counts = ws.counts.copy()
    else:
        f_final = ws.ftab.copy()
        counts = None

    return TrainResult(
        algorithm=ws.algorithm,
        target_state=int(ws.target),
        seed=int(seed),
        initial_state=int(initial_state),
        iterations=total,
        backend=backend_name,
        lam_final=float(ws.lam[ws.target]),
        steps=np.asarray(steps, dtype=np.int64),
        lam=np.asarray(lam_rows, dtype=float),
        alpha=np.asarray(alpha_rows, dtype=float),
        eta=np.asarray(eta_rows, dtype=float),
        visited=np.asarray(visited_rows, dtype=np.int64),
        action=np.asarray(action_rows, dtype=np.int64),
        td=np.asarray(td_rows, dtype=float),
        theta_final=ws.theta(),
        f_final=f_final,
        lam_osc=float(osc_max - osc_min) if osc_max >= osc_min else 0.0,
        trailing_window=min(total, TRAILING_WINDOW),
        last_step_norm=_last_step_norm(ws, alpha, delta, n_active, pair),
        theta_snapshots=snapshots,
        net=getattr(ws, "net", None),
        counts=counts,
    )


def _make_workspace(arm: ArmModel, fmap, target: int, algorithm: str,
                    config: TrainConfig, rng, net, theta_init, lam_table):
    S = arm.num_states
    if lam_table is None:
        lam_table = np.zeros(S, dtype=float)
    if algorithm == "tabular":
        ws = kernels.TabularWorkspace(
            arm, np.zeros((S, 2), dtype=float),
            np.zeros((S, 2), dtype=np.int64), lam_table, target,
            config.epsilon, config.alpha0, config.eta0,
            config.divergence_cap, initial_state=0)
        s0 = int(rng.integers(S))
        ws.state = s0
        return ws, s0
    if fmap is None:
        fmap = one_hot_features(S)
    if algorithm == "linear":
        if theta_init is None:
            theta = np.zeros(fmap.dim, dtype=float)
        else:
            theta = np.array(theta_init, dtype=float)
            if theta.shape != (fmap.dim,):
                raise ValidationError(
                    f"theta_init must have shape ({fmap.dim},), "
                    f"got {theta.shape}")
        ws = kernels.LinearWorkspace(
            arm, fmap, theta, np.zeros((S, 2), dtype=np.int64), lam_table,
            target, config.epsilon, config.alpha0, config.eta0,
            config.divergence_cap, per_pair=(config.step_index == "per_pair"),
            initial_state=0)
        s0 = int(rng.integers(S))
        ws.state = s0
        return ws, s0
    if algorithm == "neural":
        if net is None:
            net = init_net(config.width, fmap.dim, rng)
        elif net.dim != fmap.dim:
            raise ValidationError(
                f"net input dim {net.dim} does not match feature dim "
                f"{fmap.dim}")
        ws = kernels.NeuralWorkspace(
            arm, fmap, net, lam_table, target, config.epsilon,
            config.alpha0, config.eta0, config.divergence_cap,
            linearized=config.linearized, initial_state=0)
        ws.net = net
        s0 = int(rng.integers(S))
        ws.state = s0
        return ws, s0
    raise ValidationError(
        f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")


@dataclass
class RunHandle:
    """Everything needed to drive one run step by step: the mutable
    workspace, the generator positioned right after initialization, the
    chunk function, and identification of the run."""

    ws: object
    rng: np.random.Generator
    chunk: object
    backend: str
    seed: int
    initial_state: int
    config: TrainConfig

    def advance(self, n_steps: int):
        """Advance the trajectory n_steps, consuming 3 uniforms per step."""
        return self.chunk(self.ws, n_steps, self.rng.random((n_steps, 3)))


def prepare_run(arm: ArmModel, target_state: int, algorithm: str = "neural",
                config: TrainConfig | None = None,
                fmap: FeatureMap | None = None,
                net: TwoLayerReluNet | None = None, theta_init=None,
                backend=None, trial: int = 0) -> RunHandle:
    """Build the workspace and generator for one run without stepping it.

    train_index drives the returned handle to completion; diagnostics replay
    the identical trajectory and measure quantities at chosen steps.
    """
    if config is None:
        config = TrainConfig()
    check_arm(arm)
    S = arm.num_states
    if not 0 <= target_state < S:
        raise ValidationError(
            f"target_state {target_state} out of range for {S} states")
    if algorithm not in ALGORITHMS:
        raise ValidationError(
            f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    backend_mod, backend_name = _resolve_backend(backend)
    seed = derive_seed(config.seed, ALGORITHM_STREAMS[algorithm],
                       target_state, trial)
    rng = np.random.default_rng(seed)
    ws, s0 = _make_workspace(arm, fmap, target_state, algorithm, config,
                             rng, net, theta_init, None)
    return RunHandle(ws=ws, rng=rng,
                     chunk=_chunk_fn(backend_mod, algorithm),
                     backend=backend_name, seed=seed, initial_state=s0,
                     config=config)


def train_index(arm: ArmModel, target_state: int, algorithm: str = "neural",
                config: TrainConfig | None = None, fmap: FeatureMap | None = None,
                net: TwoLayerReluNet | None = None, theta_init=None,
                backend=None, trial: int = 0) -> TrainResult:
    """Learn the indifference subsidy for one target state of one arm.

    The generator seed is derived from (config.seed, algorithm stream,
    target_state, trial); for the neural learner the network is drawn first
    (signs, then initial weights) and the initial arm state immediately
    after, so a run is pinned down by that tuple alone.
    """
    handle = prepare_run(arm, target_state, algorithm, config, fmap=fmap,
                         net=net, theta_init=theta_init, backend=backend,
                         trial=trial)
    return _run(handle.ws, handle.config, handle.rng, handle.chunk,
                handle.backend, handle.seed, handle.initial_state)


def train_all(arm: ArmModel, algorithm: str = "neural",
              config: TrainConfig | None = None,
              fmap: FeatureMap | None = None, reset_per_state: bool = True,
              backend=None, trial: int = 0) -> IndexTable:
    """Learn the subsidy for every state of one arm.

    With reset_per_state (the default) each state is an independent run with
    its own derived seed and, for the neural learner, its own freshly drawn
    network. With reset_per_state=False a single run carries the learned
    tables from state to state: one generator, one network, step and visit
    clocks reset at each state boundary, each state's subsidy starting from
    zero in the shared table.
    """
    if config is None:
        config = TrainConfig()
    check_arm(arm)
    if algorithm not in ALGORITHMS:
        raise ValidationError(
            f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    S = arm.num_states
    results = []
    if reset_per_state:
        for s in range(S):
            results.append(train_index(arm, s, algorithm, config, fmap=fmap,
                                        backend=backend, trial=trial))
    else:
        backend_mod, backend_name = _resolve_backend(backend)
        seed = derive_seed(config.seed, ALGORITHM_STREAMS[algorithm], S, trial)
        rng = np.random.default_rng(seed)
        lam_table = np.zeros(S, dtype=float)
        ws, s0 = _make_workspace(arm, fmap, 0, algorithm, config, rng,
                                 None, None, lam_table)
        chunk = _chunk_fn(backend_mod, algorithm)
        for s in range(S):
            ws.target = s
            ws.k = 0
            if getattr(ws, "counts", None) is not None:
                ws.counts[:] = 0
            results.append(_run(ws, config, rng, chunk, backend_name,
                                seed, s0))
    lam = np.array([r.lam_final for r in results], dtype=float)
    return IndexTable(algorithm=algorithm, lam=lam, results=results)


def top_k_policy(lam_values, k: int) -> np.ndarray:
    """Ids of the k arms with the largest subsidy values, ties resolved
    toward the smaller id. Returns ids in selection order."""
    lam = np.asarray(lam_values, dtype=float)
    n = lam.shape[0]
    if not 0 <= k <= n:
        raise ValidationError(f"k must be in 0..{n}, got {k}")
    order = np.lexsort((np.arange(n), -lam))
    return order[:k]
