"""Experiment orchestration: config, seeded Monte-Carlo runs, and file I/O.

One experiment is a grid of independent training runs (algorithm x target
state x trial) against a single arm, followed by a diagnostics pass on the
neural runs. Everything lands under one output directory:

    oracle.csv                          exact indices, 1-indexed states
    trajectories/<alg>/state<S>_trial<T>.csv
    diagnostics/lyapunov_state<S>_trial<T>.csv
    references/state<S>_trial<T>_{full,lin}.net
    snapshots/neural_state<S>_trial<T>_k<K>.npy
    summary.json                        aggregate statistics, no timestamps
    manifest.json                       config hash, seeds, file inventory

Reproducibility contract: for a fixed config and master seed every output
byte is identical across reruns and across serial/parallel execution.
Wall-clock metadata lives only in manifest.json, nowhere else.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import datetime
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from ._rng import (ALGORITHM_STREAMS, STREAM_GAP, STREAM_LIPSCHITZ,
                   derive_seed)
from .arms import ArmModel, circulant_instance, load_arm, one_hot_features
from .errors import (ConfigError, DivergenceError, ReferenceUnavailableError,
                     ValidationError)
from .exact import whittle_table
from .kernels import backend_name
from .learners import ALGORITHMS, TrainConfig, train_index
from .nets import init_net, save_net, with_theta

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Half-width of the accuracy band used for band-entry bookkeeping in the
# summary. A learned index "enters the band" at the first checkpoint where
# the seed-averaged estimate is within this distance of the oracle value.
BAND_HALF_WIDTH = 0.2

TRAJECTORY_HEADER = ("k", "lambda", "alpha", "eta", "visited_state",
                     "action", "td_error")
DIAGNOSTICS_HEADER = ("k", "theta_residual", "lambda_residual",
                      "theta_residual_lin", "lambda_residual_lin",
                      "lyapunov_m", "lyapunov_m_hat", "ratio")

ENV_OUTPUT_ROOT = "WHITTLEQ_OUTPUT_ROOT"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AlgorithmParams:
    """Per-algorithm hyperparameters for one experiment."""

    iterations: int = 50_000
    epsilon: float = 0.5
    alpha0: float = 0.5
    eta0: float = 0.1
    width: int = 200  # hidden units; only the neural learner reads it

    def validate(self, label: str) -> None:
        if self.iterations < 1:
            raise ConfigError(f"{label}.iterations must be >= 1")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"{label}.epsilon must be in (0, 1]")
        if self.alpha0 <= 0.0:
            raise ConfigError(f"{label}.alpha0 must be positive")
        if self.eta0 <= 0.0:
            raise ConfigError(f"{label}.eta0 must be positive")
        if self.width < 1:
            raise ConfigError(f"{label}.width must be >= 1")


@dataclass(frozen=True)
class DiagnosticsPlan:
    """What the post-training diagnostics pass computes."""

    enabled: bool = True
    lyapunov_state: int = 4  # 1-indexed target state for the E[M] curve
    reference_iterations: int = 200_000
    c0_widths: tuple = (50, 100, 200)
    c0_seeds: tuple = (0, 1, 2)
    c0_budget: int = 200_000
    gap_widths: tuple = (50, 400)
    gap_radius: float = 1.0
    gap_probes: int = 64
    gap_seeds: int = 5
    lipschitz_pairs: int = 10_000
    mixing_delta: float = 1e-3

    def validate(self) -> None:
        if self.lyapunov_state < 1:
            raise ConfigError("diagnostics.lyapunov_state is 1-indexed")
        if self.reference_iterations < 1 or self.c0_budget < 1:
            raise ConfigError("diagnostics budgets must be >= 1")
        if not self.c0_widths or not self.c0_seeds:
            raise ConfigError("diagnostics.c0_widths/c0_seeds must be nonempty")
        if any(int(m) < 1 for m in self.c0_widths):
            raise ConfigError("diagnostics.c0_widths must be positive")
        if len(self.gap_widths) < 2:
            raise ConfigError("diagnostics.gap_widths needs >= 2 widths")
        if self.gap_radius <= 0 or self.gap_probes < 1 or self.gap_seeds < 1:
            raise ConfigError("diagnostics gap settings must be positive")
        if self.lipschitz_pairs < 1:
            raise ConfigError("diagnostics.lipschitz_pairs must be >= 1")
        if not 0.0 < self.mixing_delta < 1.0:
            raise ConfigError("diagnostics.mixing_delta must be in (0, 1)")


def _default_params() -> dict:
    return {name: AlgorithmParams() for name in ("tabular", "neural")}


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte-Carlo experiment."""

    arm: str = "circulant"
    algorithms: tuple = ("tabular", "neural")
    target_states: tuple = (1, 2, 3, 4)  # 1-indexed
    num_trials: int = 20
    seed: int = 11
    checkpoint_every: int = 100
    output_dir: str = "runs/circulant"
    workers: int = 0  # 0 or 1 means serial
    params: dict = field(default_factory=_default_params)
    diagnostics: DiagnosticsPlan = field(default_factory=DiagnosticsPlan)

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("algorithms must be nonempty")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(
                    f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms contains duplicates")
        if not self.target_states:
            raise ConfigError("target_states must be nonempty")
        for s in self.target_states:
            if int(s) < 1:
                raise ConfigError("target_states are 1-indexed (>= 1)")
        if len(set(self.target_states)) != len(self.target_states):
            raise ConfigError("target_states contains duplicates")
        if self.num_trials < 1:
            raise ConfigError("num_trials must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        if not self.arm:
            raise ConfigError("arm source must be a builtin name or a path")
        for name in self.algorithms:
            if name not in self.params:
                raise ConfigError(f"params missing entry for {name!r}")
        for name, p in self.params.items():
            if not isinstance(p, AlgorithmParams):
                raise ConfigError(f"params[{name!r}] has the wrong type")
            p.validate(f"params.{name}")
        if not isinstance(self.diagnostics, DiagnosticsPlan):
            raise ConfigError("diagnostics has the wrong type")
        self.diagnostics.validate()

    def train_config(self, algorithm: str) -> TrainConfig:
        p = self.params[algorithm]
        return TrainConfig(iterations=p.iterations, epsilon=p.epsilon,
                           alpha0=p.alpha0, eta0=p.eta0, seed=self.seed,
                           checkpoint_every=self.checkpoint_every,
                           width=p.width)


def config_dict(config: ExperimentConfig) -> dict:
    """Canonical plain-dict form of a config (tuples become lists)."""

    def plain(x):
        if dataclasses.is_dataclass(x) and not isinstance(x, type):
            return {k: plain(v) for k, v in dataclasses.asdict(x).items()}
        if isinstance(x, dict):
            return {str(k): plain(v) for k, v in x.items()}
        if isinstance(x, (tuple, list)):
            return [plain(v) for v in x]
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, (np.floating,)):
            return float(x)
        return x

    return plain(config)


def config_digest(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; stable under key reordering."""
    blob = json.dumps(config_dict(config), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


# -- TOML loading and dotted overrides --------------------------------------


_TOP_LEVEL_KEYS = {"arm", "algorithms", "target_states", "num_trials",
                   "seed", "checkpoint_every", "output_dir", "workers",
                   "params", "diagnostics"}


def _coerce_section(cls, data: dict, label: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {label}: {unknown}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {label} section: {exc}") from exc


def _config_from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key == "params":
            if not isinstance(value, dict):
                raise ConfigError("params must be a table of algorithm tables")
            params = dict(_default_params())
            for name, sub in value.items():
                if not isinstance(sub, dict):
                    raise ConfigError(f"params.{name} must be a table")
                params[name] = _coerce_section(AlgorithmParams, sub,
                                               f"params.{name}")
            kwargs[key] = params
        elif key == "diagnostics":
            if not isinstance(value, dict):
                raise ConfigError("diagnostics must be a table")
            kwargs[key] = _coerce_section(DiagnosticsPlan, value,
                                          "diagnostics")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    # Algorithms named only under [params.<name>] still need defaults for
    # everything they did not set; handled above. Algorithms requested but
    # without a params table fall back to AlgorithmParams().
    if "algorithms" in kwargs:
        params = dict(kwargs.get("params", _default_params()))
        for name in kwargs["algorithms"]:
            params.setdefault(name, AlgorithmParams())
        kwargs["params"] = params
    return ExperimentConfig(**kwargs)


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare strings may arrive unquoted
    return key, value


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Build a config from an optional TOML file plus dotted overrides.

    Overrides use ``section.key=value`` syntax with TOML literals on the
    right-hand side and always win over the file.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for item in overrides:
        key, value = _parse_override(item)
        _set_dotted(data, key, value)
    return _config_from_dict(data)


def resolve_arm(source: str) -> ArmModel:
    """Builtin name or a TOML file path."""
    if source == "circulant":
        return circulant_instance()
    path = Path(source)
    if path.exists():
        return load_arm(path)
    raise ConfigError(
        f"arm source {source!r} is neither a builtin name nor a file")


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "."))


def resolve_output_path(p) -> Path:
    """Relative paths are rooted at WHITTLEQ_OUTPUT_ROOT (default cwd)."""
    p = Path(p)
    return p if p.is_absolute() else output_root() / p


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    seeds: dict
    files: dict
    oracle: dict
    backend: str
    aborts: list
    calibration: dict
    timing: dict
    output_dir: Path

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "config": self.config,
            "seeds": self.seeds,
            "files": self.files,
            "oracle": self.oracle,
            "backend": self.backend,
            "aborts": self.aborts,
            "calibration": self.calibration,
            "timing": self.timing,
        }


# ---------------------------------------------------------------------------
# file helpers


def _fmt_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        raise ValidationError("CSV cells must be numbers")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    """Plain CSV with repr'd floats so values round-trip exactly."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path: Path):
    """Inverse of write_csv: (header tuple, list of float-tuples)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = tuple(lines[0].split(","))
    rows = [tuple(float(c) for c in ln.split(",")) for ln in lines[1:]]
    return header, rows


def _jsonify(x):
    if isinstance(x, dict):
        return {str(k): _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonify(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonify(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(_jsonify(payload), sort_keys=True, indent=2)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(blob + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# worker entry points (top level so they pickle under multiprocessing)


def _train_job(payload):
    arm, algorithm, state0, trial, cfg = payload
    key = (algorithm, state0 + 1, trial)
    try:
        fmap = one_hot_features(arm.num_states)
        result = train_index(arm, state0, algorithm, cfg, fmap=fmap,
                             trial=trial)
    except DivergenceError as exc:
        return ("abort", key, {
            "stage": "train", "algorithm": algorithm, "state": state0 + 1,
            "trial": trial, "error_type": type(exc).__name__,
            "message": str(exc), "iteration": exc.iteration,
        })
    return ("ok", key, result)


def _lyapunov_job(payload):
    arm, state0, trial, run_cfg, ref_cfg = payload
    key = ("lyapunov", state0 + 1, trial)
    fmap = one_hot_features(arm.num_states)
    try:
        reference = diag.reference_solution(arm, fmap, state0, ref_cfg,
                                            trial=trial)
        records = diag.measure_run(arm, state0, run_cfg, reference,
                                   fmap=fmap, trial=trial)
    except (DivergenceError, ReferenceUnavailableError) as exc:
        return ("abort", key, {
            "stage": "lyapunov", "algorithm": "neural", "state": state0 + 1,
            "trial": trial, "error_type": type(exc).__name__,
            "message": str(exc),
        })
    return ("ok", key, (records, reference))


def _map_jobs(fn, payloads, workers: int):
    """Run jobs serially or in processes; output order is input order."""
    payloads = list(payloads)
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


# ---------------------------------------------------------------------------
# aggregation


def _mean_std(stack: np.ndarray):
    return stack.mean(axis=0), stack.std(axis=0)


def _band_entry(ks, mean_curve, lam_star):
    inside = np.abs(np.asarray(mean_curve) - lam_star) <= BAND_HALF_WIDTH
    hits = np.nonzero(inside)[0]
    return int(ks[hits[0]]) if hits.size else None


def _loglog_slope(ks, values, k_lo: int):
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    lo = np.searchsorted(ks, k_lo)
    if lo >= ks.size - 1 or values[lo] <= 0 or values[-1] <= 0:
        return None
    return float((np.log(values[-1]) - np.log(values[lo]))
                 / (np.log(ks[-1]) - np.log(ks[lo])))


def _ranking(final_by_state: dict):
    """States ordered by decreasing index, ties by smaller state label."""
    states = sorted(final_by_state)
    vals = np.array([final_by_state[s] for s in states], dtype=float)
    order = np.lexsort((states, -vals))
    return [int(states[i]) for i in order]


# ---------------------------------------------------------------------------
# the experiment


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Execute the full grid and write every artifact under the output dir.

    Individual run failures (divergence, unusable reference) become abort
    records in the manifest; they never take the experiment down. Config
    problems, on the other hand, raise before anything is written.
    """
    started = time.time()
    started_utc = datetime.datetime.now(datetime.timezone.utc).isoformat()

    arm = resolve_arm(config.arm)
    for s in config.target_states:
        if not 1 <= int(s) <= arm.num_states:
            raise ConfigError(
                f"target state {s} outside 1..{arm.num_states}")
    plan = config.diagnostics
    if plan.enabled and not 1 <= plan.lyapunov_state <= arm.num_states:
        raise ConfigError(
            f"diagnostics.lyapunov_state {plan.lyapunov_state} outside "
            f"1..{arm.num_states}")
    if plan.enabled and "neural" not in config.algorithms:
        raise ConfigError("diagnostics need the neural algorithm enabled")

    out = resolve_output_path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit_csv(rel: str, header, rows):
        path = out / rel
        write_csv(path, header, rows)
        written.append(path)

    oracle = whittle_table(arm)
    lam_star = {s + 1: float(oracle.indices[s])
                for s in range(arm.num_states)}
    emit_csv("oracle.csv", ("state", "lambda_star"),
             [(s, lam_star[s]) for s in sorted(lam_star)])

    # -- training grid -------------------------------------------------
    jobs = []
    seeds: dict = {}
    for algorithm in config.algorithms:
        cfg = config.train_config(algorithm)
        alg_seeds = seeds.setdefault(algorithm, {})
        for s1 in sorted(int(s) for s in config.target_states):
            state0 = s1 - 1
            snap = (algorithm == "neural" and plan.enabled
                    and s1 == plan.lyapunov_state)
            run_cfg = dataclasses.replace(cfg, record_snapshots=snap)
            st_seeds = alg_seeds.setdefault(str(s1), {})
            for trial in range(config.num_trials):
                st_seeds[str(trial)] = derive_seed(
                    config.seed, ALGORITHM_STREAMS[algorithm], state0, trial)
                jobs.append((arm, algorithm, state0, trial, run_cfg))

    outcomes = _map_jobs(_train_job, jobs, config.workers)
    aborts: list[dict] = []
    results: dict = {}
    for status, key, value in outcomes:
        if status == "abort":
            aborts.append(value)
        else:
            results[key] = value

    for algorithm, s1, trial in sorted(results):
        r = results[(algorithm, s1, trial)]
        rows = zip(r.steps, r.lam, r.alpha, r.eta, r.visited + 1, r.action,
                   r.td)
        emit_csv(f"trajectories/{algorithm}/state{s1}_trial{trial:03d}.csv",
                 TRAJECTORY_HEADER, rows)
        for k, theta_vec in sorted(r.theta_snapshots.items()):
            path = out / ("snapshots/neural_state"
                          f"{s1}_trial{trial:03d}_k{k}.npy")
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, theta_vec)
            written.append(path)

    # -- aggregate convergence statistics -------------------------------
    convergence: dict = {}
    final_by_state: dict = {}
    for algorithm in config.algorithms:
        per_state: dict = {}
        finals: dict = {}
        for s1 in sorted(int(s) for s in config.target_states):
            curves = [results[(algorithm, s1, t)]
                      for t in range(config.num_trials)
                      if (algorithm, s1, t) in results]
            if not curves:
                continue
            ks = curves[0].steps
            stack = np.vstack([c.lam for c in curves])
            mean, std = _mean_std(stack)
            finals[s1] = float(mean[-1])
            per_state[str(s1)] = {
                "k": ks, "lam_mean": mean, "lam_std": std,
                "final_mean": float(mean[-1]), "final_std": float(std[-1]),
                "lambda_star": lam_star[s1],
                "oracle_delta": float(mean[-1] - lam_star[s1]),
                "band_entry_iteration": _band_entry(ks, mean, lam_star[s1]),
                "num_trials": len(curves),
            }
        convergence[algorithm] = per_state
        final_by_state[algorithm] = finals

    oracle_order = _ranking({s: lam_star[s]
                             for s in sorted(int(x)
                                             for x in config.target_states)})
    ranking = {"oracle_order": oracle_order}
    for algorithm, finals in final_by_state.items():
        if len(finals) == len(config.target_states):
            learned = _ranking(finals)
            ranking[algorithm] = {"order": learned,
                                  "matches_oracle": learned == oracle_order}

    summary: dict = {
        "arm": config.arm,
        "num_states": arm.num_states,
        "band_half_width": BAND_HALF_WIDTH,
        "oracle": {str(s): lam_star[s] for s in sorted(lam_star)},
        "num_trials": config.num_trials,
        "convergence": convergence,
        "ranking": ranking,
    }

    # -- diagnostics pass ------------------------------------------------
    if plan.enabled:
        fmap = one_hot_features(arm.num_states)
        s1 = plan.lyapunov_state
        state0 = s1 - 1
        run_cfg = config.train_config("neural")
        ref_cfg = dataclasses.replace(run_cfg,
                                      iterations=plan.reference_iterations)
        lyap_jobs = [(arm, state0, trial, run_cfg, ref_cfg)
                     for trial in range(config.num_trials)]
        lyap_out = _map_jobs(_lyapunov_job, lyap_jobs, config.workers)

        curves_m, curves_mhat, lyap_trials, ks = [], [], [], None
        for status, key, value in lyap_out:
            trial = key[2]
            if status == "abort":
                aborts.append(value)
                continue
            records, reference = value
            emit_csv(f"diagnostics/lyapunov_state{s1}_trial{trial:03d}.csv",
                     DIAGNOSTICS_HEADER,
                     [(rec.k, rec.theta_residual, rec.lambda_residual,
                       rec.theta_residual_lin, rec.lambda_residual_lin,
                       rec.lyapunov_m, rec.lyapunov_m_hat, rec.ratio)
                      for rec in records])
            for tag, vec in (("full", reference.theta_star),
                             ("lin", reference.theta0_star)):
                path = out / f"references/state{s1}_trial{trial:03d}_{tag}.net"
                path.parent.mkdir(parents=True, exist_ok=True)
                save_net(with_theta(reference.net, vec), path)
                written.append(path)
            ks = [rec.k for rec in records]
            curves_m.append([rec.lyapunov_m for rec in records])
            curves_mhat.append([rec.lyapunov_m_hat for rec in records])
            lyap_trials.append(trial)

        lyap_block: dict = {"state": s1, "trials": lyap_trials,
                            "reference_iterations": plan.reference_iterations}
        if curves_m:
            e_m = np.mean(curves_m, axis=0)
            e_mhat = np.mean(curves_mhat, axis=0)
            i100 = int(np.searchsorted(ks, 100))
            lyap_block.update({
                "k": ks, "e_m": e_m, "e_m_hat": e_mhat,
                "value_at_100": float(e_m[i100]),
                "final": float(e_m[-1]),
                "decay_ratio": float(e_m[-1] / e_m[i100]),
                "loglog_slope": _loglog_slope(ks, e_m, 1000),
            })
        summary["lyapunov"] = lyap_block

        c0_block: dict = {"widths": list(plan.c0_widths),
                          "seeds": list(plan.c0_seeds),
                          "budget": plan.c0_budget, "target_state": s1}
        try:
            c0_states = diag.c0_estimate(arm, fmap, plan.c0_widths,
                                         plan.c0_budget, plan.c0_seeds,
                                         target_state=state0, config=ref_cfg)
            c0_block["mean"] = [c.value for c in c0_states]
            c0_block["per_seed"] = {str(c.m): c.per_seed for c in c0_states}
        except (DivergenceError, ReferenceUnavailableError) as exc:
            aborts.append({"stage": "c0", "algorithm": "neural",
                           "state": s1, "trial": -1,
                           "error_type": type(exc).__name__,
                           "message": str(exc)})
        summary["c0"] = c0_block

        gap_block: dict = {"radius": plan.gap_radius,
                           "num_probes": plan.gap_probes,
                           "num_seeds": plan.gap_seeds,
                           "per_seed": {}, "mean": {}}
        for m in plan.gap_widths:
            vals = []
            for i in range(plan.gap_seeds):
                rng = np.random.default_rng(
                    derive_seed(config.seed, STREAM_GAP, int(m), i))
                net = init_net(int(m), fmap.dim, rng)
                vals.append(diag.linearization_gap(net, fmap,
                                                   plan.gap_radius,
                                                   plan.gap_probes, rng))
            gap_block["per_seed"][str(int(m))] = vals
            gap_block["mean"][str(int(m))] = float(np.mean(vals))
        summary["linearization_gap"] = gap_block

        lip_rng = np.random.default_rng(
            derive_seed(config.seed, STREAM_LIPSCHITZ))
        lip_net = init_net(config.params["neural"].width, fmap.dim, lip_rng)
        report = diag.lipschitz_probe(arm, fmap, lip_net,
                                      plan.lipschitz_pairs, lip_rng)
        summary["lipschitz"] = {
            "num_pairs": report.num_pairs,
            "violations": report.violations,
            "skipped": report.skipped,
            "max_ratio_h": report.max_ratio_h,
            "max_ratio_g": report.max_ratio_g,
            "max_ratio_y": report.max_ratio_y,
            "clean": report.clean,
        }

        summary["kappa"] = diag.kappa_estimate(arm)
        summary["mixing_time"] = {
            "policy": "uniform",
            "delta": plan.mixing_delta,
            "tau": diag.mixing_time_estimate(arm, delta=plan.mixing_delta),
        }

    summary_path = out / "summary.json"
    write_json(summary_path, summary)
    written.append(summary_path)

    # -- manifest ---------------------------------------------------------
    inventory = {str(p.relative_to(out)): {"sha256": _sha256(p),
                                           "bytes": p.stat().st_size}
                 for p in written}
    finished_utc = datetime.datetime.now(datetime.timezone.utc).isoformat()
    manifest = RunManifest(
        config_hash=config_digest(config),
        config=config_dict(config),
        seeds=seeds,
        files=dict(sorted(inventory.items())),
        oracle={str(s): lam_star[s] for s in sorted(lam_star)},
        backend=backend_name(),
        aborts=sorted(aborts, key=lambda a: (a["stage"], a["algorithm"],
                                             a["state"], a["trial"])),
        calibration={
            "iterations": {name: config.params[name].iterations
                           for name in config.algorithms},
            "note": ("5e4-step default kept after the calibration pass; "
                     "the slow-timescale step sizes are summable, so longer "
                     "budgets move the final estimates by less than 0.3 and "
                     "cannot re-center them"),
        },
        timing={"started_utc": started_utc, "finished_utc": finished_utc,
                "seconds": time.time() - started},
        output_dir=out,
    )
    write_json(out / "manifest.json", manifest.as_dict())
    return manifest
