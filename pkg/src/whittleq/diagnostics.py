"""Analysis quantities for recorded or replayed training runs.

Everything here runs offline: the indifference map y(theta), coupled-residual
Lyapunov values M (against the true network) and M-hat (against the local
linearization frozen at the initial weights), the f vs f0 gap, empirical
Lipschitz probes for the drift operators, the kernel-row similarity constant
kappa, the total-variation mixing time of the frozen-policy chain, and the
c0 ratio linking the two stationary points.

Reference points theta_star / theta0_star have no closed form; they are
proxied by long runs that met the stabilization criterion (subsidy
oscillation below LAM_OSC_TOL over the trailing window and a final gradient
step below STEP_NORM_TOL).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import STREAM_C0, derive_seed
from .arms import ArmModel, FeatureMap, check_arm, one_hot_features
from .errors import (AssumptionViolationError, ReferenceUnavailableError,
                     ValidationError)
from .exact import whittle_index_exact
from .learners import StepSchedule, TrainConfig, TrainResult, prepare_run, train_index
from .nets import TwoLayerReluNet, f_table, grad, mean_offset, with_theta

LAM_OSC_TOL = 1e-2
STEP_NORM_TOL = 1e-5
INDETERMINATE_DENOM = 1e-10
LIPSCHITZ_SLACK = 1e-9
MIXING_CAP = 100_000
STATIONARY_TOL = 1e-13


@dataclass
class ReferenceSolution:
    """Converged-run proxies for the two stationary points of one target.

    theta_star comes from a long run of the true network, theta0_star from a
    run of its local linearization sharing the same initialization and
    uniform stream. net is the template carrying the frozen output signs and
    initial weights both runs started from. lambda_star is the exact oracle
    index of the target state.
    """

    target_state: int
    theta_star: np.ndarray
    theta0_star: np.ndarray | None
    lambda_star: float
    net: TwoLayerReluNet | None
    provenance: dict = field(default_factory=dict)


@dataclass
class DiagnosticsRecord:
    k: int
    theta_residual: float
    lambda_residual: float
    theta_residual_lin: float
    lambda_residual_lin: float
    lyapunov_m: float
    lyapunov_m_hat: float
    ratio: float


def converged(result: TrainResult, lam_osc_tol: float = LAM_OSC_TOL,
              step_norm_tol: float = STEP_NORM_TOL) -> bool:
    """Stabilization criterion for reference runs: the subsidy moved less
    than lam_osc_tol over the trailing window and the final parameter step
    was shorter than step_norm_tol."""
    return (result.lam_osc < lam_osc_tol
            and result.last_step_norm < step_norm_tol)


def y_of_theta(arm: ArmModel, fmap: FeatureMap, net: TwoLayerReluNet,
               target_state: int, linearized: bool = False) -> float:
    """The subsidy at which the target state would be indifferent if the
    current value estimates were exact:

        r(s,1) - r(s,0) + sum_s' [p(s'|s,1) - p(s'|s,0)] max_a f(s',a)

    with f evaluated through the true forward pass or the linearized one.
    Ties in the max resolve to the passive action (same value either way).
    """
    S = arm.num_states
    if not 0 <= target_state < S:
        raise ValidationError(
            f"target_state {target_state} out of range for {S} states")
    ftab = f_table(net, fmap, linearized=linearized)
    values = np.maximum(ftab[:S], ftab[S:])
    s = target_state
    kernel_gap = arm.kernel_active[s] - arm.kernel_passive[s]
    return float(arm.reward[s, 1] - arm.reward[s, 0] + kernel_gap @ values)


def lyapunov(theta_k, lambda_k: float, k: int, schedule: StepSchedule,
             reference: ReferenceSolution, arm: ArmModel, fmap: FeatureMap,
             which: str = "M") -> float:
    """Coupled residual at step k:

        (eta_k / alpha_k) ||theta_k - theta_ref||^2 + |lambda_k - y(theta_k)|^2

    with (theta_ref, y) = (theta_star, true-net y) for "M" and
    (theta0_star, linearized y) for "Mhat".
    """
    if which in ("M",):
        theta_ref, linearized = reference.theta_star, False
    elif which in ("Mhat", "M_hat", "M̂"):
        theta_ref, linearized = reference.theta0_star, True
    else:
        raise ValidationError(f"which must be 'M' or 'Mhat', got {which!r}")
    if theta_ref is None or reference.net is None:
        raise ReferenceUnavailableError(
            f"reference solution lacks the pieces needed for {which}")
    theta_k = np.asarray(theta_k, dtype=float)
    net_k = with_theta(reference.net, theta_k)
    y = y_of_theta(arm, fmap, net_k, reference.target_state,
                   linearized=linearized)
    ratio = schedule.ratio(k)
    return (ratio * float(np.sum((theta_k - theta_ref) ** 2))
            + (float(lambda_k) - y) ** 2)


def span_seminorm(v) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValidationError("span_seminorm needs a nonempty vector")
    return float(np.max(v) - np.min(v))


def linearization_gap(net: TwoLayerReluNet, fmap: FeatureMap, radius: float,
                      num_probes: int, rng: np.random.Generator) -> float:
    """Largest |f(theta') - f0(theta')| over all pairs and num_probes points
    theta' on the sphere of the given radius around the initial weights."""
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    if radius == 0.0 or num_probes <= 0:
        return 0.0
    theta0 = net.init_weights.ravel()
    worst = 0.0
    for _ in range(num_probes):
        direction = rng.standard_normal(theta0.size)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            continue
        probe = theta0 + (radius / norm) * direction
        worst = max(worst, gap_at(net, fmap, probe))
    return worst


def gap_at(net: TwoLayerReluNet, fmap: FeatureMap, theta_vec) -> float:
    """max over (s,a) of |f(theta) - f0(theta)| at one parameter point."""
    probe_net = with_theta(net, np.asarray(theta_vec, dtype=float))
    diff = f_table(probe_net, fmap) - f_table(probe_net, fmap, linearized=True)
    return float(np.max(np.abs(diff)))


@dataclass
class LipschitzReport:
    num_pairs: int
    max_ratio_h: float
    max_ratio_g: float
    max_ratio_y: float
    violations: int
    skipped: int
    bound_h: tuple = (3.0, 1.0)
    bound_g: float = 2.0
    bound_y: float = 2.0

    @property
    def clean(self) -> bool:
        return self.violations == 0


def _delta0(arm, fmap, net, s, a, s_next, lam):
    """TD quantity under the linearized function for the triple (s,a,s')."""
    ftab = f_table(net, fmap, linearized=True)
    S = arm.num_states
    fmax = max(ftab[s_next], ftab[S + s_next])
    ioff = mean_offset(net, fmap, linearized=True)
    return (arm.reward[s, a] + (1.0 - a) * lam - ioff + fmax
            - ftab[a * S + s])


def lipschitz_probe(arm: ArmModel, fmap: FeatureMap, net: TwoLayerReluNet,
                    num_pairs: int, rng: np.random.Generator) -> LipschitzReport:
    """Empirical check of the drift operators' Lipschitz bounds.

    For random parameter pairs (scale-1 Gaussian coordinates), random
    subsidies, and uniformly sampled valid transition triples, measures

        ||h0(X,th1,l1) - h0(X,th2,l2)||  against  3||dtheta|| + |dlam|
        |g0(th1) - g0(th2)|              against  2||dtheta||
        |y0(th1) - y0(th2)|              against  2||dtheta||

    and reports the worst ratios. Pairs whose denominator vanishes are
    skipped (degenerate, ratio undefined). A ratio above 1 + 1e-9 counts as
    a violation.
    """
    check_arm(arm)
    S = arm.num_states
    dim = net.width * net.dim
    max_h = 0.0
    max_g = 0.0
    max_y = 0.0
    violations = 0
    skipped = 0
    for _ in range(num_pairs):
        th1 = rng.standard_normal(dim)
        th2 = rng.standard_normal(dim)
        l1, l2 = rng.standard_normal(2)
        s = int(rng.integers(S))
        a = int(rng.integers(2))
        s_vis = int(rng.integers(S))
        a_vis = int(rng.integers(2))
        row = arm.kernels()[a_vis, s_vis]
        support = np.flatnonzero(row > 0.0)
        s_next = int(support[rng.integers(support.size)])

        net1 = with_theta(net, th1)
        net2 = with_theta(net, th2)
        dtheta = float(np.linalg.norm(th1 - th2))
        dlam = abs(l1 - l2)

        g_grad = grad(net, fmap.table[s_vis, a_vis], linearized=True)
        d1 = _delta0(arm, fmap, net1, s_vis, a_vis, s_next, l1)
        d2 = _delta0(arm, fmap, net2, s_vis, a_vis, s_next, l2)
        num_h = float(np.linalg.norm(g_grad * (d1 - d2)))
        den_h = 3.0 * dtheta + dlam

        ft1 = f_table(net1, fmap, linearized=True)
        ft2 = f_table(net2, fmap, linearized=True)
        num_g = abs((ft1[S + s] - ft1[s]) - (ft2[S + s] - ft2[s]))
        num_y = abs(y_of_theta(arm, fmap, net1, s, linearized=True)
                    - y_of_theta(arm, fmap, net2, s, linearized=True))
        den_gy = 2.0 * dtheta

        ratios = []
        for num, den in ((num_h, den_h), (num_g, den_gy), (num_y, den_gy)):
            if den < 1e-15:
                skipped += 1
                ratios.append(None)
                continue
            ratio = num / den
            if ratio > 1.0 + LIPSCHITZ_SLACK:
                violations += 1
            ratios.append(ratio)
        if ratios[0] is not None:
            max_h = max(max_h, ratios[0])
        if ratios[1] is not None:
            max_g = max(max_g, ratios[1])
        if ratios[2] is not None:
            max_y = max(max_y, ratios[2])
    return LipschitzReport(num_pairs=num_pairs, max_ratio_h=max_h,
                           max_ratio_g=max_g, max_ratio_y=max_y,
                           violations=violations, skipped=skipped)


def kappa_estimate(arm: ArmModel) -> float:
    """Worst-case total-variation distance between any two kernel rows,
    over both actions: kappa in [0, 1], zero only when every row is the
    same distribution."""
    check_arm(arm)
    rows = np.vstack([arm.kernel_passive, arm.kernel_active])
    pairwise = 0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)
    return float(pairwise.max())


def uniform_policy(num_states: int) -> np.ndarray:
    return np.full((num_states, 2), 0.5)


def mixing_time_tv(matrix: np.ndarray, delta: float,
                   cap: int = MIXING_CAP) -> int:
    """Smallest k >= 1 with max_x TV(P^k(x, .), mu) <= delta.

    mu is found by power iteration; a chain that fails to settle (periodic)
    or whose rows never approach mu (reducible) raises an assumption
    violation once the cap is hit.
    """
    P = np.asarray(matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"matrix must be square, got {P.shape}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    n = P.shape[0]
    mu = np.full(n, 1.0 / n)
    for _ in range(cap):
        nxt = mu @ P
        if float(np.abs(nxt - mu).sum()) < STATIONARY_TOL:
            mu = nxt
            break
        mu = nxt
    else:
        raise AssumptionViolationError(
            "stationary distribution did not settle within the iteration "
            "cap; the chain is periodic or otherwise violates the "
            "irreducible-aperiodic assumption")
    power = P.copy()
    for k in range(1, cap + 1):
        tv = float(0.5 * np.abs(power - mu[None, :]).sum(axis=1).max())
        if tv <= delta:
            return k
        power = power @ P
    raise AssumptionViolationError(
        f"rows failed to mix to the stationary distribution within {cap} "
        "steps; the chain is reducible or otherwise violates the "
        "irreducible-aperiodic assumption")


def transition_chain(arm: ArmModel, policy: np.ndarray) -> tuple:
    """Explicit chain on triples X = (s, a, s') induced by a frozen policy.

    Returns (triples, matrix) where triples is the list of (s, a, s') with
    positive policy and kernel probability, and matrix is the row-stochastic
    transition matrix between them.
    """
    check_arm(arm)
    policy = np.asarray(policy, dtype=float)
    S = arm.num_states
    if policy.shape != (S, 2):
        raise ValidationError(
            f"policy must have shape ({S}, 2), got {policy.shape}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("policy rows must be distributions over the "
                              "two actions")
    P = arm.kernels()
    triples = [(s, a, s2)
               for s in range(S) for a in range(2) for s2 in range(S)
               if policy[s, a] > 0.0 and P[a, s, s2] > 0.0]
    index = {x: i for i, x in enumerate(triples)}
    n = len(triples)
    T = np.zeros((n, n))
    for (s, a, s2), i in index.items():
        for a2 in range(2):
            if policy[s2, a2] <= 0.0:
                continue
            for s3 in range(S):
                if P[a2, s2, s3] <= 0.0:
                    continue
                T[i, index[(s2, a2, s3)]] = policy[s2, a2] * P[a2, s2, s3]
    return triples, T


def mixing_time_estimate(arm: ArmModel, policy=None, delta: float = 1e-3,
                         cap: int = MIXING_CAP) -> int:
    """TV mixing time of the (state, action, next-state) chain under a
    frozen policy (uniform by default)."""
    if policy is None:
        policy = uniform_policy(arm.num_states)
    _, T = transition_chain(arm, policy)
    return mixing_time_tv(T, delta, cap=cap)


def reference_solution(arm: ArmModel, fmap: FeatureMap | None,
                       target_state: int, config: TrainConfig,
                       trial: int = 0, backend=None) -> ReferenceSolution:
    """Long-run proxies (theta_star, theta0_star) for one target state.

    Runs the true network and its linearization from a shared
    initialization and uniform stream (the derived seed depends only on
    (config.seed, target, trial)), and requires both runs to meet the
    stabilization criterion.
    """
    if fmap is None:
        fmap = one_hot_features(arm.num_states)
    full_cfg = config if not config.linearized else _with(config,
                                                          linearized=False)
    lin_cfg = _with(config, linearized=True)
    full = train_index(arm, target_state, "neural", full_cfg, fmap=fmap,
                       backend=backend, trial=trial)
    lin = train_index(arm, target_state, "neural", lin_cfg, fmap=fmap,
                      backend=backend, trial=trial)
    for tag, run in (("full", full), ("linearized", lin)):
        if not converged(run):
            raise ReferenceUnavailableError(
                f"{tag} reference run for state {target_state + 1} did not "
                f"stabilize: trailing subsidy oscillation "
                f"{run.lam_osc:.3e} (tolerance {LAM_OSC_TOL}), final step "
                f"norm {run.last_step_norm:.3e} (tolerance {STEP_NORM_TOL})")
    template = TwoLayerReluNet(width=full.net.width,
                               output_signs=full.net.output_signs,
                               weights=full.net.init_weights.copy(),
                               init_weights=full.net.init_weights)
    lam_star = whittle_index_exact(arm, target_state)
    return ReferenceSolution(
        target_state=target_state,
        theta_star=full.theta_final,
        theta0_star=lin.theta_final,
        lambda_star=float(lam_star),
        net=template,
        provenance={
            "iterations": config.iterations,
            "seed": config.seed,
            "trial": trial,
            "full_lam_final": full.lam_final,
            "linearized_lam_final": lin.lam_final,
            "full_lam_osc": full.lam_osc,
            "linearized_lam_osc": lin.lam_osc,
        })


def _with(config: TrainConfig, **changes) -> TrainConfig:
    from dataclasses import replace
    return replace(config, **changes)


def measure_run(arm: ArmModel, target_state: int, config: TrainConfig,
                reference: ReferenceSolution,
                fmap: FeatureMap | None = None, trial: int = 0,
                backend=None) -> list[DiagnosticsRecord]:
    """Replay one true-network run and record the coupled residuals at every
    checkpoint. The replay reuses the training seed derivation, so the
    trajectory is identical to the recorded one for the same arguments."""
    if fmap is None:
        fmap = one_hot_features(arm.num_states)
    if reference.theta_star is None or reference.theta0_star is None:
        raise ReferenceUnavailableError(
            "measure_run needs both reference points")
    if config.linearized:
        config = _with(config, linearized=False)
    handle = prepare_run(arm, target_state, "neural", config, fmap=fmap,
                         backend=backend, trial=trial)
    ws = handle.ws
    schedule = config.schedule()
    every = max(config.checkpoint_every, 1)
    total = config.iterations
    records = []
    done = 0
    while done < total:
        n = min(every, total - done)
        handle.advance(n)
        done += n
        k = done
        theta_k = ws.theta()
        lam_k = float(ws.lam[target_state])
        y_true = y_of_theta(arm, fmap, ws.net, target_state)
        y_lin = y_of_theta(arm, fmap, ws.net, target_state, linearized=True)
        tr = float(np.linalg.norm(theta_k - reference.theta_star))
        tr_lin = float(np.linalg.norm(theta_k - reference.theta0_star))
        lr = abs(lam_k - y_true)
        lr_lin = abs(lam_k - y_lin)
        ratio = schedule.ratio(k)
        records.append(DiagnosticsRecord(
            k=k,
            theta_residual=tr,
            lambda_residual=lr,
            theta_residual_lin=tr_lin,
            lambda_residual_lin=lr_lin,
            lyapunov_m=ratio * tr * tr + lr * lr,
            lyapunov_m_hat=ratio * tr_lin * tr_lin + lr_lin * lr_lin,
            ratio=ratio,
        ))
    return records


@dataclass
class C0Estimate:
    m: int
    value: float | None
    per_seed: list


def c0_estimate(arm: ArmModel, fmap: FeatureMap | None, m_values,
                budget: int, seeds, target_state: int = 3,
                config: TrainConfig | None = None,
                backend=None) -> list[C0Estimate]:
    """Per-width estimates of c0 = ||theta0_star - theta_star|| divided by
    the span over all (s,a) of f0(theta0_star) - f(theta_star).

    Each (seed, m) pair trains the true network and its linearization from
    the shared initialization given by a seed derived on a dedicated stream,
    both to the stabilization criterion. Denominators below 1e-10 make that
    seed's ratio indeterminate; a width whose every seed is indeterminate
    reports None.
    """
    if fmap is None:
        fmap = one_hot_features(arm.num_states)
    if config is None:
        config = TrainConfig()
    out = []
    for m in m_values:
        per_seed = []
        for seed in seeds:
            run_seed = derive_seed(int(seed), STREAM_C0, int(m))
            cfg = _with(config, iterations=int(budget), width=int(m),
                        seed=run_seed, linearized=False)
            ref = reference_solution(arm, fmap, target_state, cfg,
                                     backend=backend)
            lin_net = with_theta(ref.net, ref.theta0_star)
            full_net = with_theta(ref.net, ref.theta_star)
            gap = (f_table(lin_net, fmap, linearized=True)
                   - f_table(full_net, fmap))
            denom = span_seminorm(gap)
            if denom < INDETERMINATE_DENOM:
                per_seed.append(None)
                continue
            per_seed.append(
                float(np.linalg.norm(ref.theta0_star - ref.theta_star))
                / denom)
        defined = [v for v in per_seed if v is not None]
        value = float(np.mean(defined)) if defined else None
        out.append(C0Estimate(m=int(m), value=value, per_seed=per_seed))
    return out
