"""Exact average-reward solver and Whittle indices.

The subsidized arm pays r(s, 0) + subsidy for resting in every state.
relative_value_iteration solves the average-reward Bellman equation for that
MDP with the span-seminorm stopping rule; whittle_index_exact finds the
subsidy that makes the target state indifferent between its two actions by
bisection on the action advantage, which is nonincreasing in the subsidy for
indexable arms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arms import ArmModel
from .errors import BracketError, NonConvergenceError, ValidationError

DP_TOL = 1e-8
INDEX_TOL = 1e-6
MAX_DP_ITER = 500_000
MAX_BRACKET_DOUBLINGS = 10


@dataclass(frozen=True)
class DpSolution:
    """Gain, relative values pinned at state 0, and the Q table."""

    gain: float
    value: np.ndarray    # (S,), value[0] == 0
    q_table: np.ndarray  # (S, 2)
    iterations: int
    residual_span: float


@dataclass(frozen=True)
class WhittleTable:
    indices: np.ndarray  # (S,)
    tolerance: float


def relative_value_iteration(arm: ArmModel, subsidy: float = 0.0,
                             tol: float = DP_TOL,
                             max_iter: int = MAX_DP_ITER,
                             v_init: np.ndarray | None = None) -> DpSolution:
    """Solve the subsidy-adjusted arm by relative value iteration.

    Stops when the span seminorm of the Bellman residual drops to tol; the
    returned values satisfy max_s |max_a Q(s, a) - V(s)| <= tol and V[0] = 0.
    Argmax ties resolve to action 0 by construction (values only are used
    here; callers comparing actions get the <= convention from q_table).
    v_init warm-starts the iteration; the fixed point reached is the same
    within tol regardless.
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    s = arm.num_states
    p_passive = np.asarray(arm.kernel_passive, dtype=float)
    p_active = np.asarray(arm.kernel_active, dtype=float)
    r = np.asarray(arm.reward, dtype=float).copy()
    r[:, 0] += subsidy

    if v_init is None:
        v = np.zeros(s)
    else:
        v = np.asarray(v_init, dtype=float).copy()
        v -= v[0]
    span = np.inf
    for it in range(1, max_iter + 1):
        q = np.empty((s, 2))
        q[:, 0] = r[:, 0] + p_passive @ v
        q[:, 1] = r[:, 1] + p_active @ v
        tv = q.max(axis=1)
        diff = tv - v
        hi = diff.max()
        lo = diff.min()
        span = hi - lo
        if span <= tol:
            gain = 0.5 * (hi + lo)
            return DpSolution(gain=float(gain), value=v.copy(),
                              q_table=q - gain, iterations=it,
                              residual_span=float(span))
        v = tv - tv[0]
    raise NonConvergenceError(
        "relative value iteration did not converge; the arm may not be "
        "unichain or tol is too tight", float(span))


def action_advantage(arm: ArmModel, state: int, subsidy: float,
                     tol: float = DP_TOL,
                     v_init: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Q(state, 1) - Q(state, 0) at the given subsidy, plus the V iterate."""
    sol = relative_value_iteration(arm, subsidy=subsidy, tol=tol,
                                   v_init=v_init)
    return float(sol.q_table[state, 1] - sol.q_table[state, 0]), sol.value


def default_bracket(arm: ArmModel) -> float:
    """Half-width R = 2 * (max r - min r + 1) of the initial search bracket."""
    r = np.asarray(arm.reward, dtype=float)
    return 2.0 * (float(r.max()) - float(r.min()) + 1.0)


def whittle_index_exact(arm: ArmModel, state: int, tol: float = INDEX_TOL,
                        bracket: tuple[float, float] | None = None,
                        with_trace: bool = False):
    """Whittle index of one state by bisection on the action advantage.

    Returns lambda with |Q(state,1) - Q(state,0)| <= tol at that subsidy.
    The bracket doubles up to MAX_BRACKET_DOUBLINGS times looking for a sign
    change; failure raises BracketError (non-indexable or degenerate arm).
    """
    if not 0 <= state < arm.num_states:
        raise ValidationError(f"state {state} out of range")
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    dp_tol = min(DP_TOL, 0.01 * tol)
    if bracket is None:
        r = default_bracket(arm)
        lo, hi = -r, r
    else:
        lo, hi = float(bracket[0]), float(bracket[1])
        if not lo < hi:
            raise ValidationError(f"bad bracket ({lo}, {hi})")

    trace: list[tuple[float, float]] = []
    v = None
    adv_lo, v = action_advantage(arm, state, lo, dp_tol, v)
    adv_hi, v = action_advantage(arm, state, hi, dp_tol, v)
    trace += [(lo, adv_lo), (hi, adv_hi)]
    doublings = 0
    # Advantage is nonincreasing in the subsidy; want adv(lo) >= 0 >= adv(hi).
    while adv_lo < 0.0 or adv_hi > 0.0:
        if doublings >= MAX_BRACKET_DOUBLINGS:
            raise BracketError(
                f"no sign change of the advantage for state {state + 1} in "
                f"[{lo}, {hi}] after {doublings} doublings")
        width = hi - lo
        if adv_lo < 0.0:
            lo -= width
            adv_lo, v = action_advantage(arm, state, lo, dp_tol, v)
            trace.append((lo, adv_lo))
        if adv_hi > 0.0:
            hi += width
            adv_hi, v = action_advantage(arm, state, hi, dp_tol, v)
            trace.append((hi, adv_hi))
        doublings += 1

    lam = 0.5 * (lo + hi)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        adv, v = action_advantage(arm, state, lam, dp_tol, v)
        trace.append((lam, adv))
        if abs(adv) <= tol:
            break
        if adv > 0.0:
            lo = lam
        else:
            hi = lam
    else:
        raise NonConvergenceError(
            f"bisection for state {state + 1} did not reach |advantage| <= "
            f"{tol}", abs(adv))
    if with_trace:
        return lam, trace
    return lam


def whittle_table(arm: ArmModel, tol: float = INDEX_TOL) -> WhittleTable:
    """Whittle indices for every state."""
    indices = np.array([whittle_index_exact(arm, s, tol=tol)
                        for s in range(arm.num_states)])
    return WhittleTable(indices=indices, tolerance=tol)


@dataclass(frozen=True)
class IndexabilityReport:
    grid: np.ndarray
    passive_sets: list[frozenset[int]]
    indexable: bool


def indexability_scan(arm: ArmModel, grid) -> IndexabilityReport:
    """Passive sets D(lambda) over a subsidy grid, and whether they nest.

    A state is passive at lambda when Q(s,0) >= Q(s,1); advantage ties go
    passive. Indexable means D is nondecreasing along the sorted grid.
    """
    lams = np.sort(np.asarray(grid, dtype=float))
    if lams.size == 0:
        raise ValidationError("indexability grid is empty")
    sets: list[frozenset[int]] = []
    v = None
    for lam in lams:
        sol = relative_value_iteration(arm, subsidy=float(lam), v_init=v)
        v = sol.value
        adv = sol.q_table[:, 1] - sol.q_table[:, 0]
        sets.append(frozenset(np.where(adv <= 0.0)[0].tolist()))
    ok = all(a <= b for a, b in zip(sets, sets[1:]))
    return IndexabilityReport(grid=lams, passive_sets=sets, indexable=ok)
