"""Restless-arm models and feature maps.

A single arm is a two-action MDP: action 1 engages the arm, action 0 rests
it. Kernels are row-stochastic S x S matrices, rewards an S x 2 table.
States are 0-indexed everywhere inside the library; anything printed or
written to disk uses 1-indexed state labels, and violation messages below
follow that convention.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ROW_SUM_TOL = 1e-12
FEATURE_NORM_TOL = 1e-12


@dataclass
class ArmModel:
    """One restless arm. Construction does not validate; see validate()."""

    num_states: int
    kernel_passive: np.ndarray  # (S, S), rows sum to 1
    kernel_active: np.ndarray   # (S, S)
    reward: np.ndarray          # (S, 2), column a is r(s, a)

    def kernels(self) -> np.ndarray:
        """Both kernels stacked as a (2, S, S) array indexed by action."""
        return np.stack([self.kernel_passive, self.kernel_active])


@dataclass
class FeatureMap:
    """Feature vectors phi(s, a) in R^d for every state-action pair."""

    dim: int
    table: np.ndarray  # (S, 2, d)

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    def vector(self, state: int, action: int) -> np.ndarray:
        return self.table[state, action]

    def matrix(self) -> np.ndarray:
        """(2S, d) feature matrix with pair index p = action * S + state."""
        s, _, d = self.table.shape
        out = np.empty((2 * s, d))
        out[:s] = self.table[:, 0, :]
        out[s:] = self.table[:, 1, :]
        return out


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    next_state: int
    reward: float


def _as_matrix(x, shape) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValidationError(f"expected array of shape {shape}, got {a.shape}")
    return a


def validate(arm: ArmModel) -> list[str]:
    """Return a list of invariant violations; empty iff the arm is valid."""
    out: list[str] = []
    s = arm.num_states
    if not isinstance(s, (int, np.integer)) or s < 2:
        out.append(f"num_states must be an integer >= 2, got {s!r}")
        return out
    for name, kern in (("kernel_passive", arm.kernel_passive),
                       ("kernel_active", arm.kernel_active)):
        k = np.asarray(kern, dtype=float)
        if k.shape != (s, s):
            out.append(f"{name} must have shape ({s}, {s}), got {k.shape}")
            continue
        if not np.all(np.isfinite(k)):
            out.append(f"{name} contains non-finite entries")
            continue
        neg_rows = np.where((k < 0).any(axis=1))[0]
        for i in neg_rows:
            out.append(f"{name} row {i + 1} has a negative entry")
        sums = k.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
        for i in bad:
            out.append(f"{name} row {i + 1} sums to {sums[i]!r}, expected 1")
    r = np.asarray(arm.reward, dtype=float)
    if r.shape != (s, 2):
        out.append(f"reward must have shape ({s}, 2), got {r.shape}")
    elif not np.all(np.isfinite(r)):
        out.append("reward contains non-finite entries")
    return out


def check_arm(arm: ArmModel) -> ArmModel:
    """Raise ValidationError if the arm violates any invariant."""
    violations = validate(arm)
    if violations:
        raise ValidationError(
            "invalid arm: " + "; ".join(violations), violations)
    return arm


def validate_feature_map(fmap: FeatureMap) -> list[str]:
    out: list[str] = []
    t = np.asarray(fmap.table, dtype=float)
    if t.ndim != 3 or t.shape[1] != 2 or t.shape[2] != fmap.dim:
        out.append(f"feature table must have shape (S, 2, {fmap.dim}), "
                   f"got {t.shape}")
        return out
    if t.shape[0] < 2:
        out.append("feature table needs at least 2 states")
    if not np.all(np.isfinite(t)):
        out.append("feature table contains non-finite entries")
        return out
    norms = np.linalg.norm(t, axis=2)
    bad = np.argwhere(norms > 1.0 + FEATURE_NORM_TOL)
    for s, a in bad:
        out.append(f"phi(state {s + 1}, action {a}) has norm "
                   f"{norms[s, a]!r} > 1")
    flat = t.reshape(-1, fmap.dim)
    if np.linalg.matrix_rank(flat) < flat.shape[0]:
        out.append("feature vectors are linearly dependent")
    return out


def check_feature_map(fmap: FeatureMap) -> FeatureMap:
    violations = validate_feature_map(fmap)
    if violations:
        raise ValidationError(
            "invalid feature map: " + "; ".join(violations), violations)
    return fmap


def make_arm(kernel_passive, kernel_active, reward) -> ArmModel:
    """Validating constructor from array-likes."""
    kp = np.asarray(kernel_passive, dtype=float)
    if kp.ndim != 2 or kp.shape[0] != kp.shape[1]:
        raise ValidationError(f"kernel must be square, got shape {kp.shape}")
    s = kp.shape[0]
    arm = ArmModel(
        num_states=s,
        kernel_passive=kp,
        kernel_active=_as_matrix(kernel_active, (s, s)),
        reward=_as_matrix(reward, (s, 2)),
    )
    return check_arm(arm)


def circulant_instance() -> ArmModel:
    """The 4-state circulant arm used throughout the experiments.

    Engaging shifts the state up by one (mod 4) with probability 1/2, resting
    shifts it down; rewards depend only on the state: (-1, 0, 0, 1).
    """
    active = np.array([
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.0, 0.5, 0.5],
        [0.5, 0.0, 0.0, 0.5],
    ])
    passive = np.array([
        [0.5, 0.0, 0.0, 0.5],
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.0, 0.5, 0.5],
    ])
    state_reward = np.array([-1.0, 0.0, 0.0, 1.0])
    reward = np.stack([state_reward, state_reward], axis=1)
    return make_arm(passive, active, reward)


def one_hot_features(num_states: int) -> FeatureMap:
    """Orthonormal indicator features, phi(s, a) = e_{a*S+s}, d = 2S."""
    s = int(num_states)
    if s < 2:
        raise ValidationError(f"num_states must be >= 2, got {num_states}")
    d = 2 * s
    table = np.zeros((s, 2, d))
    for a in (0, 1):
        for st in range(s):
            table[st, a, a * s + st] = 1.0
    return FeatureMap(dim=d, table=table)


def sample_next(arm: ArmModel, state: int, action: int,
                rng: np.random.Generator) -> Transition:
    """Draw one transition. Same rng state and inputs give the same output."""
    s = arm.num_states
    if not 0 <= state < s:
        raise ValidationError(f"state {state} out of range [0, {s})")
    if action not in (0, 1):
        raise ValidationError(f"action must be 0 or 1, got {action}")
    row = (arm.kernel_active if action == 1 else arm.kernel_passive)[state]
    u = rng.random()
    nxt = s - 1  # unreachable for valid rows except rounding dust at u ~ 1
    acc = 0.0
    for j in range(s):
        acc += row[j]
        if u < acc:
            nxt = j
            break
    return Transition(state=state, action=action, next_state=nxt,
                      reward=float(arm.reward[state, action]))


def random_arm(num_states: int, rng: np.random.Generator) -> ArmModel:
    """Random valid arm: Dirichlet kernel rows, rewards uniform in [-1, 1]."""
    s = int(num_states)
    alpha = np.ones(s)
    passive = rng.dirichlet(alpha, size=s)
    active = rng.dirichlet(alpha, size=s)
    # Renormalize rows exactly so the row-sum invariant holds at 1e-12.
    passive /= passive.sum(axis=1, keepdims=True)
    active /= active.sum(axis=1, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(s, 2))
    return make_arm(passive, active, reward)


def load_arm(path) -> ArmModel:
    """Load an arm from a TOML file.

    Expected keys: num_states, kernel_passive, kernel_active, reward
    (nested arrays). Inputs failing validation are rejected, never repaired.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    missing = [k for k in ("num_states", "kernel_passive", "kernel_active",
                           "reward") if k not in data]
    if missing:
        raise ValidationError(f"arm file {path} missing keys: {missing}")
    s = data["num_states"]
    if not isinstance(s, int) or s < 2:
        raise ValidationError(f"num_states must be an integer >= 2, got {s!r}")
    arm = ArmModel(
        num_states=s,
        kernel_passive=_as_matrix(data["kernel_passive"], (s, s)),
        kernel_active=_as_matrix(data["kernel_active"], (s, s)),
        reward=_as_matrix(data["reward"], (s, 2)),
    )
    return check_arm(arm)


def load_feature_map(path) -> FeatureMap:
    """Load a feature map from a TOML file with keys dim and table."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    if "dim" not in data or "table" not in data:
        raise ValidationError(f"feature file {path} needs keys dim and table")
    d = data["dim"]
    table = np.asarray(data["table"], dtype=float)
    if table.ndim != 3:
        raise ValidationError(
            f"feature table must be S x 2 x d nested arrays, got shape "
            f"{table.shape}")
    return check_feature_map(FeatureMap(dim=int(d), table=table))
