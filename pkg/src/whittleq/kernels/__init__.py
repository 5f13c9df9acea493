"""Training-loop kernels: compiled extension with a pure numpy fallback.

Both backends implement the same three chunk functions (neural_chunk,
tabular_chunk, linear_chunk) over the workspace objects defined here. A chunk
advances n steps in place, consuming exactly three pre-drawn uniforms per
step (explore coin, uniform action, next-state inverse-CDF draw), and returns
a record of the final step. The compiled backend is used when importable
unless WHITTLEQ_PURE=1 is set in the environment.

Within one backend results are bitwise reproducible. Across backends the
update formulas are identical but reduction order differs (C sequential vs
numpy pairwise), so trajectories agree to roughly 1e-9 per step and are only
compared at short horizons.
"""

from __future__ import annotations

import os

import numpy as np

from ..arms import ArmModel, FeatureMap
from ..errors import ValidationError
from . import pure

_compiled = None
if os.environ.get("WHITTLEQ_PURE", "") != "1":
    try:
        from . import _fastloops as _compiled
    except ImportError:
        _compiled = None

active = _compiled if _compiled is not None else pure


def backend_name() -> str:
    return "compiled" if active is not pure else "pure"


def get_backend(name: str):
    """Backend module by name, or None if that backend is unavailable."""
    if name == "pure":
        return pure
    if name == "compiled":
        return _compiled
    raise ValidationError(f"unknown backend {name!r}")


def _pair_matrix(fmap: FeatureMap) -> tuple[np.ndarray, np.ndarray, bool]:
    feats = np.ascontiguousarray(fmap.matrix(), dtype=float)
    gram = np.ascontiguousarray(feats @ feats.T)
    n = feats.shape[0]
    onehot = feats.shape[1] == n and np.array_equal(feats, np.eye(n))
    return feats, gram, onehot


class NeuralWorkspace:
    """Mutable per-run state for the neural learner.

    z caches the pre-activations W @ phi_p for every pair p = a*S + s and is
    maintained incrementally through the Gram matrix; ftab caches the f (or
    f0, when linearized) values for every pair.
    """

    algorithm = "neural"

    def __init__(self, arm: ArmModel, fmap: FeatureMap, net, lam_table,
                 target_state: int, epsilon: float, alpha0: float,
                 eta0: float, divergence_cap: float, linearized: bool,
                 initial_state: int):
        self.S = arm.num_states
        self.P = np.ascontiguousarray(arm.kernels(), dtype=float)
        self.rewards = np.ascontiguousarray(arm.reward, dtype=float)
        self.feats, self.gram, self.onehot = _pair_matrix(fmap)
        self.m = net.width
        self.d = net.dim
        self.inv_sqrt_m = 1.0 / float(np.sqrt(net.width))
        self.b = np.ascontiguousarray(net.output_signs, dtype=float)
        w = np.ascontiguousarray(net.weights, dtype=float)
        if w is not net.weights:
            net.weights = w  # train in place on the net's own storage
        self.W = w
        self.z = np.ascontiguousarray(w @ self.feats.T)
        z0 = net.init_weights @ self.feats.T
        self.mask0 = np.ascontiguousarray((z0 > 0.0).astype(np.uint8))
        self.linearized = bool(linearized)
        gate = self.mask0.astype(bool) if linearized else (self.z > 0.0)
        self.ftab = np.ascontiguousarray(
            (self.b @ np.where(gate, self.z, 0.0)) * self.inv_sqrt_m)
        self.lam = lam_table
        self.target = int(target_state)
        self.eps = float(epsilon)
        self.alpha0 = float(alpha0)
        self.eta0 = float(eta0)
        self.cap = float(divergence_cap)
        self.k = 0
        self.state = int(initial_state)

    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.W))

    def theta(self) -> np.ndarray:
        return self.W.ravel().copy()


class TabularWorkspace:
    algorithm = "tabular"

    def __init__(self, arm: ArmModel, q_table, counts, lam_table,
                 target_state: int, epsilon: float, alpha0: float,
                 eta0: float, divergence_cap: float, initial_state: int):
        self.S = arm.num_states
        self.P = np.ascontiguousarray(arm.kernels(), dtype=float)
        self.rewards = np.ascontiguousarray(arm.reward, dtype=float)
        self.Q = q_table
        self.counts = counts
        self.lam = lam_table
        self.target = int(target_state)
        self.eps = float(epsilon)
        self.alpha0 = float(alpha0)
        self.eta0 = float(eta0)
        self.cap = float(divergence_cap)
        self.k = 0
        self.state = int(initial_state)

    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.Q))

    def theta(self) -> np.ndarray:
        return self.Q.ravel().copy()


class LinearWorkspace:
    algorithm = "linear"

    def __init__(self, arm: ArmModel, fmap: FeatureMap, theta, counts,
                 lam_table, target_state: int, epsilon: float, alpha0: float,
                 eta0: float, divergence_cap: float, per_pair: bool,
                 initial_state: int):
        self.S = arm.num_states
        self.P = np.ascontiguousarray(arm.kernels(), dtype=float)
        self.rewards = np.ascontiguousarray(arm.reward, dtype=float)
        self.feats, self.gram, self.onehot = _pair_matrix(fmap)
        self.theta_vec = theta
        self.ftab = np.ascontiguousarray(self.feats @ theta)
        self.counts = counts
        self.lam = lam_table
        self.target = int(target_state)
        self.eps = float(epsilon)
        self.alpha0 = float(alpha0)
        self.eta0 = float(eta0)
        self.cap = float(divergence_cap)
        self.per_pair = bool(per_pair)
        self.k = 0
        self.state = int(initial_state)

    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.theta_vec))

    def theta(self) -> np.ndarray:
        return self.theta_vec.copy()
