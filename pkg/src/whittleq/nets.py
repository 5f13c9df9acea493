"""Two-layer ReLU value network and its frozen linearization.

f(theta; phi) = (1/sqrt(m)) * sum_r b_r * relu(w_r . phi) with the output
signs b_r fixed at initialization. The learnable parameter theta is the
flattened row-major weight matrix W; b is excluded. The linearized variant
freezes every ReLU indicator at the initial weights W0, making f0 exactly
linear in theta. Indicators are strict (w . phi > 0), so the kink at zero
contributes nothing to either value or gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arms import FeatureMap
from .errors import ValidationError


@dataclass
class TwoLayerReluNet:
    width: int
    output_signs: np.ndarray  # (m,), entries +-1
    weights: np.ndarray       # (m, d), the current W
    init_weights: np.ndarray  # (m, d), frozen W0

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class LinearApproximator:
    weights: np.ndarray  # (d,)


def init_net(width: int, dim: int, rng: np.random.Generator) -> TwoLayerReluNet:
    """Fresh net: b_r uniform on {-1, +1}, rows of W drawn N(0, I_d / d).

    Draw order (signs first, then weights) is part of the determinism
    contract; weights equal init_weights at construction.
    """
    if width < 1 or dim < 1:
        raise ValidationError(f"width and dim must be >= 1, got {width}, {dim}")
    signs = 2.0 * rng.integers(0, 2, size=width).astype(float) - 1.0
    w = rng.standard_normal((width, dim)) / np.sqrt(dim)
    return TwoLayerReluNet(width=width, output_signs=signs,
                           weights=w.copy(), init_weights=w.copy())


def _check_phi(net: TwoLayerReluNet, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (net.dim,):
        raise ValidationError(
            f"feature vector has shape {phi.shape}, net expects ({net.dim},)")
    return phi


def forward(net: TwoLayerReluNet, phi) -> float:
    phi = _check_phi(net, phi)
    pre = net.weights @ phi
    return float(net.output_signs @ np.maximum(pre, 0.0)
                 / np.sqrt(net.width))


def forward_linearized(net: TwoLayerReluNet, phi) -> float:
    """f0: current pre-activations gated by the initial-weight indicators."""
    phi = _check_phi(net, phi)
    pre = net.weights @ phi
    gate = (net.init_weights @ phi) > 0.0
    return float(net.output_signs @ np.where(gate, pre, 0.0)
                 / np.sqrt(net.width))


def grad(net: TwoLayerReluNet, phi, linearized: bool = False) -> np.ndarray:
    """Gradient of f (or f0) in theta, flattened row-major, shape (m*d,).

    Block r is (1/sqrt(m)) * b_r * 1{w . phi > 0} * phi, with w taken from
    the current weights for f and from init_weights for f0.
    """
    phi = _check_phi(net, phi)
    ref = net.init_weights if linearized else net.weights
    gate = (ref @ phi) > 0.0
    scale = net.output_signs * gate / np.sqrt(net.width)
    return np.outer(scale, phi).ravel()


def mean_offset(net: TwoLayerReluNet, fmap: FeatureMap,
                linearized: bool = False) -> float:
    """(1 / 2S) * sum_s [f(phi(s,0)) + f(phi(s,1))], the gain proxy I(theta).

    Summed state-major, matching the training kernels term for term.
    """
    f = forward_linearized if linearized else forward
    s = fmap.num_states
    acc = 0.0
    for st in range(s):
        acc += f(net, fmap.table[st, 0]) + f(net, fmap.table[st, 1])
    return acc / (2.0 * s)


def f_table(net: TwoLayerReluNet, fmap: FeatureMap,
            linearized: bool = False) -> np.ndarray:
    """All 2S values as a vector indexed by pair p = a*S + s."""
    feats = fmap.matrix()
    if feats.shape[1] != net.dim:
        raise ValidationError(
            f"feature dim {feats.shape[1]} does not match net dim {net.dim}")
    pre = net.weights @ feats.T            # (m, 2S)
    ref = net.init_weights @ feats.T if linearized else pre
    act = np.where(ref > 0.0, pre, 0.0)
    return (net.output_signs @ act) / np.sqrt(net.width)


def theta(net: TwoLayerReluNet) -> np.ndarray:
    """Flattened row-major copy of the current weights."""
    return net.weights.ravel().copy()


def with_theta(net: TwoLayerReluNet, theta_vec: np.ndarray) -> TwoLayerReluNet:
    """New net sharing b and W0 but with weights set from a flat vector."""
    theta_vec = np.asarray(theta_vec, dtype=float)
    if theta_vec.size != net.width * net.dim:
        raise ValidationError(
            f"theta has {theta_vec.size} entries, expected "
            f"{net.width * net.dim}")
    return TwoLayerReluNet(
        width=net.width,
        output_signs=net.output_signs,
        weights=theta_vec.reshape(net.width, net.dim).copy(),
        init_weights=net.init_weights,
    )


def linear_forward(lin: LinearApproximator, phi) -> float:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != lin.weights.shape:
        raise ValidationError(
            f"feature vector has shape {phi.shape}, approximator expects "
            f"{lin.weights.shape}")
    return float(lin.weights @ phi)


def linear_grad(lin: LinearApproximator, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != lin.weights.shape:
        raise ValidationError(
            f"feature vector has shape {phi.shape}, approximator expects "
            f"{lin.weights.shape}")
    return phi.copy()


def save_net(net: TwoLayerReluNet, path) -> None:
    """Flat text dump: 'm,d' header, b row, m rows of W, m rows of W0."""
    rows = [f"{net.width},{net.dim}",
            ",".join(repr(float(x)) for x in net.output_signs)]
    rows += [",".join(repr(float(x)) for x in row) for row in net.weights]
    rows += [",".join(repr(float(x)) for x in row) for row in net.init_weights]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(rows) + "\n")


def load_net(path) -> TwoLayerReluNet:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        m, d = (int(x) for x in lines[0].split(","))
        signs = np.array([float(x) for x in lines[1].split(",")])
        need = 2 + 2 * m
        if len(lines) != need or signs.shape != (m,):
            raise ValueError(f"expected {need} lines for width {m}")
        w = np.array([[float(x) for x in ln.split(",")]
                      for ln in lines[2:2 + m]])
        w0 = np.array([[float(x) for x in ln.split(",")]
                       for ln in lines[2 + m:]])
        if w.shape != (m, d) or w0.shape != (m, d):
            raise ValueError("weight block shape mismatch")
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed net dump {path}: {exc}") from exc
    return TwoLayerReluNet(width=m, output_signs=signs, weights=w,
                           init_weights=w0)
