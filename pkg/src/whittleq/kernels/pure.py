"""Pure numpy backend. Reference semantics for the compiled kernels.

Each chunk function advances the workspace n_steps iterations in place and
returns a tuple describing the final step:

    (visited, action, next_state, td_error, alpha, eta,
     lam_min, lam_max, n_active, pair)

lam_min/lam_max track the post-update subsidy over the chunk (for trailing
oscillation windows); n_active is the number of active ReLU rows at the last
update (for the last gradient-step norm); pair is a*S + s of the last visited
pair. Divergence checks: td_error must stay finite every step, |lambda| must
stay within the cap every step. The caller checks the theta norm at chunk
boundaries.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DivergenceError

ETA_EXPONENT = 4.0 / 3.0


def neural_chunk(ws, n_steps: int, uniforms: np.ndarray):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    P = ws.P
    rewards = ws.rewards
    gram = ws.gram
    feats = ws.feats
    b = ws.b
    W = ws.W
    z = ws.z
    ftab = ws.ftab
    mask0 = ws.mask0.astype(bool)
    lam = ws.lam
    t = ws.target
    S = ws.S
    eps = ws.eps
    a0 = ws.alpha0
    e0 = ws.eta0
    inv = ws.inv_sqrt_m
    onehot = ws.onehot
    linearized = ws.linearized
    cap = ws.cap
    s = ws.state
    k0 = ws.k
    two_s = 2 * S

    lam_min = math.inf
    lam_max = -math.inf
    vis = s
    a = 0
    nxt = s
    delta = 0.0
    alpha = 0.0
    eta = 0.0
    n_active = 0
    p = 0

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = float(ftab[s])
        f1 = float(ftab[S + s])
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        p = a * S + s
        row = P[a, s]
        acc = 0.0
        nxt = S - 1
        for j in range(S):
            acc += row[j]
            if u2 < acc:
                nxt = j
                break
        isum = 0.0
        for j in range(S):
            isum += float(ftab[j]) + float(ftab[S + j])
        ioff = isum / (2.0 * S)
        fn0 = float(ftab[nxt])
        fn1 = float(ftab[S + nxt])
        fmax = fn0 if fn0 >= fn1 else fn1
        fcur = float(ftab[p])
        alpha = a0 / (k + 1.0)
        eta = e0 / (k + 1.0) ** ETA_EXPONENT
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - fcur
        if not math.isfinite(delta):
            raise DivergenceError("td_error", k, float(delta), float(lam[t]))
        g_lam = float(ftab[S + t]) - float(ftab[t])
        coef = alpha * delta * inv
        if onehot:
            col = z[:, p]
            gate = mask0[:, p] if linearized else (col > 0.0)
            tvec = np.where(gate, coef * b, 0.0)
            col += tvec
            W[:, p] += tvec
            if linearized:
                ftab[p] = inv * float(b @ np.where(mask0[:, p], col, 0.0))
            else:
                ftab[p] = inv * float(b @ np.maximum(col, 0.0))
        else:
            gate = mask0[:, p] if linearized else (z[:, p] > 0.0)
            tvec = np.where(gate, coef * b, 0.0)
            z += tvec[:, None] * gram[p][None, :]
            W += tvec[:, None] * feats[p][None, :]
            gates = mask0 if linearized else (z > 0.0)
            ftab[:] = inv * (b @ np.where(gates, z, 0.0))
        if i == n_steps - 1:
            n_active = int(np.count_nonzero(gate))
        lam_t = float(lam[t]) + eta * g_lam
        lam[t] = lam_t
        if not math.isfinite(lam_t) or abs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, float(delta), float(alpha), float(eta),
            lam_min, lam_max, n_active, p)


def tabular_chunk(ws, n_steps: int, uniforms: np.ndarray):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    P = ws.P
    rewards = ws.rewards
    Q = ws.Q
    counts = ws.counts
    lam = ws.lam
    t = ws.target
    S = ws.S
    eps = ws.eps
    a0 = ws.alpha0
    e0 = ws.eta0
    cap = ws.cap
    s = ws.state
    k0 = ws.k

    lam_min = math.inf
    lam_max = -math.inf
    vis = s
    a = 0
    nxt = s
    delta = 0.0
    alpha = 0.0
    eta = 0.0

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = float(Q[s, 0])
        f1 = float(Q[s, 1])
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        row = P[a, s]
        acc = 0.0
        nxt = S - 1
        for j in range(S):
            acc += row[j]
            if u2 < acc:
                nxt = j
                break
        isum = 0.0
        for j in range(S):
            isum += float(Q[j, 0]) + float(Q[j, 1])
        ioff = isum / (2.0 * S)
        fn0 = float(Q[nxt, 0])
        fn1 = float(Q[nxt, 1])
        fmax = fn0 if fn0 >= fn1 else fn1
        counts[s, a] += 1
        nvis = int(counts[s, a])
        alpha = a0 / (nvis + 1.0)
        eta = e0 / (k + 1.0) ** ETA_EXPONENT
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - float(Q[s, a])
        if not math.isfinite(delta):
            raise DivergenceError("td_error", k, float(delta), float(lam[t]))
        g_lam = float(Q[t, 1]) - float(Q[t, 0])
        Q[s, a] += alpha * delta
        lam_t = float(lam[t]) + eta * g_lam
        lam[t] = lam_t
        if not math.isfinite(lam_t) or abs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, float(delta), float(alpha), float(eta),
            lam_min, lam_max, 1, a * S + vis)


def linear_chunk(ws, n_steps: int, uniforms: np.ndarray):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    P = ws.P
    rewards = ws.rewards
    gram = ws.gram
    feats = ws.feats
    theta = ws.theta_vec
    ftab = ws.ftab
    counts = ws.counts
    per_pair = ws.per_pair
    lam = ws.lam
    t = ws.target
    S = ws.S
    eps = ws.eps
    a0 = ws.alpha0
    e0 = ws.eta0
    cap = ws.cap
    s = ws.state
    k0 = ws.k

    lam_min = math.inf
    lam_max = -math.inf
    vis = s
    a = 0
    nxt = s
    delta = 0.0
    alpha = 0.0
    eta = 0.0
    p = 0

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = float(ftab[s])
        f1 = float(ftab[S + s])
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        p = a * S + s
        row = P[a, s]
        acc = 0.0
        nxt = S - 1
        for j in range(S):
            acc += row[j]
            if u2 < acc:
                nxt = j
                break
        isum = 0.0
        for j in range(S):
            isum += float(ftab[j]) + float(ftab[S + j])
        ioff = isum / (2.0 * S)
        fn0 = float(ftab[nxt])
        fn1 = float(ftab[S + nxt])
        fmax = fn0 if fn0 >= fn1 else fn1
        if per_pair:
            counts[s, a] += 1
            alpha = a0 / (int(counts[s, a]) + 1.0)
        else:
            alpha = a0 / (k + 1.0)
        eta = e0 / (k + 1.0) ** ETA_EXPONENT
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - float(ftab[p])
        if not math.isfinite(delta):
            raise DivergenceError("td_error", k, float(delta), float(lam[t]))
        g_lam = float(ftab[S + t]) - float(ftab[t])
        step = alpha * delta
        ftab += step * gram[p]
        theta += step * feats[p]
        lam_t = float(lam[t]) + eta * g_lam
        lam[t] = lam_t
        if not math.isfinite(lam_t) or abs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, float(delta), float(alpha), float(eta),
            lam_min, lam_max, 0, p)
