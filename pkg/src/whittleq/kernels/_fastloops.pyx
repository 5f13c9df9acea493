# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled training-loop kernels.

Semantics mirror kernels/pure.py exactly: same update formulas, same RNG
consumption (three uniforms per step), same divergence checks. Scalar
reductions run sequentially here while the pure backend uses numpy's pairwise
reductions, so neural trajectories agree across backends only to float
rounding; tabular and linear paths are scalar in both backends and match
bitwise.
"""

from libc.math cimport pow, isfinite, fabs

from whittleq.errors import DivergenceError

cdef double ETA_EXPONENT = 4.0 / 3.0


cdef inline long _draw_next(const double[:, :, ::1] P, long a, long s,
                            long S, double u) noexcept nogil:
    cdef long j
    cdef double acc = 0.0
    for j in range(S):
        acc += P[a, s, j]
        if u < acc:
            return j
    return S - 1


def neural_chunk(ws, long n_steps, const double[:, ::1] uniforms):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    cdef const double[:, :, ::1] P = ws.P
    cdef const double[:, ::1] rewards = ws.rewards
    cdef const double[:, ::1] gram = ws.gram
    cdef const double[:, ::1] feats = ws.feats
    cdef const double[::1] b = ws.b
    cdef double[:, ::1] W = ws.W
    cdef double[:, ::1] z = ws.z
    cdef double[::1] ftab = ws.ftab
    cdef const unsigned char[:, ::1] mask0 = ws.mask0
    cdef double[::1] lam = ws.lam
    cdef long t = ws.target
    cdef long S = ws.S
    cdef long m = ws.m
    cdef double eps = ws.eps
    cdef double a0 = ws.alpha0
    cdef double e0 = ws.eta0
    cdef double inv = ws.inv_sqrt_m
    cdef bint onehot = ws.onehot
    cdef bint linearized = ws.linearized
    cdef double cap = ws.cap
    cdef long s = ws.state
    cdef long k0 = ws.k
    cdef long two_s = 2 * S

    cdef double lam_min = float("inf")
    cdef double lam_max = float("-inf")
    cdef long vis = s
    cdef long a = 0
    cdef long nxt = s
    cdef double delta = 0.0
    cdef double alpha = 0.0
    cdef double eta = 0.0
    cdef long n_active = 0
    cdef long p = 0

    cdef long i, j, k, q, r
    cdef double u0, u1, u2, f0, f1, isum, ioff, fn0, fn1, fmax
    cdef double g_lam, coef, lam_t, acc, zi
    cdef bint gated

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = ftab[s]
        f1 = ftab[S + s]
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        p = a * S + s
        nxt = _draw_next(P, a, s, S, u2)
        isum = 0.0
        for j in range(S):
            isum += ftab[j] + ftab[S + j]
        ioff = isum / (2.0 * S)
        fn0 = ftab[nxt]
        fn1 = ftab[S + nxt]
        fmax = fn0 if fn0 >= fn1 else fn1
        alpha = a0 / (k + 1.0)
        eta = e0 / pow(k + 1.0, ETA_EXPONENT)
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - ftab[p]
        if not isfinite(delta):
            raise DivergenceError("td_error", k, delta, lam[t])
        g_lam = ftab[S + t] - ftab[t]
        coef = alpha * delta * inv
        n_active = 0
        if onehot:
            acc = 0.0
            for r in range(m):
                if linearized:
                    gated = mask0[r, p] != 0
                else:
                    gated = z[r, p] > 0.0
                if gated:
                    n_active += 1
                    z[r, p] += coef * b[r]
                    W[r, p] += coef * b[r]
                if linearized:
                    if mask0[r, p] != 0:
                        acc += b[r] * z[r, p]
                else:
                    if z[r, p] > 0.0:
                        acc += b[r] * z[r, p]
            ftab[p] = inv * acc
        else:
            for r in range(m):
                if linearized:
                    gated = mask0[r, p] != 0
                else:
                    gated = z[r, p] > 0.0
                if gated:
                    n_active += 1
                    for q in range(two_s):
                        z[r, q] += coef * b[r] * gram[p, q]
                    for q in range(feats.shape[1]):
                        W[r, q] += coef * b[r] * feats[p, q]
            for q in range(two_s):
                acc = 0.0
                for r in range(m):
                    zi = z[r, q]
                    if linearized:
                        if mask0[r, q] != 0:
                            acc += b[r] * zi
                    else:
                        if zi > 0.0:
                            acc += b[r] * zi
                ftab[q] = inv * acc
        lam_t = lam[t] + eta * g_lam
        lam[t] = lam_t
        if not isfinite(lam_t) or fabs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, delta, alpha, eta, lam_min, lam_max, n_active, p)


def tabular_chunk(ws, long n_steps, const double[:, ::1] uniforms):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    cdef const double[:, :, ::1] P = ws.P
    cdef const double[:, ::1] rewards = ws.rewards
    cdef double[:, ::1] Q = ws.Q
    cdef long[:, ::1] counts = ws.counts
    cdef double[::1] lam = ws.lam
    cdef long t = ws.target
    cdef long S = ws.S
    cdef double eps = ws.eps
    cdef double a0 = ws.alpha0
    cdef double e0 = ws.eta0
    cdef double cap = ws.cap
    cdef long s = ws.state
    cdef long k0 = ws.k

    cdef double lam_min = float("inf")
    cdef double lam_max = float("-inf")
    cdef long vis = s
    cdef long a = 0
    cdef long nxt = s
    cdef double delta = 0.0
    cdef double alpha = 0.0
    cdef double eta = 0.0

    cdef long i, j, k, nvis
    cdef double u0, u1, u2, f0, f1, isum, ioff, fn0, fn1, fmax
    cdef double g_lam, lam_t

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = Q[s, 0]
        f1 = Q[s, 1]
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        nxt = _draw_next(P, a, s, S, u2)
        isum = 0.0
        for j in range(S):
            isum += Q[j, 0] + Q[j, 1]
        ioff = isum / (2.0 * S)
        fn0 = Q[nxt, 0]
        fn1 = Q[nxt, 1]
        fmax = fn0 if fn0 >= fn1 else fn1
        counts[s, a] += 1
        nvis = counts[s, a]
        alpha = a0 / (nvis + 1.0)
        eta = e0 / pow(k + 1.0, ETA_EXPONENT)
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - Q[s, a]
        if not isfinite(delta):
            raise DivergenceError("td_error", k, delta, lam[t])
        g_lam = Q[t, 1] - Q[t, 0]
        Q[s, a] += alpha * delta
        lam_t = lam[t] + eta * g_lam
        lam[t] = lam_t
        if not isfinite(lam_t) or fabs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, delta, alpha, eta, lam_min, lam_max, 1, a * S + vis)


def linear_chunk(ws, long n_steps, const double[:, ::1] uniforms):
    if uniforms.shape[0] < n_steps or uniforms.shape[1] != 3:
        raise ValueError("uniforms must have shape (n_steps, 3)")
    cdef const double[:, :, ::1] P = ws.P
    cdef const double[:, ::1] rewards = ws.rewards
    cdef const double[:, ::1] gram = ws.gram
    cdef const double[:, ::1] feats = ws.feats
    cdef double[::1] theta = ws.theta_vec
    cdef double[::1] ftab = ws.ftab
    cdef long[:, ::1] counts = ws.counts
    cdef bint per_pair = ws.per_pair
    cdef double[::1] lam = ws.lam
    cdef long t = ws.target
    cdef long S = ws.S
    cdef double eps = ws.eps
    cdef double a0 = ws.alpha0
    cdef double e0 = ws.eta0
    cdef double cap = ws.cap
    cdef long s = ws.state
    cdef long k0 = ws.k
    cdef long two_s = 2 * S
    cdef long d = feats.shape[1]

    cdef double lam_min = float("inf")
    cdef double lam_max = float("-inf")
    cdef long vis = s
    cdef long a = 0
    cdef long nxt = s
    cdef double delta = 0.0
    cdef double alpha = 0.0
    cdef double eta = 0.0
    cdef long p = 0

    cdef long i, j, k, q, nvis
    cdef double u0, u1, u2, f0, f1, isum, ioff, fn0, fn1, fmax
    cdef double g_lam, step, lam_t

    for i in range(n_steps):
        k = k0 + i + 1
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        vis = s
        f0 = ftab[s]
        f1 = ftab[S + s]
        if u0 < eps:
            a = 0 if u1 < 0.5 else 1
        else:
            a = 1 if f1 > f0 else 0
        p = a * S + s
        nxt = _draw_next(P, a, s, S, u2)
        isum = 0.0
        for j in range(S):
            isum += ftab[j] + ftab[S + j]
        ioff = isum / (2.0 * S)
        fn0 = ftab[nxt]
        fn1 = ftab[S + nxt]
        fmax = fn0 if fn0 >= fn1 else fn1
        if per_pair:
            counts[s, a] += 1
            nvis = counts[s, a]
            alpha = a0 / (nvis + 1.0)
        else:
            alpha = a0 / (k + 1.0)
        eta = e0 / pow(k + 1.0, ETA_EXPONENT)
        delta = rewards[s, a] + (1.0 - a) * lam[t] - ioff + fmax - ftab[p]
        if not isfinite(delta):
            raise DivergenceError("td_error", k, delta, lam[t])
        g_lam = ftab[S + t] - ftab[t]
        step = alpha * delta
        for q in range(two_s):
            ftab[q] += step * gram[p, q]
        for q in range(d):
            theta[q] += step * feats[p, q]
        lam_t = lam[t] + eta * g_lam
        lam[t] = lam_t
        if not isfinite(lam_t) or fabs(lam_t) > cap:
            raise DivergenceError("lambda", k, lam_t, lam_t)
        if lam_t < lam_min:
            lam_min = lam_t
        if lam_t > lam_max:
            lam_max = lam_t
        s = nxt

    ws.state = s
    ws.k = k0 + n_steps
    return (vis, a, nxt, delta, alpha, eta, lam_min, lam_max, 0, p)
