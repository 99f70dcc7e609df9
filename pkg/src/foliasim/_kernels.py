"""Compiled hot loops: field evaluation, retraction, bracket recursion, RK4 and Heun.

Fields reach these kernels as packed term tables of shape (n_fields, max_terms, 6);
column 0 is always the coefficient. Per manifold kind the remaining columns are

    torus  : trig (0 none, 1 sin, 2 cos), k1, k2, basis (0 -> d/dx, 1 -> d/dy)
    sphere : axis a, meaning coeff * (e_a - x_a x)
    sl2    : row r, col c, meaning coeff * g @ E_rc  (g flattened row-major)

Every kernel returns an integer status instead of raising; the Python wrappers
translate statuses into exceptions.

Helpers called from the stepping loops never allocate and are compiled without
the numba runtime (``_nrt=False``). With the runtime, each call that hands arrays
to another function is wrapped in atomic reference-count updates, which cost more
than the arithmetic of a step. Scratch space is allocated once per kernel call.
"""

from __future__ import annotations

import numpy as np
from numba import njit

leaf = njit(cache=True, nogil=True, _nrt=False)
kernel = njit(cache=True, nogil=True)
# numba's on-disk cache mislinks the self-recursive bracket evaluator when it is
# reloaded (the process crashes), so the bracket chain is compiled per process
leaf_rec = njit(cache=False, nogil=True, _nrt=False)
kernel_rec = njit(cache=False, nogil=True)

TORUS = 0
SPHERE = 1
SL2 = 2

OK = 0
BLOWUP = 1
DEGENERATE = 2
RANK_CHANGE = 3

BLOWUP_BOUND = 1e6
RANK_FLOOR = 1e-12
TWO_PI = 2.0 * np.pi


@leaf
def retract_inplace(mkind, x):
    n = x.shape[0]
    for i in range(n):
        if not np.isfinite(x[i]):
            return DEGENERATE
    if mkind == TORUS:
        for i in range(n):
            v = x[i] - np.floor(x[i])
            if v >= 1.0:
                v = 0.0
            x[i] = v
        return OK
    if mkind == SPHERE:
        s = 0.0
        for i in range(n):
            s += x[i] * x[i]
        r = np.sqrt(s)
        if not r > 1e-12:
            return DEGENERATE
        for i in range(n):
            x[i] /= r
        return OK
    det = x[0] * x[3] - x[1] * x[2]
    if not det > 0.0:
        return DEGENERATE
    s = np.sqrt(det)
    for i in range(4):
        x[i] /= s
    return OK


@leaf
def tangent_project_inplace(mkind, p, v):
    n = p.shape[0]
    if mkind == TORUS:
        return
    if mkind == SPHERE:
        pp = 0.0
        vp = 0.0
        for i in range(n):
            pp += p[i] * p[i]
            vp += v[i] * p[i]
        if pp > 0.0:
            c = vp / pp
            for i in range(n):
                v[i] -= c * p[i]
        return
    # T_g SL2 = {V : tr(g^-1 V) = 0}; the normal direction is g^-T ~ (d, -c, -b, a).
    n0 = p[3]
    n1 = -p[2]
    n2 = -p[1]
    n3 = p[0]
    zn = n0 * n0 + n1 * n1 + n2 * n2 + n3 * n3
    c = (v[0] * n0 + v[1] * n1 + v[2] * n2 + v[3] * n3) / zn
    v[0] -= c * n0
    v[1] -= c * n1
    v[2] -= c * n2
    v[3] -= c * n3


@leaf
def torus_field(terms, nterms, j, x, out):
    out[0] = 0.0
    out[1] = 0.0
    for t in range(nterms[j]):
        c = terms[j, t, 0]
        trig = terms[j, t, 1]
        if trig != 0.0:
            arg = TWO_PI * (terms[j, t, 2] * x[0] + terms[j, t, 3] * x[1])
            if trig == 1.0:
                c *= np.sin(arg)
            else:
                c *= np.cos(arg)
        out[int(terms[j, t, 4])] += c


@leaf
def sphere_field(terms, nterms, j, x, out):
    n = x.shape[0]
    for i in range(n):
        out[i] = 0.0
    s = 0.0
    for t in range(nterms[j]):
        c = terms[j, t, 0]
        a = int(terms[j, t, 1])
        out[a] += c
        s += c * x[a]
    for i in range(n):
        out[i] -= s * x[i]


@leaf
def sl2_field(terms, nterms, j, x, out):
    for i in range(4):
        out[i] = 0.0
    for t in range(nterms[j]):
        c = terms[j, t, 0]
        r = int(terms[j, t, 1])
        col = int(terms[j, t, 2])
        out[col] += c * x[r]
        out[2 + col] += c * x[2 + r]


@leaf
def field_eval(mkind, terms, nterms, j, x, out):
    if mkind == TORUS:
        torus_field(terms, nterms, j, x, out)
    elif mkind == SPHERE:
        sphere_field(terms, nterms, j, x, out)
    else:
        sl2_field(terms, nterms, j, x, out)


@leaf_rec
def node_eval(mkind, terms, nterms, left, right, node, x, h, out, work, r):
    """Ambient value of a bracket word; [A, B] = J_B A - J_A B by central differences.

    work has shape (levels, 7, n); recursion depth r uses the scratch rows work[r].
    """
    if right[node] < 0:
        field_eval(mkind, terms, nterms, left[node], x, out)
        return 0
    n = x.shape[0]
    W = work[r]
    a = W[0]
    b = W[1]
    xs = W[2]
    fp = W[3]
    fm = W[4]
    jb_a = W[5]
    ja_b = W[6]
    node_eval(mkind, terms, nterms, left, right, left[node], x, h, a, work, r + 1)
    node_eval(mkind, terms, nterms, left, right, right[node], x, h, b, work, r + 1)
    for i in range(n):
        xs[i] = x[i]
        jb_a[i] = 0.0
        ja_b[i] = 0.0
    for m in range(n):
        xs[m] = x[m] + h
        node_eval(mkind, terms, nterms, left, right, right[node], xs, h, fp, work, r + 1)
        xs[m] = x[m] - h
        node_eval(mkind, terms, nterms, left, right, right[node], xs, h, fm, work, r + 1)
        for i in range(n):
            jb_a[i] += (fp[i] - fm[i]) / (2.0 * h) * a[m]
        xs[m] = x[m] + h
        node_eval(mkind, terms, nterms, left, right, left[node], xs, h, fp, work, r + 1)
        xs[m] = x[m] - h
        node_eval(mkind, terms, nterms, left, right, left[node], xs, h, fm, work, r + 1)
        for i in range(n):
            ja_b[i] += (fp[i] - fm[i]) / (2.0 * h) * b[m]
        xs[m] = x[m]
    for i in range(n):
        out[i] = jb_a[i] - ja_b[i]
    return 0


@leaf
def sym_eig(G, V, lam):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    G is overwritten; eigenvalues land in lam and eigenvectors in the columns of V.
    """
    n = G.shape[0]
    for i in range(n):
        for k in range(n):
            V[i, k] = 1.0 if i == k else 0.0
    for sweep in range(60):
        off = 0.0
        scale = 0.0
        for i in range(n):
            scale += G[i, i] * G[i, i]
            for k in range(i + 1, n):
                off += G[i, k] * G[i, k]
        if off <= 1e-32 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                gpq = G[p, q]
                if gpq == 0.0:
                    continue
                theta = (G[q, q] - G[p, p]) / (2.0 * gpq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                for k in range(n):
                    gkp = G[k, p]
                    gkq = G[k, q]
                    G[k, p] = c * gkp - sn * gkq
                    G[k, q] = sn * gkp + c * gkq
                for k in range(n):
                    gpk = G[p, k]
                    gqk = G[q, k]
                    G[p, k] = c * gpk - sn * gqk
                    G[q, k] = sn * gpk + c * gqk
                G[p, q] = 0.0
                G[q, p] = 0.0
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - sn * vkq
                    V[k, q] = sn * vkp + c * vkq
    for i in range(n):
        lam[i] = G[i, i]


@leaf_rec
def projector(mkind, terms, nterms, left, right, level_end, tdim, h, tol, x, P, col, G, W, V,
              lam, work):
    """Orthogonal projector onto the span of the bracket words at x; returns its rank.

    The span is read off the Gram matrix M M^T (ambient size at most 4), whose
    eigenvalues are the squared singular values of the word matrix M, so a singular
    value counts when it exceeds tol * sigma_max. Levels are added one at a time and
    the loop stops once the span is the whole tangent space.
    """
    n = x.shape[0]
    for i in range(n):
        for k in range(n):
            G[i, k] = 0.0
    used = 0
    rank = 0
    cut = 0.0
    for lev in range(level_end.shape[0]):
        if level_end[lev] == used:
            continue
        for w in range(used, level_end[lev]):
            node_eval(mkind, terms, nterms, left, right, w, x, h, col, work, 0)
            tangent_project_inplace(mkind, x, col)
            for i in range(n):
                for k in range(n):
                    G[i, k] += col[i] * col[k]
        used = level_end[lev]
        for i in range(n):
            for k in range(n):
                W[i, k] = G[i, k]
        sym_eig(W, V, lam)
        top = 0.0
        for i in range(n):
            if lam[i] > top:
                top = lam[i]
        rank = 0
        cut = tol * tol * top
        if top > RANK_FLOOR * RANK_FLOOR:
            for i in range(n):
                if lam[i] > cut:
                    rank += 1
        if rank >= tdim:
            break
    for i in range(n):
        for k in range(n):
            acc = 0.0
            if rank > 0:
                for r in range(n):
                    if lam[r] > cut:
                        acc += V[i, r] * V[k, r]
            P[i, k] = acc
    return rank


@leaf
def _noise_increment(mkind, dterms, dn, has_drift, zterms, zn, y, dW, s, dt, d, tmp):
    """d = X0(y) dt + sum_j X_j(y) dW[s, j]."""
    n = y.shape[0]
    if has_drift:
        field_eval(mkind, dterms, dn, 0, y, tmp)
        for i in range(n):
            d[i] = tmp[i] * dt
    else:
        for i in range(n):
            d[i] = 0.0
    for j in range(zterms.shape[0]):
        field_eval(mkind, zterms, zn, j, y, tmp)
        w = dW[s, j]
        for i in range(n):
            d[i] += tmp[i] * w


@leaf_rec
def _foliated_increment(mkind, dterms, dn, has_drift, fterms, fn, left, right, level_end, tdim,
                        h, tol, expected_rank, y, dW, s, dt, d, tmp, P, col, G, W, V, lam,
                        work):
    """d = X0(y) dt + P(y) dW[s]; returns a status."""
    n = y.shape[0]
    if has_drift:
        field_eval(mkind, dterms, dn, 0, y, tmp)
        for i in range(n):
            d[i] = tmp[i] * dt
    else:
        for i in range(n):
            d[i] = 0.0
    r = projector(mkind, fterms, fn, left, right, level_end, tdim, h, tol, y, P, col, G, W, V,
                  lam, work)
    if expected_rank >= 0 and r != expected_rank:
        return RANK_CHANGE
    for i in range(n):
        acc = 0.0
        for m in range(n):
            acc += P[i, m] * dW[s, m]
        d[i] += acc
    return OK


@leaf
def _heun_finish(mkind, x, d0, d1):
    n = x.shape[0]
    for i in range(n):
        x[i] = x[i] + 0.5 * (d0[i] + d1[i])
        if abs(x[i]) > BLOWUP_BOUND:
            return BLOWUP
    return retract_inplace(mkind, x)


@kernel
def heun_fields(mkind, dterms, dn, has_drift, zterms, zn, x, dW, dt, stride, phase, out):
    n = x.shape[0]
    d0 = np.empty(n)
    d1 = np.empty(n)
    tmp = np.empty(n)
    q = np.empty(n)
    rec = 0
    for s in range(dW.shape[0]):
        _noise_increment(mkind, dterms, dn, has_drift, zterms, zn, x, dW, s, dt, d0, tmp)
        for i in range(n):
            q[i] = x[i] + d0[i]
        st = retract_inplace(mkind, q)
        if st != OK:
            return st, rec
        _noise_increment(mkind, dterms, dn, has_drift, zterms, zn, q, dW, s, dt, d1, tmp)
        st = _heun_finish(mkind, x, d0, d1)
        if st != OK:
            return st, rec
        if (phase + s + 1) % stride == 0:
            for i in range(n):
                out[rec, i] = x[i]
            rec += 1
    return OK, rec


@kernel_rec
def heun_foliated(mkind, dterms, dn, has_drift, fterms, fn, left, right, level_end, tdim, h,
                  tol, expected_rank, x, dW, dt, stride, phase, out):
    """Heun for sum_i X_i o dW^i with X_i = P(p) e_i, i.e. noise P(p) dW."""
    n = x.shape[0]
    d0 = np.empty(n)
    d1 = np.empty(n)
    tmp = np.empty(n)
    q = np.empty(n)
    P = np.empty((n, n))
    col = np.empty(n)
    G = np.empty((n, n))
    W = np.empty((n, n))
    V = np.empty((n, n))
    lam = np.empty(n)
    work = np.empty((max(level_end.shape[0], 1), 7, n))
    rec = 0
    for s in range(dW.shape[0]):
        st = _foliated_increment(mkind, dterms, dn, has_drift, fterms, fn, left, right,
                                 level_end, tdim, h, tol, expected_rank, x, dW, s, dt, d0, tmp,
                                 P, col, G, W, V, lam, work)
        if st != OK:
            return st, rec
        for i in range(n):
            q[i] = x[i] + d0[i]
        st = retract_inplace(mkind, q)
        if st != OK:
            return st, rec
        st = _foliated_increment(mkind, dterms, dn, has_drift, fterms, fn, left, right,
                                 level_end, tdim, h, tol, expected_rank, q, dW, s, dt, d1, tmp,
                                 P, col, G, W, V, lam, work)
        if st != OK:
            return st, rec
        st = _heun_finish(mkind, x, d0, d1)
        if st != OK:
            return st, rec
        if (phase + s + 1) % stride == 0:
            for i in range(n):
                out[rec, i] = x[i]
            rec += 1
    return OK, rec


def heun_chunk(mkind, dterms, dn, has_drift, zterms, zn, fol, fterms, fn, left, right,
               level_end, tdim, h, tol, expected_rank, x, dW, dt, stride, phase, out):
    """Advance x in place through len(dW) Stratonovich Heun steps.

    The state after global step s (1-based) is written to out whenever s % stride == 0;
    phase is the global step count before this chunk. Returns (status, records).
    """
    if fol:
        return heun_foliated(mkind, dterms, dn, has_drift, fterms, fn, left, right, level_end,
                             tdim, h, tol, expected_rank, x, dW, dt, stride, phase, out)
    return heun_fields(mkind, dterms, dn, has_drift, zterms, zn, x, dW, dt, stride, phase, out)


@leaf
def _combo_eval(mkind, terms, nterms, coeffs, y, k, tmp):
    n = y.shape[0]
    for i in range(n):
        k[i] = 0.0
    for j in range(coeffs.shape[0]):
        if coeffs[j] == 0.0:
            continue
        field_eval(mkind, terms, nterms, j, y, tmp)
        for i in range(n):
            k[i] += coeffs[j] * tmp[i]


@leaf
def _rk4_step(mkind, terms, nterms, coeffs, x, dt, k1, k2, k3, k4, y, tmp):
    n = x.shape[0]
    _combo_eval(mkind, terms, nterms, coeffs, x, k1, tmp)
    for i in range(n):
        y[i] = x[i] + 0.5 * dt * k1[i]
    st = retract_inplace(mkind, y)
    if st != OK:
        return st
    _combo_eval(mkind, terms, nterms, coeffs, y, k2, tmp)
    for i in range(n):
        y[i] = x[i] + 0.5 * dt * k2[i]
    st = retract_inplace(mkind, y)
    if st != OK:
        return st
    _combo_eval(mkind, terms, nterms, coeffs, y, k3, tmp)
    for i in range(n):
        y[i] = x[i] + dt * k3[i]
    st = retract_inplace(mkind, y)
    if st != OK:
        return st
    _combo_eval(mkind, terms, nterms, coeffs, y, k4, tmp)
    for i in range(n):
        x[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if abs(x[i]) > BLOWUP_BOUND:
            return BLOWUP
    return retract_inplace(mkind, x)


@kernel
def rk4_segment(mkind, terms, nterms, coeffs, x, nsteps, dt, out, row):
    """Classical RK4 on the frozen field sum_j coeffs[j] X_j, retracting every stage.

    Writes the state after each step into out[row + 1 + step]. Returns a status.
    """
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    y = np.empty(n)
    tmp = np.empty(n)
    for s in range(nsteps):
        st = _rk4_step(mkind, terms, nterms, coeffs, x, dt, k1, k2, k3, k4, y, tmp)
        if st != OK:
            return st
        for i in range(n):
            out[row + 1 + s, i] = x[i]
    return OK


@kernel
def field_eval_batch(mkind, terms, nterms, j, X, out):
    for b in range(X.shape[0]):
        field_eval(mkind, terms, nterms, j, X[b], out[b])


@kernel
def retract_batch(mkind, X, status):
    for b in range(X.shape[0]):
        status[b] = retract_inplace(mkind, X[b])


@kernel
def tangent_project_batch(mkind, P, V):
    for b in range(P.shape[0]):
        tangent_project_inplace(mkind, P[b], V[b])


@kernel_rec
def projector_batch(mkind, terms, nterms, left, right, level_end, tdim, h, tol, X, Ps, ranks):
    n = X.shape[1]
    col = np.empty(n)
    G = np.empty((n, n))
    W = np.empty((n, n))
    V = np.empty((n, n))
    lam = np.empty(n)
    work = np.empty((max(level_end.shape[0], 1), 7, n))
    for b in range(X.shape[0]):
        ranks[b] = projector(mkind, terms, nterms, left, right, level_end, tdim, h, tol, X[b],
                             Ps[b], col, G, W, V, lam, work)
