"""Compiled inner loops.  Everything here works on flat integer/float arrays."""

import numpy as np
from numba import njit


# union-find ----------------------------------------------------------------

@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def union_find_labels(n, eu, ev):
    """Root label of every vertex after merging the edges ``(eu[k], ev[k])``."""
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for k in range(eu.shape[0]):
        a = _find(parent, eu[k])
        b = _find(parent, ev[k])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _find(parent, i)
    return out


# breadth-first search ------------------------------------------------------

@njit(cache=True)
def bfs(indptr, indices, source, radius):
    """Distances from ``source`` up to ``radius`` (-1 = unbounded).

    Returns the visit order and the distance array (-1 for unreached).  The
    frontier lives in a flat ring buffer; visit order is by distance.
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    dist[source] = 0
    order[0] = source
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        dv = dist[v]
        if radius >= 0 and dv >= radius:
            continue
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if dist[u] < 0:
                dist[u] = dv + 1
                order[tail] = u
                tail += 1
    return order[:tail], dist


# block preconditioned conjugate gradient -----------------------------------

@njit(cache=True)
def _matvec(indptr, indices, offw, diag, P, out):
    n, d = P.shape
    for i in range(n):
        for j in range(d):
            s = diag[i] * P[i, j]
            for e in range(indptr[i], indptr[i + 1]):
                s -= offw[e] * P[indices[e], j]
            out[i, j] = s


@njit(cache=True)
def pcg_block(indptr, indices, offw, diag, B, X, tol, maxit, center):
    """Jacobi-preconditioned CG for ``(D - W) X = B``, one column per coordinate.

    ``offw`` holds the off-diagonal weights in CSR layout, ``diag`` the
    diagonal.  Each column stops on its own once ``max|r| <= tol``; with
    ``center`` the residual is kept mean-zero (singular, consistent systems).
    Returns per-column iteration counts (-1 = cap reached) and final
    recurrence residuals.  ``X`` is updated in place and used as start value.
    """
    n, d = B.shape
    R = np.empty((n, d))
    Z = np.empty((n, d))
    P = np.empty((n, d))
    AP = np.empty((n, d))
    _matvec(indptr, indices, offw, diag, X, AP)
    for i in range(n):
        for j in range(d):
            R[i, j] = B[i, j] - AP[i, j]
    iters = np.full(d, -1, dtype=np.int64)
    resid = np.zeros(d)
    active = np.ones(d, dtype=np.bool_)
    rz = np.zeros(d)
    for j in range(d):
        if center:
            m = 0.0
            for i in range(n):
                m += R[i, j]
            m /= max(n, 1)
            for i in range(n):
                R[i, j] -= m
        rmax = 0.0
        for i in range(n):
            rmax = max(rmax, abs(R[i, j]))
        resid[j] = rmax
        if rmax <= tol:
            active[j] = False
            iters[j] = 0
    for i in range(n):
        for j in range(d):
            Z[i, j] = R[i, j] / diag[i]
            P[i, j] = Z[i, j]
            rz[j] += R[i, j] * Z[i, j]
    for k in range(maxit):
        if not active.any():
            break
        _matvec(indptr, indices, offw, diag, P, AP)
        alpha = np.zeros(d)
        for j in range(d):
            if active[j]:
                pap = 0.0
                for i in range(n):
                    pap += P[i, j] * AP[i, j]
                alpha[j] = rz[j] / pap if pap > 0 else 0.0
        for j in range(d):
            if not active[j]:
                continue
            a = alpha[j]
            for i in range(n):
                X[i, j] += a * P[i, j]
                R[i, j] -= a * AP[i, j]
            if center:
                m = 0.0
                for i in range(n):
                    m += R[i, j]
                m /= n
                for i in range(n):
                    R[i, j] -= m
            rmax = 0.0
            rzn = 0.0
            for i in range(n):
                r = R[i, j]
                z = r / diag[i]
                Z[i, j] = z
                rzn += r * z
                if abs(r) > rmax:
                    rmax = abs(r)
            resid[j] = rmax
            if rmax <= tol or alpha[j] == 0.0:
                active[j] = False
                iters[j] = k + 1 if rmax <= tol else -1
                continue
            beta = rzn / rz[j]
            rz[j] = rzn
            for i in range(n):
                P[i, j] = Z[i, j] + beta * P[i, j]
    return iters, resid


# random walks --------------------------------------------------------------

@njit(cache=True)
def vsrw_run(indptr, indices, weights, disp, mu, stop, vertex, t, pos,
             horizon, exps, unifs, rec_t, rec_v, rec_pos, nrec):
    """Run a VSRW path until the horizon, a stop vertex, or the draws run out.

    Returns ``(status, vertex, time, used, recorded)`` with status 0 = needs
    more draws, 1 = horizon reached, 2 = stopped (entered a flagged vertex).
    ``pos`` (unwrapped displacement) is updated in place.  Jumps are written
    to ``rec_*`` while fewer than ``nrec`` have been recorded.
    """
    d = pos.shape[0]
    used = 0
    recorded = 0
    m = exps.shape[0]
    while used < m:
        rate = mu[vertex]
        if rate <= 0.0:
            return 1, vertex, horizon, used, recorded
        hold = exps[used] / rate
        if t + hold >= horizon:
            return 1, vertex, horizon, used + 1, recorded
        t += hold
        target = unifs[used] * rate
        used += 1
        acc = 0.0
        lo = indptr[vertex]
        hi = indptr[vertex + 1]
        e = hi - 1
        for k in range(lo, hi):
            acc += weights[k]
            if target < acc:
                e = k
                break
        while weights[e] <= 0.0:
            e -= 1
        vertex = indices[e]
        for a in range(d):
            pos[a] += disp[e, a]
        if recorded < nrec:
            rec_t[recorded] = t
            rec_v[recorded] = vertex
            for a in range(d):
                rec_pos[recorded, a] = pos[a]
            recorded += 1
        if stop[vertex]:
            return 2, vertex, t, used, recorded
    return 0, vertex, t, used, recorded


# exhaustive subset enumeration ---------------------------------------------

@njit(cache=True)
def gray_min_boundary(nbr_ptr, nbr_idx, nbr_w, ext, count, ncount):
    """Minimum boundary weight over all subsets, per value of ``sum(count)``.

    The boundary of ``A`` is the weight of edges from ``A`` to the rest of the
    ground set plus ``sum(ext[v] for v in A)``.  Subsets are visited in Gray
    code order so each step is a single vertex flip.  Returns the table of
    minima (``inf`` where a count value is never attained) and a witness
    bitmask for each entry.  Ground sets up to 62 vertices are addressable;
    the run time is 2^n.
    """
    n = ext.shape[0]
    best = np.full(ncount + 1, np.inf)
    wit = np.zeros(ncount + 1, dtype=np.int64)
    best[0] = 0.0
    inside = np.zeros(n, dtype=np.bool_)
    bnd = 0.0
    cnt = 0
    mask = 0
    total = np.int64(1) << n
    for step in range(1, total):
        # index of the lowest set bit of step
        v = 0
        s = step
        while (s & 1) == 0:
            s >>= 1
            v += 1
        delta = 0.0
        for e in range(nbr_ptr[v], nbr_ptr[v + 1]):
            if inside[nbr_idx[e]]:
                delta -= nbr_w[e]
            else:
                delta += nbr_w[e]
        if inside[v]:
            inside[v] = False
            bnd -= delta + ext[v]
            cnt -= count[v]
            mask ^= np.int64(1) << v
        else:
            inside[v] = True
            bnd += delta + ext[v]
            cnt += count[v]
            mask ^= np.int64(1) << v
        if bnd < best[cnt] - 1e-12:
            best[cnt] = bnd
            wit[cnt] = mask
    return best, wit
