"""Hot numeric kernels, each in a numba flavour and a pure-numpy flavour.

The public functions at the bottom dispatch on :func:`fracminimax._backend.backend`.
Both flavours take and return plain float64 arrays so they can be compared
directly (see ``tests/test_kernels.py`` and ``benchmarks/bench_kernels.py``).

Conventions
-----------
Product integration on a uniform grid reduces every weakly singular
Volterra operator used in the package to

    out[j] = sum_{m=1}^{j} ( A[m] * v[j-m] + B[m] * v[j-m+1] ),

where ``A[m]``/``B[m]`` are the moments of the kernel on the cell
``[(m-1)h, mh]`` against the two hat functions.  ``A[0]`` and ``B[0]`` are
unused.
"""

import numpy as np

from ._backend import backend, njit


# ---------------------------------------------------------------------------
# product-integration accumulation


@njit
def _product_apply_nb(A, B, v):
    m1, n = v.shape
    out = np.zeros((m1, n))
    for j in range(1, m1):
        for c in range(n):
            acc = 0.0
            for m in range(1, j + 1):
                acc += A[m] * v[j - m, c] + B[m] * v[j - m + 1, c]
            out[j, c] = acc
    return out


def _product_apply_np(A, B, v):
    m1, n = v.shape
    W = np.zeros(m1)
    C = np.zeros(m1)
    C[: m1 - 1] = B[1:m1]
    W[1:] = A[1:m1]
    W += C
    out = np.empty((m1, n))
    for c in range(n):
        out[:, c] = np.convolve(W, v[:, c])[:m1] - C * v[0, c]
    out[0] = 0.0
    return out


# ---------------------------------------------------------------------------
# fractional Adams-Bashforth-Moulton (PECE) for piecewise-constant policies


@njit
def _velocity_nb(x, const, dirs, rho, c_H, letter, out):
    nrm = 0.0
    for c in range(x.shape[0]):
        nrm += x[c] * x[c]
    scale = rho[letter] * c_H * (1.0 + np.sqrt(nrm))
    for c in range(x.shape[0]):
        out[c] = const[letter, c] + scale * dirs[letter, c]


@njit
def _pece_batch_nb(x_hist, psi_hist, A, B, P, policies, piece, const, dirs, rho, c_H, n_corr):
    j0 = x_hist.shape[0] - 1
    n = x_hist.shape[1]
    n_nodes = piece.shape[0]
    n_pol = policies.shape[0]
    x0 = x_hist[0]
    X = np.empty((n_pol, n_nodes, n))
    PSI = np.empty((n_pol, n_nodes, n))
    xp = np.empty(n)
    fv = np.empty(n)
    hist = np.empty(n)
    pred = np.empty(n)
    for p in range(n_pol):
        for j in range(j0 + 1):
            for c in range(n):
                X[p, j, c] = x_hist[j, c]
                PSI[p, j, c] = psi_hist[j, c]
        for j in range(j0 + 1, n_nodes):
            letter = policies[p, piece[j]]
            for c in range(n):
                h_acc = 0.0
                p_acc = 0.0
                for m in range(1, j + 1):
                    h_acc += A[m] * PSI[p, j - m, c]
                    p_acc += P[m] * PSI[p, j - m, c]
                for m in range(2, j + 1):
                    h_acc += B[m] * PSI[p, j - m + 1, c]
                hist[c] = h_acc
                pred[c] = x0[c] + p_acc
            for c in range(n):
                xp[c] = pred[c]
            for _ in range(n_corr):
                _velocity_nb(xp, const, dirs, rho, c_H, letter, fv)
                for c in range(n):
                    xp[c] = x0[c] + hist[c] + B[1] * fv[c]
            _velocity_nb(xp, const, dirs, rho, c_H, letter, fv)
            for c in range(n):
                X[p, j, c] = xp[c]
                PSI[p, j, c] = fv[c]
    return X, PSI


def _velocity_np(x, const, dirs, rho, c_H, letters):
    scale = rho[letters] * c_H * (1.0 + np.sqrt(np.sum(x * x, axis=-1)))
    return const[letters] + scale[:, None] * dirs[letters]


def _pece_batch_np(x_hist, psi_hist, A, B, P, policies, piece, const, dirs, rho, c_H, n_corr):
    j0 = x_hist.shape[0] - 1
    n = x_hist.shape[1]
    n_nodes = piece.shape[0]
    n_pol = policies.shape[0]
    x0 = x_hist[0]
    X = np.empty((n_pol, n_nodes, n))
    PSI = np.empty((n_pol, n_nodes, n))
    X[:, : j0 + 1] = x_hist
    PSI[:, : j0 + 1] = psi_hist
    for j in range(j0 + 1, n_nodes):
        letters = policies[:, piece[j]]
        past = PSI[:, j - 1 :: -1] if j > 0 else PSI[:, :0]
        # past[:, m-1] == PSI[:, j-m]
        hist = np.einsum("m,pmc->pc", A[1 : j + 1], past)
        if j >= 2:
            hist += np.einsum("m,pmc->pc", B[2 : j + 1], PSI[:, j - 1 : 0 : -1])
        xp = x0 + np.einsum("m,pmc->pc", P[1 : j + 1], past)
        for _ in range(n_corr):
            fv = _velocity_np(xp, const, dirs, rho, c_H, letters)
            xp = x0 + hist + B[1] * fv
        X[:, j] = xp
        PSI[:, j] = _velocity_np(xp, const, dirs, rho, c_H, letters)
    return X, PSI


# ---------------------------------------------------------------------------
# one-sided path-space distance


@njit
def _dist_star_nodes_nb(tp, wp, tq, wq):
    best = 0.0
    for i in range(tp.shape[0]):
        inner = np.inf
        for k in range(tq.shape[0]):
            d = (tp[i] - tq[k]) ** 2
            for c in range(wp.shape[1]):
                d += (wp[i, c] - wq[k, c]) ** 2
            if d < inner:
                inner = d
        if inner > best:
            best = inner
    return np.sqrt(best)


def _dist_star_nodes_np(tp, wp, tq, wq, chunk=512):
    best = 0.0
    for start in range(0, tp.shape[0], chunk):
        sl = slice(start, start + chunk)
        d = (tp[sl, None] - tq[None, :]) ** 2
        d = d + np.sum((wp[sl, None, :] - wq[None, :, :]) ** 2, axis=-1)
        best = max(best, float(np.max(np.min(d, axis=1))))
    return np.sqrt(best)


@njit
def _dist_star_segments_nb(tp, wp, tq, wq):
    n = wp.shape[1]
    best = 0.0
    nq = tq.shape[0]
    for i in range(tp.shape[0]):
        inner = np.inf
        if nq == 1:
            d = (tp[i] - tq[0]) ** 2
            for c in range(n):
                d += (wp[i, c] - wq[0, c]) ** 2
            inner = d
        for k in range(nq - 1):
            # segment from (tq[k], wq[k]) to (tq[k+1], wq[k+1])
            dt = tq[k + 1] - tq[k]
            dd = dt * dt
            proj = (tp[i] - tq[k]) * dt
            for c in range(n):
                e = wq[k + 1, c] - wq[k, c]
                dd += e * e
                proj += (wp[i, c] - wq[k, c]) * e
            lam = 0.0
            if dd > 0.0:
                lam = min(1.0, max(0.0, proj / dd))
            d = (tp[i] - tq[k] - lam * dt) ** 2
            for c in range(n):
                d += (wp[i, c] - wq[k, c] - lam * (wq[k + 1, c] - wq[k, c])) ** 2
            if d < inner:
                inner = d
        if inner > best:
            best = inner
    return np.sqrt(best)


def _dist_star_segments_np(tp, wp, tq, wq, chunk=256):
    if tq.shape[0] == 1:
        return _dist_star_nodes_np(tp, wp, tq, wq)
    a = np.concatenate([tq[:-1, None], wq[:-1]], axis=1)
    e = np.concatenate([np.diff(tq)[:, None], np.diff(wq, axis=0)], axis=1)
    ee = np.sum(e * e, axis=1)
    pts = np.concatenate([tp[:, None], wp], axis=1)
    best = 0.0
    for start in range(0, pts.shape[0], chunk):
        rel = pts[start : start + chunk, None, :] - a[None, :, :]
        proj = np.einsum("pkc,kc->pk", rel, e)
        lam = np.clip(np.divide(proj, ee, out=np.zeros_like(proj), where=ee > 0), 0.0, 1.0)
        d = np.sum((rel - lam[..., None] * e[None]) ** 2, axis=-1)
        best = max(best, float(np.max(np.min(d, axis=1))))
    return np.sqrt(best)


# ---------------------------------------------------------------------------
# modulus of continuity on nodes


@njit
def _modulus_nb(w, max_lag):
    best = 0.0
    m1 = w.shape[0]
    for lag in range(1, min(max_lag, m1 - 1) + 1):
        for i in range(m1 - lag):
            d = 0.0
            for c in range(w.shape[1]):
                d += (w[i + lag, c] - w[i, c]) ** 2
            if d > best:
                best = d
    return np.sqrt(best)


def _modulus_np(w, max_lag):
    best = 0.0
    for lag in range(1, min(max_lag, w.shape[0] - 1) + 1):
        d = np.sum((w[lag:] - w[:-lag]) ** 2, axis=1)
        best = max(best, float(d.max()))
    return np.sqrt(best)


# ---------------------------------------------------------------------------
# dispatch


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def product_apply(A, B, v):
    """Apply product-integration weights ``(A, B)`` to nodal values ``v`` of shape (M+1, n)."""
    v = _f64(v)
    if backend() == "numba":
        return _product_apply_nb(_f64(A), _f64(B), v)
    return _product_apply_np(_f64(A), _f64(B), v)


def pece_batch(x_hist, psi_hist, A, B, P, policies, piece, const, dirs, rho, c_H, n_corr=1):
    """Integrate one trajectory per row of ``policies`` with the fractional PECE scheme.

    ``piece[j]`` maps node ``j`` to a column of ``policies``; nodes of the
    history (``j <= j0``) are copied from ``x_hist``/``psi_hist``.  A letter
    ``l`` produces the velocity ``const[l] + rho[l] * c_H * (1 + |x|) * dirs[l]``.
    """
    args = (
        _f64(x_hist),
        _f64(psi_hist),
        _f64(A),
        _f64(B),
        _f64(P),
        np.ascontiguousarray(policies, dtype=np.int64),
        np.ascontiguousarray(piece, dtype=np.int64),
        _f64(const),
        _f64(dirs),
        _f64(rho),
        float(c_H),
        int(n_corr),
    )
    if backend() == "numba":
        return _pece_batch_nb(*args)
    return _pece_batch_np(*args)


def dist_star(tp, wp, tq, wq, segments=False):
    args = (_f64(tp), _f64(wp), _f64(tq), _f64(wq))
    if segments:
        fn = _dist_star_segments_nb if backend() == "numba" else _dist_star_segments_np
    else:
        fn = _dist_star_nodes_nb if backend() == "numba" else _dist_star_nodes_np
    return float(fn(*args))


def modulus(w, max_lag):
    w = _f64(w)
    if max_lag < 1 or w.shape[0] < 2:
        return 0.0
    if backend() == "numba":
        return float(_modulus_nb(w, int(max_lag)))
    return float(_modulus_np(w, int(max_lag)))
