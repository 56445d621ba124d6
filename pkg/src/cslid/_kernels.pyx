# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: LSTM recurrence, CTC forward-backward, edit distance.

Mirrors ``_kernels_py`` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, tanh, INFINITY
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double NEG_INF = -INFINITY


cdef inline double _lae(double a, double b) noexcept nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _sig(double x) noexcept nogil:
    return 0.5 * (tanh(0.5 * x) + 1.0)


cdef void _gemm_nn(double* A, double* B, double* C, int m, int k, int n,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C
    cdef char tn = b'N'
    cdef double alpha = 1.0
    dgemm(&tn, &tn, &n, &m, &k, &alpha, B, &n, A, &k, &beta, C, &n)


cdef void _gemm_nt(double* A, double* B, double* C, int m, int k, int n,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k).T + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double alpha = 1.0
    dgemm(&tt, &tn, &n, &m, &k, &alpha, B, &k, A, &k, &beta, C, &n)


cdef void _gemm_tn(double* A, double* B, double* C, int m, int k, int n,
                   double beta) noexcept nogil:
    # row-major C(m,n) = A(k,m).T @ B(k,n) + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double alpha = 1.0
    dgemm(&tn, &tt, &n, &m, &k, &alpha, B, &n, A, &m, &beta, C, &n)


def lstm_seq_forward(xproj, w_h, mask, bint reverse):
    cdef double[:, :, ::1] xp = np.ascontiguousarray(xproj, dtype=np.float64)
    cdef double[:, ::1] wh = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.float64)
    cdef int T = xp.shape[0], B = xp.shape[1], H4 = xp.shape[2]
    cdef int H = H4 // 4
    out_a = np.zeros((T, B, H))
    hp_a = np.zeros((T, B, H))
    cp_a = np.zeros((T, B, H))
    acts_a = np.zeros((T, B, H4))
    tc_a = np.zeros((T, B, H))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, :, ::1] hp = hp_a
    cdef double[:, :, ::1] cp = cp_a
    cdef double[:, :, ::1] acts = acts_a
    cdef double[:, :, ::1] tcs = tc_a
    cdef double[:, ::1] h = np.zeros((B, H))
    cdef double[:, ::1] c = np.zeros((B, H))
    cdef int step, t, b, j
    cdef double m, cn, tcv, hn
    # Gate nonlinearities go through numpy's vectorised tanh one step at a
    # time: scalar libm tanh costs more than the whole rest of the step.
    for step in range(T):
        t = T - 1 - step if reverse else step
        for b in range(B):
            for j in range(H):
                hp[t, b, j] = h[b, j]
                cp[t, b, j] = c[b, j]
            for j in range(H4):
                acts[t, b, j] = xp[t, b, j]
        _gemm_nn(&h[0, 0], &wh[0, 0], &acts[t, 0, 0], B, H, H4, 1.0)
        for b in range(B):
            for j in range(3 * H):
                acts[t, b, j] = 0.5 * acts[t, b, j]
        row = acts_a[t]
        np.tanh(row, out=row)
        for b in range(B):
            for j in range(3 * H):
                acts[t, b, j] = 0.5 * (acts[t, b, j] + 1.0)
            for j in range(H):
                tcs[t, b, j] = acts[t, b, H + j] * c[b, j] + acts[t, b, j] * acts[t, b, 3 * H + j]
        row = tc_a[t]
        np.tanh(row, out=row)
        for b in range(B):
            m = mk[t, b]
            for j in range(H):
                cn = acts[t, b, H + j] * c[b, j] + acts[t, b, j] * acts[t, b, 3 * H + j]
                tcv = tcs[t, b, j]
                hn = acts[t, b, 2 * H + j] * tcv
                out[t, b, j] = m * hn
                if m != 0.0:
                    h[b, j] = m * hn + (1.0 - m) * h[b, j]
                    c[b, j] = m * cn + (1.0 - m) * c[b, j]
    return out_a, hp_a, cp_a, acts_a, tc_a


def lstm_seq_backward(dout, w_h, mask, bint reverse, h_prev, c_prev, acts, tanh_c):
    cdef double[:, :, ::1] do_ = np.ascontiguousarray(dout, dtype=np.float64)
    cdef double[:, ::1] wh = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[:, :, ::1] hp = np.ascontiguousarray(h_prev, dtype=np.float64)
    cdef double[:, :, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef double[:, :, ::1] ac = np.ascontiguousarray(acts, dtype=np.float64)
    cdef double[:, :, ::1] tcs = np.ascontiguousarray(tanh_c, dtype=np.float64)
    cdef int T = do_.shape[0], B = do_.shape[1], H = do_.shape[2]
    cdef int H4 = 4 * H
    dxp_a = np.zeros((T, B, H4))
    dwh_a = np.zeros((H, H4))
    cdef double[:, :, ::1] dxp = dxp_a
    cdef double[:, ::1] dwh = dwh_a
    cdef double[:, ::1] dh = np.zeros((B, H))
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef double[:, ::1] dhp = np.zeros((B, H))
    cdef int step, t, b, j
    cdef double m, i_, f_, o_, g_, tcv, dhn, dcn
    with nogil:
        for step in range(T):
            t = step if reverse else T - 1 - step
            for b in range(B):
                m = mk[t, b]
                for j in range(H):
                    i_ = ac[t, b, j]
                    f_ = ac[t, b, H + j]
                    o_ = ac[t, b, 2 * H + j]
                    g_ = ac[t, b, 3 * H + j]
                    tcv = tcs[t, b, j]
                    dhn = m * (dh[b, j] + do_[t, b, j])
                    dcn = m * dc[b, j] + dhn * o_ * (1.0 - tcv * tcv)
                    dxp[t, b, j] = dcn * g_ * i_ * (1.0 - i_)
                    dxp[t, b, H + j] = dcn * cp[t, b, j] * f_ * (1.0 - f_)
                    dxp[t, b, 2 * H + j] = dhn * tcv * o_ * (1.0 - o_)
                    dxp[t, b, 3 * H + j] = dcn * i_ * (1.0 - g_ * g_)
                    dh[b, j] = (1.0 - m) * dh[b, j]
                    dc[b, j] = (1.0 - m) * dc[b, j] + dcn * f_
            _gemm_tn(&hp[t, 0, 0], &dxp[t, 0, 0], &dwh[0, 0], H, B, H4, 1.0)
            _gemm_nt(&dxp[t, 0, 0], &wh[0, 0], &dhp[0, 0], B, H4, H, 0.0)
            for b in range(B):
                for j in range(H):
                    dh[b, j] += dhp[b, j]
    return dxp_a, dwh_a


def ctc_loss_grad(log_probs, target, long blank):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef long[::1] tg = np.ascontiguousarray(target, dtype=np.int64)
    cdef int T = lp.shape[0], K = lp.shape[1]
    cdef int L = tg.shape[0]
    cdef int S = 2 * L + 1
    ext_a = np.full(S, blank, dtype=np.int64)
    cdef long[::1] ext = ext_a
    cdef int s, t, k
    for s in range(L):
        ext[2 * s + 1] = tg[s]
    alpha_a = np.full((T, S), NEG_INF)
    beta_a = np.full((T, S), NEG_INF)
    grad_a = np.zeros((T, K))
    cdef double[:, ::1] al = alpha_a
    cdef double[:, ::1] be = beta_a
    cdef double[:, ::1] gr = grad_a
    cdef double v, ll
    with nogil:
        al[0, 0] = lp[0, ext[0]]
        if S > 1:
            al[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                v = al[t - 1, s]
                if s >= 1:
                    v = _lae(v, al[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    v = _lae(v, al[t - 1, s - 2])
                if v != NEG_INF:
                    al[t, s] = v + lp[t, ext[s]]
        ll = al[T - 1, S - 1]
        if S > 1:
            ll = _lae(ll, al[T - 1, S - 2])
    if ll == NEG_INF:
        return np.inf, grad_a
    with nogil:
        be[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
        if S > 1:
            be[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(S):
                v = be[t + 1, s]
                if s + 1 < S:
                    v = _lae(v, be[t + 1, s + 1])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    v = _lae(v, be[t + 1, s + 2])
                if v != NEG_INF:
                    be[t, s] = v + lp[t, ext[s]]
        for t in range(T):
            for k in range(K):
                gr[t, k] = exp(lp[t, k])
            for s in range(S):
                if al[t, s] != NEG_INF and be[t, s] != NEG_INF:
                    gr[t, ext[s]] -= exp(al[t, s] + be[t, s] - lp[t, ext[s]] - ll)
    return -ll, grad_a


def edit_counts(ref, hyp):
    cdef long[::1] r = np.ascontiguousarray(ref, dtype=np.int64)
    cdef long[::1] h = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef int n = r.shape[0], m = h.shape[0]
    d_a = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef long[:, ::1] d = d_a
    cdef int i, j
    cdef long diag, best
    cdef long n_sub = 0, n_ins = 0, n_del = 0
    with nogil:
        for i in range(n + 1):
            d[i, 0] = i
        for j in range(m + 1):
            d[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                diag = d[i - 1, j - 1] + (r[i - 1] != h[j - 1])
                best = d[i - 1, j] + 1
                if diag < best:
                    best = diag
                if d[i, j - 1] + 1 < best:
                    best = d[i, j - 1] + 1
                d[i, j] = best
        i = n
        j = m
        while i > 0 or j > 0:
            if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (r[i - 1] != h[j - 1]):
                n_sub += r[i - 1] != h[j - 1]
                i -= 1
                j -= 1
            elif i > 0 and d[i, j] == d[i - 1, j] + 1:
                n_del += 1
                i -= 1
            else:
                n_ins += 1
                j -= 1
    return int(n_sub), int(n_ins), int(n_del)
