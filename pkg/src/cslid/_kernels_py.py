"""Pure numpy implementations of the hot loops.

Same signatures and results as the compiled ``_kernels`` module; selected by
:mod:`cslid.kernels` when the extension is unavailable or ``CSLID_PURE=1``.
"""

import math

import numpy as np

NEG_INF = -np.inf


def _logaddexp3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def _extended(target, blank):
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext, blank):
    # s-2 -> s transition allowed for labels that differ from the label two back
    allow = np.zeros(len(ext), dtype=bool)
    allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def ctc_forward(log_probs, target, blank):
    """Log-space alpha lattice; returns (log_likelihood, log_alpha)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T = log_probs.shape[0]
    ext = _extended(np.asarray(target, dtype=np.int64), blank)
    S = len(ext)
    allow = _skip_allowed(ext, blank)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        shift1 = np.concatenate(([NEG_INF], prev[:-1]))
        shift2 = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))[:S]
        shift2 = np.where(allow, shift2, NEG_INF)
        with np.errstate(invalid="ignore"):
            alpha[t] = _logaddexp3(prev, shift1, shift2) + log_probs[t, ext]
    if S > 1:
        ll = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        ll = alpha[T - 1, 0]
    return float(ll), alpha


def ctc_loss_grad(log_probs, target, blank):
    """Negative log-likelihood and its gradient w.r.t. the pre-softmax logits.

    ``log_probs`` must be log-softmax outputs.  Returns ``(nll, grad)``; for an
    infeasible target ``nll`` is ``inf`` and ``grad`` is all zeros.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T, K = log_probs.shape
    ext = _extended(np.asarray(target, dtype=np.int64), blank)
    S = len(ext)
    ll, alpha = ctc_forward(log_probs, target, blank)
    if ll == NEG_INF:
        return math.inf, np.zeros_like(log_probs)
    allow = _skip_allowed(ext, blank)
    allow_next = np.zeros(S, dtype=bool)
    allow_next[:-2] = allow[2:]
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = log_probs[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        shift1 = np.concatenate((nxt[1:], [NEG_INF]))
        shift2 = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:S]
        shift2 = np.where(allow_next, shift2, NEG_INF)
        with np.errstate(invalid="ignore"):
            beta[t] = _logaddexp3(nxt, shift1, shift2) + log_probs[t, ext]
    # alpha and beta both include the emission at t
    with np.errstate(invalid="ignore"):
        occ = alpha + beta - log_probs[:, ext] - ll
    gamma = np.zeros((T, K))
    for s in range(S):
        gamma[:, ext[s]] += np.exp(occ[:, s])
    grad = np.exp(log_probs) - gamma
    return -ll, grad


def edit_counts(ref, hyp):
    """Minimal-edit alignment counts ``(n_sub, n_ins, n_del)``.

    Backtrace prefers the diagonal (match/substitution), then deletion, then
    insertion.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ri != hyp[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    i, j = n, m
    n_sub = n_ins = n_del = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            n_sub += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            n_del += 1
            i -= 1
        else:
            n_ins += 1
            j -= 1
    return n_sub, n_ins, n_del


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_seq_forward(xproj, w_h, mask, reverse):
    """Run the LSTM recurrence over precomputed input projections.

    xproj: (T, B, 4H) = x @ W_x + b; w_h: (H, 4H); mask: (T, B) of 0/1.
    Gate order is [input, forget, output, candidate].  Masked steps leave the
    state untouched and emit zeros, so padded frames at the end of a sequence
    are invisible in both directions.
    Returns (out, h_prev, c_prev, acts, tanh_c).
    """
    T, B, H4 = xproj.shape
    H = H4 // 4
    out = np.zeros((T, B, H))
    h_prev = np.zeros((T, B, H))
    c_prev = np.zeros((T, B, H))
    acts = np.zeros((T, B, H4))
    tanh_c = np.zeros((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h_prev[t] = h
        c_prev[t] = c
        z = xproj[t] + h @ w_h
        a = acts[t]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c_new = a[:, H : 2 * H] * c + a[:, :H] * a[:, 3 * H :]
        tc = np.tanh(c_new)
        tanh_c[t] = tc
        h_new = a[:, 2 * H : 3 * H] * tc
        m = mask[t][:, None]
        out[t] = m * h_new
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return out, h_prev, c_prev, acts, tanh_c


def lstm_seq_backward(dout, w_h, mask, reverse, h_prev, c_prev, acts, tanh_c):
    """Backward pass of :func:`lstm_seq_forward`; returns (dxproj, dw_h)."""
    T, B, H = dout.shape
    dxproj = np.zeros((T, B, 4 * H))
    dw_h = np.zeros_like(w_h)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        m = mask[t][:, None]
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = tanh_c[t]
        dh_new = m * (dh + dout[t])
        dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
        dz = dxproj[t]
        dz[:, :H] = dc_new * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc_new * c_prev[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh_new * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc_new * i * (1.0 - g * g)
        dw_h += h_prev[t].T @ dz
        dh = (1.0 - m) * dh + dz @ w_h.T
        dc = (1.0 - m) * dc + dc_new * f
    return dxproj, dw_h
