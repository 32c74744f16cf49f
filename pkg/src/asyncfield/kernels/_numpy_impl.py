"""Vectorised numpy twins of the loop kernels in ``_numba_impl``.

Same signatures and semantics; used when numba is unavailable or disabled,
and as an independent cross-check in the test-suite.
"""
import numpy as np
from scipy.special import logsumexp

PAIR_MULTIPLICITY = 2.0


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def local_update(theta, fi, sup_obj, pair_in, h_in, q, q_int, tol, max_iter, damping):
    O = fi.shape[0]
    n = 0
    for it in range(max_iter):
        n = it + 1
        new = _softmax(theta + (fi @ q_int + pair_in)[sup_obj])
        if damping > 0.0:
            new = (1.0 - damping) * new + damping * q
        change = np.abs(new - q).sum()
        q[:] = new
        qobj = np.bincount(sup_obj, weights=q, minlength=O)
        new_i = _softmax(h_in + qobj @ fi)
        if damping > 0.0:
            new_i = (1.0 - damping) * new_i + damping * q_int
        change += np.abs(new_i - q_int).sum()
        q_int[:] = new_i
        if change < tol:
            break
    return n


def frame_update(theta, fi, sup_obj, pair_in, q, q_int, damping):
    new = _softmax(theta + (fi @ q_int + pair_in)[sup_obj])
    if damping > 0.0:
        new = (1.0 - damping) * new + damping * q
    q[:] = new


def _object_marginals(q, sup_obj, n_object):
    onehot = np.zeros((q.shape[-1], n_object))
    onehot[np.arange(q.shape[-1]), sup_obj] = 1.0
    return q @ onehot


def mf_sweep(theta, fi, mu, sup_obj, kmat, q, q_int, tol, max_iter, damping, hold_intent=False):
    T = theta.shape[0]
    O = mu.shape[0]
    qobj = _object_marginals(q, sup_obj, O)
    H = np.einsum("to,tom->tm", qobj, fi)
    upper = np.triu(kmat, 1)
    q_int_start = q_int.copy()
    delta = 0.0
    for i in range(T):
        ka = upper[i] @ qobj
        kb = upper[:, i] @ qobj
        pair_in = PAIR_MULTIPLICITY * (mu @ ka + mu.T @ kb)
        h_in = H.sum(axis=0) - H[i]
        q_old = q[i].copy()
        row = q[i].copy()
        if hold_intent:
            frame_update(theta[i], fi[i], sup_obj, pair_in, row, q_int, damping)
        else:
            local_update(theta[i], fi[i], sup_obj, pair_in, h_in, row, q_int, tol, max_iter, damping)
        q[i] = row
        qobj[i] = np.bincount(sup_obj, weights=row, minlength=O)
        H[i] = qobj[i] @ fi[i]
        delta = max(delta, np.abs(row - q_old).sum())
    if hold_intent:
        new_i = _softmax(H.sum(axis=0))
        if damping > 0.0:
            new_i = (1.0 - damping) * new_i + damping * q_int
        q_int[:] = new_i
    return max(delta, np.abs(q_int - q_int_start).sum())


def _score_tensor(theta, fi, mu_pf, sup_obj, kmat):
    T, K = theta.shape
    M = fi.shape[2]
    shape = (K,) * T + (M,)
    s = np.zeros(shape)
    for i in range(T):
        bshape = [1] * (T + 1)
        bshape[i] = K
        s += theta[i].reshape(bshape)
        bshape[T] = M
        s += fi[i][sup_obj].reshape(bshape)
    for i in range(T):
        for j in range(i + 1, T):
            pair = (mu_pf[i] + mu_pf[j])[np.ix_(sup_obj, sup_obj)] * kmat[i, j]
            bshape = [1] * (T + 1)
            bshape[i] = K
            bshape[j] = K
            s += pair.reshape(bshape)
    return s


def log_partition(theta, fi, mu_pf, sup_obj, kmat):
    return float(logsumexp(_score_tensor(theta, fi, mu_pf, sup_obj, kmat)))


def enumerate_field(theta, fi, mu_pf, sup_obj, kmat):
    T, K = theta.shape
    O = mu_pf.shape[1]
    s = _score_tensor(theta, fi, mu_pf, sup_obj, kmat)
    log_z = float(logsumexp(s))
    p = np.exp(s - log_z)
    axes = tuple(range(T + 1))
    onehot = np.zeros((K, O))
    onehot[np.arange(K), sup_obj] = 1.0
    p_x = np.zeros((T, K))
    p_oi = np.zeros((T, O, fi.shape[2]))
    e_after = np.zeros((T, O, O))
    e_before = np.zeros((T, O, O))
    for i in range(T):
        p_x[i] = p.sum(axis=tuple(a for a in axes if a != i))
        p_oi[i] = onehot.T @ p.sum(axis=tuple(a for a in axes if a not in (i, T)))
    for i in range(T):
        for j in range(i + 1, T):
            pair = onehot.T @ p.sum(axis=tuple(a for a in axes if a not in (i, j))) @ onehot
            e_after[i] += kmat[i, j] * pair
            e_before[j] += kmat[i, j] * pair
    p_i = p.sum(axis=axes[:-1])
    return log_z, p_x, p_oi, e_after, e_before, p_i


def _draw(logits, u):
    w = np.exp(logits - logits.max())
    c = np.cumsum(w)
    k = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(k, len(w) - 1)


def gibbs_chain(theta, fi, mu, sup_obj, kmat, x0, i0, uniforms, burn_in, thin, n_samples):
    T = theta.shape[0]
    x = x0.copy()
    I = i0
    xs = np.empty((n_samples, T), dtype=np.int64)
    intents = np.empty(n_samples, dtype=np.int64)
    upper = np.triu(kmat, 1)
    got = 0
    sweep = 0
    while got < n_samples:
        for t in range(T):
            objs = sup_obj[x]
            after = mu[:, objs] @ upper[t]
            before = mu[objs, :].T @ upper[:, t]
            logits = theta[t] + fi[t, sup_obj, I] + PAIR_MULTIPLICITY * (after + before)[sup_obj]
            x[t] = _draw(logits, uniforms[sweep, t])
        ilog = fi[np.arange(T), sup_obj[x]].sum(axis=0)
        I = _draw(ilog, uniforms[sweep, T])
        sweep += 1
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            xs[got] = x
            intents[got] = I
            got += 1
    return xs, intents


def _discounted_sum(mask, stamp, weight, values, d, h_fixed):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return np.zeros(values.shape[1])
    order = np.argsort(-stamp[idx], kind="stable")
    rank = np.empty(idx.size)
    rank[order] = np.arange(idx.size)
    coef = d ** rank
    h = float(idx.size) if h_fixed < 0.0 else h_fixed
    w = (h / coef.sum()) * coef * weight[idx]
    return w @ values[idx]


def approx_incoming(pos, stamp, has_truth, fa, fb, h, hs, k, ks,
                    target, d, h_fixed, sigma, kernel_weight, use_kernel):
    n = pos.shape[0]
    if use_kernel:
        kern = kernel_weight * np.exp(-((pos - target) ** 2) / (2.0 * sigma * sigma))
    else:
        kern = np.ones(n)
    ones = np.ones(n)
    after = pos > target
    before = pos < target
    other = pos != target
    return (
        _discounted_sum(after, stamp, kern, fa, d, h_fixed),
        _discounted_sum(before, stamp, kern, fb, d, h_fixed),
        _discounted_sum(other, stamp, ones, h, d, h_fixed),
        _discounted_sum(other & has_truth, stamp, ones, hs, d, h_fixed),
        _discounted_sum(after, stamp, kern, k, d, h_fixed),
        _discounted_sum(after & has_truth, stamp, kern, ks, d, h_fixed),
        _discounted_sum(before, stamp, kern, k, d, h_fixed),
        _discounted_sum(before & has_truth, stamp, kern, ks, d, h_fixed),
    )
