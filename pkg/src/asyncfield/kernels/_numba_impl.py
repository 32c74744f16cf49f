"""Loop kernels compiled with numba (plain Python loops when numba is absent).

All arrays are float64 / int64 and C-contiguous.  Shapes use
T = frames, K = support size, O = objects, M = intents.
"""
import math

import numpy as np

from .._backend import njit

# Each unordered frame pair enters the joint score twice (once per endpoint).
PAIR_MULTIPLICITY = 2.0


@njit(cache=True)
def local_update(theta, fi, sup_obj, pair_in, h_in, q, q_int, tol, max_iter, damping):
    K = theta.shape[0]
    O = fi.shape[0]
    M = fi.shape[1]
    logits = np.empty(K)
    fiq = np.empty(O)
    qobj = np.empty(O)
    ilog = np.empty(M)
    n = 0
    for it in range(max_iter):
        n = it + 1
        for o in range(O):
            s = 0.0
            for m in range(M):
                s += fi[o, m] * q_int[m]
            fiq[o] = s + pair_in[o]
        mx = -np.inf
        for k in range(K):
            v = theta[k] + fiq[sup_obj[k]]
            logits[k] = v
            if v > mx:
                mx = v
        tot = 0.0
        for k in range(K):
            e = math.exp(logits[k] - mx)
            logits[k] = e
            tot += e
        change = 0.0
        for o in range(O):
            qobj[o] = 0.0
        for k in range(K):
            new = logits[k] / tot
            if damping > 0.0:
                new = (1.0 - damping) * new + damping * q[k]
            change += abs(new - q[k])
            q[k] = new
            qobj[sup_obj[k]] += new

        mx = -np.inf
        for m in range(M):
            s = 0.0
            for o in range(O):
                s += qobj[o] * fi[o, m]
            v = h_in[m] + s
            ilog[m] = v
            if v > mx:
                mx = v
        tot = 0.0
        for m in range(M):
            e = math.exp(ilog[m] - mx)
            ilog[m] = e
            tot += e
        for m in range(M):
            new = ilog[m] / tot
            if damping > 0.0:
                new = (1.0 - damping) * new + damping * q_int[m]
            change += abs(new - q_int[m])
            q_int[m] = new
        if change < tol:
            break
    return n


@njit(cache=True)
def frame_update(theta, fi, sup_obj, pair_in, q, q_int, damping):
    """One frame update with the intent marginal held fixed."""
    K = theta.shape[0]
    O = fi.shape[0]
    M = fi.shape[1]
    fiq = np.empty(O)
    logits = np.empty(K)
    for o in range(O):
        s = 0.0
        for m in range(M):
            s += fi[o, m] * q_int[m]
        fiq[o] = s + pair_in[o]
    mx = -np.inf
    for k in range(K):
        v = theta[k] + fiq[sup_obj[k]]
        logits[k] = v
        if v > mx:
            mx = v
    tot = 0.0
    for k in range(K):
        e = math.exp(logits[k] - mx)
        logits[k] = e
        tot += e
    for k in range(K):
        new = logits[k] / tot
        if damping > 0.0:
            new = (1.0 - damping) * new + damping * q[k]
        q[k] = new


@njit(cache=True)
def mf_sweep(theta, fi, mu, sup_obj, kmat, q, q_int, tol, max_iter, damping, hold_intent=False):
    T = theta.shape[0]
    K = theta.shape[1]
    O = mu.shape[0]
    M = fi.shape[2]
    qobj = np.zeros((T, O))
    H = np.zeros((T, M))
    for j in range(T):
        for k in range(K):
            qobj[j, sup_obj[k]] += q[j, k]
        for m in range(M):
            s = 0.0
            for o in range(O):
                s += qobj[j, o] * fi[j, o, m]
            H[j, m] = s
    q_int_start = q_int.copy()
    ka = np.empty(O)
    kb = np.empty(O)
    pair_in = np.empty(O)
    h_in = np.empty(M)
    q_old = np.empty(K)
    delta = 0.0
    for i in range(T):
        for o in range(O):
            ka[o] = 0.0
            kb[o] = 0.0
        for j in range(T):
            if j > i:
                w = kmat[i, j]
                for o in range(O):
                    ka[o] += w * qobj[j, o]
            elif j < i:
                w = kmat[j, i]
                for o in range(O):
                    kb[o] += w * qobj[j, o]
        for o in range(O):
            fa = 0.0
            fb = 0.0
            for b in range(O):
                fa += mu[o, b] * ka[b]
                fb += mu[b, o] * kb[b]
            pair_in[o] = PAIR_MULTIPLICITY * (fa + fb)
        for m in range(M):
            s = 0.0
            for j in range(T):
                if j != i:
                    s += H[j, m]
            h_in[m] = s
        for k in range(K):
            q_old[k] = q[i, k]
        if hold_intent:
            frame_update(theta[i], fi[i], sup_obj, pair_in, q[i], q_int, damping)
        else:
            local_update(theta[i], fi[i], sup_obj, pair_in, h_in, q[i], q_int, tol, max_iter, damping)
        d = 0.0
        for o in range(O):
            qobj[i, o] = 0.0
        for k in range(K):
            d += abs(q[i, k] - q_old[k])
            qobj[i, sup_obj[k]] += q[i, k]
        for m in range(M):
            s = 0.0
            for o in range(O):
                s += qobj[i, o] * fi[i, o, m]
            H[i, m] = s
        if d > delta:
            delta = d
    if hold_intent:
        ilog = np.empty(M)
        mx = -np.inf
        for m in range(M):
            s = 0.0
            for j in range(T):
                s += H[j, m]
            ilog[m] = s
            if s > mx:
                mx = s
        tot = 0.0
        for m in range(M):
            ilog[m] = math.exp(ilog[m] - mx)
            tot += ilog[m]
        for m in range(M):
            new = ilog[m] / tot
            if damping > 0.0:
                new = (1.0 - damping) * new + damping * q_int[m]
            q_int[m] = new
    d = 0.0
    for m in range(M):
        d += abs(q_int[m] - q_int_start[m])
    if d > delta:
        delta = d
    return delta


@njit(cache=True)
def log_partition(theta, fi, mu_pf, sup_obj, kmat):
    T = theta.shape[0]
    K = theta.shape[1]
    M = fi.shape[2]
    x = np.zeros(T, dtype=np.int64)
    mx = -np.inf
    acc = 0.0
    done = False
    while not done:
        base = 0.0
        for i in range(T):
            oi = sup_obj[x[i]]
            base += theta[i, x[i]]
            for j in range(i + 1, T):
                oj = sup_obj[x[j]]
                base += (mu_pf[i, oi, oj] + mu_pf[j, oi, oj]) * kmat[i, j]
        for I in range(M):
            v = base
            for i in range(T):
                v += fi[i, sup_obj[x[i]], I]
            if v > mx:
                acc = acc * math.exp(mx - v) + 1.0
                mx = v
            else:
                acc += math.exp(v - mx)
        pos = T - 1
        while pos >= 0:
            x[pos] += 1
            if x[pos] < K:
                break
            x[pos] = 0
            pos -= 1
        if pos < 0:
            done = True
    return mx + math.log(acc)


@njit(cache=True)
def enumerate_field(theta, fi, mu_pf, sup_obj, kmat):
    T = theta.shape[0]
    K = theta.shape[1]
    O = mu_pf.shape[1]
    M = fi.shape[2]
    x = np.zeros(T, dtype=np.int64)
    log_z = log_partition(theta, fi, mu_pf, sup_obj, kmat)

    p_x = np.zeros((T, K))
    p_oi = np.zeros((T, O, M))
    e_after = np.zeros((T, O, O))
    e_before = np.zeros((T, O, O))
    p_i = np.zeros(M)
    done = False
    while not done:
        base = 0.0
        for i in range(T):
            oi = sup_obj[x[i]]
            base += theta[i, x[i]]
            for j in range(i + 1, T):
                base += (mu_pf[i, oi, sup_obj[x[j]]] + mu_pf[j, oi, sup_obj[x[j]]]) * kmat[i, j]
        ptot = 0.0
        for I in range(M):
            v = base
            for i in range(T):
                v += fi[i, sup_obj[x[i]], I]
            p = math.exp(v - log_z)
            ptot += p
            p_i[I] += p
            for i in range(T):
                p_oi[i, sup_obj[x[i]], I] += p
        for i in range(T):
            oi = sup_obj[x[i]]
            p_x[i, x[i]] += ptot
            for j in range(i + 1, T):
                oj = sup_obj[x[j]]
                w = ptot * kmat[i, j]
                e_after[i, oi, oj] += w
                e_before[j, oi, oj] += w
        pos = T - 1
        while pos >= 0:
            x[pos] += 1
            if x[pos] < K:
                break
            x[pos] = 0
            pos -= 1
        if pos < 0:
            done = True
    return log_z, p_x, p_oi, e_after, e_before, p_i


@njit(cache=True)
def _draw(logits, u):
    n = logits.shape[0]
    mx = -np.inf
    for k in range(n):
        if logits[k] > mx:
            mx = logits[k]
    tot = 0.0
    for k in range(n):
        logits[k] = math.exp(logits[k] - mx)
        tot += logits[k]
    target = u * tot
    c = 0.0
    for k in range(n):
        c += logits[k]
        if c > target:
            return k
    return n - 1


@njit(cache=True)
def gibbs_chain(theta, fi, mu, sup_obj, kmat, x0, i0, uniforms, burn_in, thin, n_samples):
    T = theta.shape[0]
    K = theta.shape[1]
    M = fi.shape[2]
    x = x0.copy()
    I = i0
    xs = np.empty((n_samples, T), dtype=np.int64)
    intents = np.empty(n_samples, dtype=np.int64)
    O = mu.shape[0]
    logits = np.empty(K)
    ilog = np.empty(M)
    objscore = np.empty(O)
    got = 0
    sweep = 0
    while got < n_samples:
        for t in range(T):
            for o in range(O):
                s = fi[t, o, I]
                for j in range(T):
                    if j > t:
                        s += PAIR_MULTIPLICITY * mu[o, sup_obj[x[j]]] * kmat[t, j]
                    elif j < t:
                        s += PAIR_MULTIPLICITY * mu[sup_obj[x[j]], o] * kmat[j, t]
                objscore[o] = s
            for k in range(K):
                logits[k] = theta[t, k] + objscore[sup_obj[k]]
            x[t] = _draw(logits, uniforms[sweep, t])
        for m in range(M):
            s = 0.0
            for t in range(T):
                s += fi[t, sup_obj[x[t]], m]
            ilog[m] = s
        I = _draw(ilog, uniforms[sweep, T])
        sweep += 1
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            for t in range(T):
                xs[got, t] = x[t]
            intents[got] = I
            got += 1
    return xs, intents


@njit(cache=True)
def _discounted_sum(mask, stamp, weight, values, d, h_fixed, out):
    n = stamp.shape[0]
    D = values.shape[1]
    for c in range(D):
        out[c] = 0.0
    count = 0
    for j in range(n):
        if mask[j]:
            count += 1
    if count == 0:
        return
    coef = np.zeros(n)
    norm = 0.0
    for j in range(n):
        if not mask[j]:
            continue
        rank = 0
        for l in range(n):
            if mask[l] and stamp[l] > stamp[j]:
                rank += 1
        c = d ** rank
        coef[j] = c
        norm += c
    h = float(count) if h_fixed < 0.0 else h_fixed
    scale = h / norm
    for j in range(n):
        if mask[j]:
            w = scale * coef[j] * weight[j]
            for c in range(D):
                out[c] += w * values[j, c]


@njit(cache=True)
def approx_incoming(pos, stamp, has_truth, fa, fb, h, hs, k, ks,
                    target, d, h_fixed, sigma, kernel_weight, use_kernel):
    n = pos.shape[0]
    O = fa.shape[1]
    M = h.shape[1]
    kern = np.ones(n)
    ones = np.ones(n)
    if use_kernel:
        for j in range(n):
            diff = pos[j] - target
            kern[j] = kernel_weight * math.exp(-(diff * diff) / (2.0 * sigma * sigma))
    after = np.zeros(n, dtype=np.bool_)
    after_t = np.zeros(n, dtype=np.bool_)
    before = np.zeros(n, dtype=np.bool_)
    before_t = np.zeros(n, dtype=np.bool_)
    other = np.zeros(n, dtype=np.bool_)
    other_t = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        after[j] = pos[j] > target
        before[j] = pos[j] < target
        other[j] = pos[j] != target
        after_t[j] = after[j] and has_truth[j]
        before_t[j] = before[j] and has_truth[j]
        other_t[j] = other[j] and has_truth[j]
    fa_in = np.empty(O)
    fb_in = np.empty(O)
    ka_in = np.empty(O)
    kas_in = np.empty(O)
    kb_in = np.empty(O)
    kbs_in = np.empty(O)
    h_in = np.empty(M)
    hs_in = np.empty(M)
    _discounted_sum(after, stamp, kern, fa, d, h_fixed, fa_in)
    _discounted_sum(before, stamp, kern, fb, d, h_fixed, fb_in)
    _discounted_sum(other, stamp, ones, h, d, h_fixed, h_in)
    _discounted_sum(other_t, stamp, ones, hs, d, h_fixed, hs_in)
    _discounted_sum(after, stamp, kern, k, d, h_fixed, ka_in)
    _discounted_sum(after_t, stamp, kern, ks, d, h_fixed, kas_in)
    _discounted_sum(before, stamp, kern, k, d, h_fixed, kb_in)
    _discounted_sum(before_t, stamp, kern, ks, d, h_fixed, kbs_in)
    return fa_in, fb_in, h_in, hs_in, ka_in, kas_in, kb_in, kbs_in
