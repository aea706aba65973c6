"""Compiled event loops for the uniformized JSQ(d) chain and its monotone coupling.

Both loops draw from numba's per-thread Mersenne Twister, reseeded at entry, so a
run is a pure function of its arguments. Tail-count arrays ``tail`` hold
``tail[i] = #{v : X_v >= i}`` with ``tail[0] == N`` and grow by doubling.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def rate_ratio_expansion(x, y, d):
    # sum_{i=1}^d C(d,i) (x-y)^{i-1} y^{d-i}, Horner in (x-y)
    h = x - y
    acc = 0.0
    binom = 1.0
    ypow = 1.0
    for i in range(d, 0, -1):
        acc = acc * h + binom * ypow
        binom = binom * i / (d - i + 1)
        ypow *= y
    return acc


@njit(cache=True)
def _grow(tail):
    bigger = np.zeros(2 * tail.size, dtype=np.int64)
    bigger[:tail.size] = tail
    return bigger


@njit(cache=True)
def select_server(nbrs, queues, d, buf, cand):
    """JSQ(d) choice: d samples with replacement, uniform over distinct minimizers."""
    dw = nbrs.size
    best = np.int64(1) << 62
    for j in range(d):
        v = nbrs[np.random.randint(0, dw)]
        buf[j] = v
        if queues[v] < best:
            best = queues[v]
    nc = 0
    for j in range(d):
        v = buf[j]
        if queues[v] != best:
            continue
        dup = False
        for k in range(nc):
            if cand[k] == v:
                dup = True
                break
        if not dup:
            cand[nc] = v
            nc += 1
    return cand[np.random.randint(0, nc)]


@njit(cache=True)
def assignment_probs(nbrs, queues, d, cnt, out):
    """Routing law of JSQ(d) over ``nbrs``; writes into ``out`` and returns its sum.

    ``cnt`` is a zeroed scratch array longer than the largest queue among
    ``nbrs``; it is left zeroed on return.
    """
    dw = nbrs.size
    top = 0
    for j in range(dw):
        x = queues[nbrs[j]]
        cnt[x] += 1
        if x > top:
            top = x
    # turn per-length counts into local tail counts Q_i^w, in place from the top
    run = 0
    for i in range(top, -1, -1):
        c = cnt[i]
        run += c
        cnt[i] = run
    total = 0.0
    for j in range(dw):
        x = queues[nbrs[j]]
        hi = cnt[x]
        lo = cnt[x + 1] if x + 1 <= top else 0
        a = hi / dw
        b = lo / dw
        p = rate_ratio_expansion(a, b, d) / dw
        out[j] = p
        total += p
    for i in range(top + 1):
        cnt[i] = 0
    return total


@njit(cache=True)
def coupled_route(nbrs, p1, p2, u):
    """Positions in ``nbrs`` chosen by systems 1 and 2 for the shared uniform ``u``.

    Shared blocks min(p1, p2) come first in neighbor order, followed by each
    system's residual blocks in the same order.
    """
    dw = nbrs.size
    shared = 0.0
    for j in range(dw):
        shared += min(p1[j], p2[j])
    if u < shared:
        acc = 0.0
        for j in range(dw):
            acc += min(p1[j], p2[j])
            if u < acc:
                return j, j
        return dw - 1, dw - 1
    r = u - shared
    c1 = -1
    c2 = -1
    last1 = -1
    last2 = -1
    acc1 = 0.0
    acc2 = 0.0
    for j in range(dw):
        m = min(p1[j], p2[j])
        e1 = p1[j] - m
        e2 = p2[j] - m
        if e1 > 0.0:
            last1 = j
        if e2 > 0.0:
            last2 = j
        acc1 += e1
        acc2 += e2
        if c1 < 0 and e1 > 0.0 and r < acc1:
            c1 = j
        if c2 < 0 and e2 > 0.0 and r < acc2:
            c2 = j
    # rounding can leave u just past the last residual block
    if c1 < 0:
        c1 = last1 if last1 >= 0 else dw - 1
    if c2 < 0:
        c2 = last2 if last2 >= 0 else dw - 1
    return c1, c2


@njit(cache=True)
def recount_tail(queues, size):
    tail = np.zeros(size, dtype=np.int64)
    for v in range(queues.size):
        for i in range(queues[v] + 1):
            tail[i] += 1
    return tail


@njit(cache=True, nogil=True)
def run_chain(type_ptr, type_idx, n_servers, n_types, lam, d, queues, tail, t0, horizon,
              sample_times, imax, avg_start, seed, check_every):
    """Uniformized JSQ(d) chain on [t0, horizon].

    Returns (samples, integrals, tail, arrivals, departures, events) where
    ``samples[k, i-1] = Q_i / N`` at ``sample_times[k]`` and ``integrals[i]`` is
    the integral of Q_i over (avg_start, horizon] for i <= imax.
    """
    np.random.seed(seed)
    ns = sample_times.size
    samples = np.zeros((ns, imax))
    integ = np.zeros(imax + 1)
    last = np.full(imax + 1, avg_start)
    rate = (lam + 1.0) * n_servers
    p_arrival = lam / (lam + 1.0)
    buf = np.empty(d, dtype=np.int64)
    cand = np.empty(d, dtype=np.int64)
    arrivals = 0
    departures = 0
    events = 0
    t = t0
    k = 0
    while True:
        t_next = t + np.random.exponential(1.0 / rate)
        while k < ns and sample_times[k] < t_next:
            for i in range(1, imax + 1):
                if i < tail.size:
                    samples[k, i - 1] = tail[i] / n_servers
            k += 1
        if t_next > horizon:
            break
        t = t_next
        if np.random.random() < p_arrival:
            w = np.random.randint(0, n_types)
            nbrs = type_idx[type_ptr[w]:type_ptr[w + 1]]
            v = select_server(nbrs, queues, d, buf, cand)
            level = queues[v] + 1
            if level + 1 >= tail.size:
                tail = _grow(tail)
            if level <= imax and t > avg_start:
                integ[level] += tail[level] * (t - last[level])
                last[level] = t
            tail[level] += 1
            queues[v] = level
            arrivals += 1
        else:
            v = np.random.randint(0, n_servers)
            level = queues[v]
            if level > 0:
                if level <= imax and t > avg_start:
                    integ[level] += tail[level] * (t - last[level])
                    last[level] = t
                tail[level] -= 1
                queues[v] = level - 1
                departures += 1
        events += 1
        if check_every > 0 and events % check_every == 0:
            fresh = recount_tail(queues, tail.size)
            for i in range(tail.size):
                if fresh[i] != tail[i]:
                    raise RuntimeError("incremental tail counts diverged from recount")
    if horizon > avg_start:
        for i in range(1, imax + 1):
            if i < tail.size:
                integ[i] += tail[i] * (horizon - last[i])
    return samples, integ, tail, arrivals, departures, events


@njit(cache=True, nogil=True)
def run_coupled(type_ptr, type_idx, n_servers, n_types, lam, d, q1, q2, tail1, tail2,
                horizon, sample_times, imax, seed, check_ordered, check_every, keep_states):
    """Two JSQ(d) systems driven by the shared-randomness monotone coupling.

    Returns (gaps, occ1, occ2, violations, events, tail1, tail2, snap1, snap2).
    ``gaps[k]`` is sum_i |Q2_i - Q1_i| / N at ``sample_times[k]``; ``snap*``
    hold full queue vectors at every sample time when ``keep_states`` is set.
    """
    np.random.seed(seed)
    ns = sample_times.size
    gaps = np.zeros(ns)
    occ1 = np.zeros((ns, imax))
    occ2 = np.zeros((ns, imax))
    n_snap = ns if keep_states else 0
    snap1 = np.zeros((n_snap, n_servers), dtype=np.int64)
    snap2 = np.zeros((n_snap, n_servers), dtype=np.int64)
    rate = (lam + 1.0) * n_servers
    p_arrival = lam / (lam + 1.0)
    max_dw = 0
    for w in range(n_types):
        if type_ptr[w + 1] - type_ptr[w] > max_dw:
            max_dw = type_ptr[w + 1] - type_ptr[w]
    p1 = np.zeros(max_dw)
    p2 = np.zeros(max_dw)
    size = max(tail1.size, tail2.size)
    if tail1.size < size:
        t1 = np.zeros(size, dtype=np.int64)
        t1[:tail1.size] = tail1
        tail1 = t1
    if tail2.size < size:
        t2 = np.zeros(size, dtype=np.int64)
        t2[:tail2.size] = tail2
        tail2 = t2
    cnt = np.zeros(size + 2, dtype=np.int64)
    violations = 0
    events = 0
    t = 0.0
    k = 0
    while True:
        t_next = t + np.random.exponential(1.0 / rate)
        while k < ns and sample_times[k] < t_next:
            g = 0
            for i in range(1, tail1.size):
                g += abs(tail2[i] - tail1[i])
            gaps[k] = g / n_servers
            for i in range(1, imax + 1):
                if i < tail1.size:
                    occ1[k, i - 1] = tail1[i] / n_servers
                    occ2[k, i - 1] = tail2[i] / n_servers
            if keep_states:
                snap1[k, :] = q1
                snap2[k, :] = q2
            k += 1
        if t_next > horizon:
            break
        t = t_next
        if np.random.random() < p_arrival:
            w = np.random.randint(0, n_types)
            u = np.random.random()
            nbrs = type_idx[type_ptr[w]:type_ptr[w + 1]]
            dw = nbrs.size
            s1 = assignment_probs(nbrs, q1, d, cnt, p1)
            s2 = assignment_probs(nbrs, q2, d, cnt, p2)
            if abs(s1 - 1.0) > 1e-9 or abs(s2 - 1.0) > 1e-9:
                raise RuntimeError("IntervalGap: routing probabilities do not sum to one")
            j1, j2 = coupled_route(nbrs, p1[:dw], p2[:dw], u)
            v1 = nbrs[j1]
            v2 = nbrs[j2]
            l1 = q1[v1] + 1
            l2 = q2[v2] + 1
            if max(l1, l2) + 2 >= tail1.size:
                tail1 = _grow(tail1)
                tail2 = _grow(tail2)
                cnt = np.zeros(tail1.size + 2, dtype=np.int64)
            tail1[l1] += 1
            q1[v1] = l1
            tail2[l2] += 1
            q2[v2] = l2
            if check_ordered and (q1[v1] > q2[v1] or q1[v2] > q2[v2]):
                violations += 1
        else:
            v = np.random.randint(0, n_servers)
            if q1[v] > 0:
                tail1[q1[v]] -= 1
                q1[v] -= 1
            if q2[v] > 0:
                tail2[q2[v]] -= 1
                q2[v] -= 1
            if check_ordered and q1[v] > q2[v]:
                violations += 1
        events += 1
        if check_ordered and check_every > 0 and events % check_every == 0:
            for v in range(n_servers):
                if q1[v] > q2[v]:
                    violations += 1
    return gaps, occ1, occ2, violations, events, tail1, tail2, snap1, snap2
