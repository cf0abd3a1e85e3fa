"""Compiled inner loops: delay-exponential inversion and the SSA event loop.

Everything here operates on plain arrays so it can be JIT-compiled with
``nogil=True``; the Python-facing wrappers live in :mod:`delaycomp.sampler`
and :mod:`delaycomp.ssa`.
"""

import math

import numpy as np
from numba import njit

# Terms kept in the breakpoint expansion; the k-th term is bounded by
# 1/k! relative to the result when mu*tau <= 1/e.
N_TERMS = 30

U_MIN = 1e-12
U_MAX = 1.0 - 1e-16

KIND_CONSTANT_INFLUX = 0
KIND_PER_CAPITA = 1
KIND_MASS_ACTION = 2
KIND_POPULATION_BIRTH = 3

STATUS_OK = 0
STATUS_NEGATIVE_COUNT = 1
STATUS_CLOCK_MISMATCH = 2


@njit(cache=True, nogil=True)
def breakpoint_values(mu, tau, n_max, full=False):
    """Survival values at ``n tau`` for ``n = 0..n_max``.

    Uses ``S((n+1) tau) = sum_k (-mu tau)^k / k! S((n-k) tau)``, which only
    adds positive, factorially damped contributions of earlier breakpoints.
    With ``full`` every term is kept (needed when ``mu tau > 1/e``).
    """
    out = np.empty(n_max + 1)
    out[0] = 1.0
    x = -mu * tau
    n_terms = n_max if full else min(N_TERMS, n_max)
    coef = np.empty(n_terms + 1)
    coef[0] = 1.0
    for k in range(1, n_terms + 1):
        coef[k] = coef[k - 1] * x / k
    for n in range(n_max):
        s = 0.0
        kmax = min(n, n_terms)
        for k in range(kmax + 1):
            s += coef[k] * out[n - k]
        out[n + 1] = s
    return out


@njit(cache=True, nogil=True)
def piece_value(mu, bp, n, s):
    """Survival at ``n tau + s`` for ``0 <= s <= tau`` from breakpoints ``bp``."""
    if n < 0:
        return 0.0
    x = -mu * s
    c = 1.0
    total = bp[n]
    kmax = n if mu * s > 1.0 else min(n, N_TERMS)
    for k in range(1, kmax + 1):
        c *= x / k
        total += c * bp[n - k]
    return total


@njit(cache=True, nogil=True)
def dexp_quantile(u, mu, tau, bp, nbp):
    """Generalized inverse ``inf{t : S(t) <= u}`` of the dexp survival."""
    if tau == 0.0:
        return -math.log(u) / mu
    if u >= 1.0 - mu * tau:
        return tau + (1.0 - u) / mu
    # bp[1:] is strictly decreasing; find n with bp[n] > u >= bp[n + 1].
    lo = 1
    hi = nbp - 1
    if u < bp[hi]:
        # Below the table floor; clamp to its last breakpoint.
        return hi * tau
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bp[mid] > u:
            lo = mid
        else:
            hi = mid
    n = lo
    a = 0.0
    b = tau
    fa = bp[n] - u
    fb = bp[n + 1] - u
    if fb == 0.0:
        return (n + 1) * tau
    s = tau * fa / (fa - fb)
    for _ in range(100):
        f = piece_value(mu, bp, n, s) - u
        if f == 0.0:
            break
        if f > 0.0:
            a = s
        else:
            b = s
        d = -mu * piece_value(mu, bp, n - 1, s)
        s_new = s - f / d if d != 0.0 else 0.5 * (a + b)
        if not (a < s_new < b):
            s_new = 0.5 * (a + b)
        if abs(s_new - s) <= 2e-16 * (n * tau + s):
            s = s_new
            break
        s = s_new
    return n * tau + s


@njit(cache=True, nogil=True)
def open_uniform(rng):
    """Uniform on (0, 1), clamped to ``[U_MIN, U_MAX]``."""
    u = 1.0 - rng.random()
    if u > U_MAX:
        u = U_MAX
    elif u < U_MIN:
        u = U_MIN
    return u


@njit(cache=True, nogil=True)
def draw_dexp(rng, mu, tau, bp, nbp):
    return dexp_quantile(open_uniform(rng), mu, tau, bp, nbp)


@njit(cache=True, nogil=True)
def draw_dexp_many(rng, mu, tau, bp, n):
    out = np.empty(n)
    nbp = bp.shape[0]
    for i in range(n):
        out[i] = dexp_quantile(open_uniform(rng), mu, tau, bp, nbp)
    return out


@njit(cache=True, nogil=True)
def draw_exponential(rng, rate):
    if rate <= 0.0:
        return np.inf
    return -math.log(open_uniform(rng)) / rate


@njit(cache=True, nogil=True)
def draw_exponential_many(rng, rate, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = draw_exponential(rng, rate)
    return out


# ---------------------------------------------------------------------------
# Binary min-heap of absolute firing times, one row per delay compartment.


@njit(cache=True, nogil=True)
def _sift_up(h, i):
    x = h[i]
    while i > 0:
        parent = (i - 1) >> 1
        if h[parent] <= x:
            break
        h[i] = h[parent]
        i = parent
    h[i] = x


@njit(cache=True, nogil=True)
def _sift_down(h, i, size):
    x = h[i]
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and h[child + 1] < h[child]:
            child += 1
        if h[child] >= x:
            break
        h[i] = h[child]
        i = child
    h[i] = x


@njit(cache=True, nogil=True)
def _heap_push(heaps, sizes, d, value):
    if sizes[d] == heaps.shape[1]:
        grown = np.empty((heaps.shape[0], 2 * heaps.shape[1]))
        grown[:, : heaps.shape[1]] = heaps
        heaps = grown
    heaps[d, sizes[d]] = value
    sizes[d] += 1
    _sift_up(heaps[d], sizes[d] - 1)
    return heaps


@njit(cache=True, nogil=True)
def _heap_remove(heaps, sizes, d, i):
    h = heaps[d]
    last = sizes[d] - 1
    sizes[d] = last
    if i == last:
        return
    h[i] = h[last]
    _sift_down(h, i, last)
    _sift_up(h, i)


# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _process_rates(counts, kind, coef, op1, op2, mask, rates):
    for h in range(kind.shape[0]):
        k = kind[h]
        if k == KIND_CONSTANT_INFLUX:
            r = coef[h]
        elif k == KIND_PER_CAPITA:
            r = coef[h] * counts[op1[h]]
        elif k == KIND_MASS_ACTION:
            r = coef[h] * counts[op1[h]] * counts[op2[h]]
        else:
            tot = 0
            for c in range(counts.shape[0]):
                if mask[h, c]:
                    tot += counts[c]
            r = coef[h] * tot
        rates[h] = r


@njit(cache=True, nogil=True)
def _enter(c, t, rng, counts, delay_of, d_mu, d_tau, d_bp, d_nbp, heaps, sizes):
    counts[c] += 1
    d = delay_of[c]
    if d >= 0:
        clock = t + dexp_quantile(open_uniform(rng), d_mu[d], d_tau[d], d_bp[d], d_nbp[d])
        heaps = _heap_push(heaps, sizes, d, clock)
    return heaps


@njit(cache=True, nogil=True)
def _check_state(counts, delay_of, sizes, first_zero, t):
    status = STATUS_OK
    for c in range(counts.shape[0]):
        if counts[c] < 0:
            status = STATUS_NEGATIVE_COUNT
        elif counts[c] == 0 and first_zero[c] == np.inf:
            first_zero[c] = t
        d = delay_of[c]
        if d >= 0 and sizes[d] != counts[c]:
            status = STATUS_CLOCK_MISMATCH
    return status


@njit(cache=True, nogil=True)
def run_path_kernel(
    counts0,
    m_src,
    m_tgt,
    m_kind,
    m_coef,
    m_op1,
    m_op2,
    m_mask,
    delay_of,
    d_tgt,
    d_mu,
    d_tau,
    d_bp,
    d_nbp,
    grid,
    horizon,
    rng,
    record_events,
):
    """One exact sample path.

    Markovian processes are grouped by source compartment (group ``N`` holds
    processes fed from outside the system). Each group carries one absolute
    firing time drawn from its aggregate rate; each delay compartment carries
    a heap with one absolute firing time per resident particle.

    Returns ``(status, t_fail, counts_at_grid, first_zero, ev_t, ev_proc,
    ev_src, ev_tgt, n_events)``.
    """
    n_comp = counts0.shape[0]
    n_proc = m_kind.shape[0]
    n_delay = d_tgt.shape[0]
    n_groups = n_comp + 1
    n_grid = grid.shape[0]

    counts = counts0.copy()
    rec = np.zeros((n_grid, n_comp), dtype=np.int64)
    first_zero = np.full(n_comp, np.inf)

    ev_cap = 1024 if record_events else 1
    ev_t = np.empty(ev_cap)
    ev_proc = np.empty(ev_cap, dtype=np.int64)
    ev_src = np.empty(ev_cap, dtype=np.int64)
    ev_tgt = np.empty(ev_cap, dtype=np.int64)
    n_events = 0

    group_of = np.empty(n_proc, dtype=np.int64)
    for h in range(n_proc):
        group_of[h] = m_src[h] if m_src[h] >= 0 else n_comp

    cap = 16
    for d in range(n_delay):
        for c in range(n_comp):
            if delay_of[c] == d and counts0[c] + 16 > cap:
                cap = counts0[c] + 16
    heaps = np.empty((max(n_delay, 1), cap))
    sizes = np.zeros(max(n_delay, 1), dtype=np.int64)

    t = 0.0
    # Steps 1-3: one delay clock per initial particle.
    for c in range(n_comp):
        d = delay_of[c]
        if d >= 0:
            for _ in range(counts[c]):
                clock = dexp_quantile(open_uniform(rng), d_mu[d], d_tau[d], d_bp[d], d_nbp[d])
                heaps = _heap_push(heaps, sizes, d, clock)

    rates = np.zeros(n_proc)
    group_rate = np.zeros(n_groups)
    new_rate = np.zeros(n_groups)
    group_next = np.full(n_groups, np.inf)
    _process_rates(counts, m_kind, m_coef, m_op1, m_op2, m_mask, rates)
    for h in range(n_proc):
        group_rate[group_of[h]] += rates[h]
    for g in range(n_groups):
        group_next[g] = t + draw_exponential(rng, group_rate[g])

    gi = 0
    status = _check_state(counts, delay_of, sizes, first_zero, t)
    while status == STATUS_OK:
        # Step 4: earliest clock; ties go to the lowest compartment, delay first.
        best_t = np.inf
        best_c = -1
        best_is_delay = False
        for c in range(n_comp):
            d = delay_of[c]
            if d >= 0 and sizes[d] > 0 and heaps[d, 0] < best_t:
                best_t = heaps[d, 0]
                best_c = c
                best_is_delay = True
            if group_next[c] < best_t:
                best_t = group_next[c]
                best_c = c
                best_is_delay = False
        if group_next[n_comp] < best_t:
            best_t = group_next[n_comp]
            best_c = n_comp
            best_is_delay = False

        if best_t > horizon:
            break
        while gi < n_grid and grid[gi] < best_t:
            rec[gi, :] = counts
            gi += 1
        t = best_t

        # Step 5: apply the transition.
        if best_is_delay:
            d = delay_of[best_c]
            _heap_remove(heaps, sizes, d, 0)
            counts[best_c] -= 1
            src = best_c
            tgt = d_tgt[d]
            proc = n_proc + d
            if tgt >= 0:
                heaps = _enter(tgt, t, rng, counts, delay_of, d_mu, d_tau, d_bp, d_nbp, heaps, sizes)
        else:
            g = best_c
            target = open_uniform(rng) * group_rate[g]
            proc = -1
            cum = 0.0
            last_pos = -1
            for h in range(n_proc):
                if group_of[h] != g or rates[h] <= 0.0:
                    continue
                last_pos = h
                cum += rates[h]
                if target <= cum:
                    proc = h
                    break
            if proc < 0:
                proc = last_pos
            src = m_src[proc]
            tgt = m_tgt[proc]
            if src >= 0:
                counts[src] -= 1
                d = delay_of[src]
                if d >= 0 and sizes[d] > 0:
                    # The departing particle is uniformly chosen among residents.
                    k = int(rng.random() * sizes[d])
                    if k >= sizes[d]:
                        k = sizes[d] - 1
                    _heap_remove(heaps, sizes, d, k)
            if tgt >= 0:
                heaps = _enter(tgt, t, rng, counts, delay_of, d_mu, d_tau, d_bp, d_nbp, heaps, sizes)

        if record_events:
            if n_events == ev_t.shape[0]:
                ev_t = np.concatenate((ev_t, np.empty(n_events)))
                ev_proc = np.concatenate((ev_proc, np.empty(n_events, dtype=np.int64)))
                ev_src = np.concatenate((ev_src, np.empty(n_events, dtype=np.int64)))
                ev_tgt = np.concatenate((ev_tgt, np.empty(n_events, dtype=np.int64)))
            ev_t[n_events] = t
            ev_proc[n_events] = proc
            ev_src[n_events] = src if src >= 0 else -1
            ev_tgt[n_events] = tgt
        n_events += 1

        status = _check_state(counts, delay_of, sizes, first_zero, t)
        if status != STATUS_OK:
            break

        # Step 6: redraw holding times of the fired group and of any group
        # whose aggregate rate changed; others keep their residual.
        _process_rates(counts, m_kind, m_coef, m_op1, m_op2, m_mask, rates)
        new_rate[:] = 0.0
        for h in range(n_proc):
            new_rate[group_of[h]] += rates[h]
        for g in range(n_groups):
            fired = (not best_is_delay) and g == best_c
            if fired or new_rate[g] != group_rate[g]:
                group_rate[g] = new_rate[g]
                group_next[g] = t + draw_exponential(rng, new_rate[g])

    while gi < n_grid:
        rec[gi, :] = counts
        gi += 1
    return status, t, rec, first_zero, ev_t, ev_proc, ev_src, ev_tgt, n_events
