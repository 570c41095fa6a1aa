# Compiled primitives shared by the reference step functions and the batch engine.
#
# Every random choice is driven by uniforms supplied by the caller, so the
# single-step Python API and the vectorized chain runner execute the exact same
# arithmetic and stay bit-identical for a given draw sequence.
#
# Draw order per kernel step: (u_breed_choice, u_breed_value, u_select, u_accept).
# Draw order per forward-urn draw: (u_breed_choice, u_breed_value).
#
# Populations are rows of 2-D arrays addressed by a row index; the hot loop
# creates no array views and allocates nothing.

import math

import numpy as np
from numba import njit

# phi encodings
PHI_TABLE = 0
PHI_POWER = 1
PHI_TABULATED = 2

# breeding encodings
BREED_URN = 0
BREED_MIXTURE = 1

# kernel encodings
TOURNAMENT = 0
INVERSE = 1

# status codes
IMPOSSIBLE = -2


@njit(cache=True)
def phi_eval(kind, params, xs, ys, x):
    if kind == PHI_TABLE:
        return ys[int(x)]
    if kind == PHI_POWER:
        return abs(x - params[0]) ** params[1]
    return np.interp(x, xs, ys)


@njit(cache=True)
def weight_eval(kind, params, xs, ys, scale, x):
    return math.exp(-phi_eval(kind, params, xs, ys, x) * scale)


@njit(cache=True)
def inverse_cdf(cdf, total, u):
    """Smallest ``k`` with ``u * total < cdf[k]`` (last index on round-off)."""
    t = u * total
    last = cdf.size - 1
    for k in range(last):
        if t < cdf[k]:
            return k
    return last


@njit(cache=True)
def urn_draw(pops, r, size, mass, base_cdf, u0, u1):
    """Polya-urn predictive given ``pops[r, :size]``; empty ``base_cdf`` means Uniform[0,1]."""
    if size == 0 or u0 * (mass + size) < mass:
        if base_cdf.size == 0:
            return u1
        return float(inverse_cdf(base_cdf, 1.0, u1))
    j = int(u1 * size)
    if j >= size:
        j = size - 1
    return pops[r, j]


@njit(cache=True)
def mixture_predictive_into(counts, r, log_w, log_q, lp, pred):
    """Posterior predictive of a finite mixture into ``pred``; returns its total.

    A zero total means every component has zero likelihood.
    """
    n_comp, K = log_q.shape
    top = -np.inf
    for i in range(n_comp):
        s = log_w[i]
        for k in range(K):
            c = counts[r, k]
            if c > 0:
                s += c * log_q[i, k]
        lp[i] = s
        if s > top:
            top = s
    for k in range(K):
        pred[k] = 0.0
    if top == -np.inf:
        return 0.0
    total = 0.0
    for i in range(n_comp):
        lp[i] = math.exp(lp[i] - top)
        total += lp[i]
    for i in range(n_comp):
        wi = lp[i] / total
        if wi > 0.0:
            for k in range(K):
                pred[k] += wi * math.exp(log_q[i, k])
    mass = 0.0
    for k in range(K):
        mass += pred[k]
        pred[k] = mass
    return mass


@njit(cache=True)
def mixture_predictive(counts, log_w, log_q):
    """Predictive pmf for a single count vector (all zeros when impossible)."""
    c2 = counts.reshape(1, -1)
    lp = np.empty(log_q.shape[0])
    cum = np.empty(log_q.shape[1])
    mixture_predictive_into(c2, 0, log_w, log_q, lp, cum)
    out = np.empty_like(cum)
    prev = 0.0
    for k in range(cum.size):
        out[k] = cum[k] - prev
        prev = cum[k]
    return out


@njit(cache=True)
def breed(pops, counts, r, size, breed_kind, mass, base_cdf, log_w, log_q, lp, cum, u0, u1):
    """Newcomer given the first ``size`` members of row ``r``; ``-1.0`` if impossible."""
    if breed_kind == BREED_URN:
        return urn_draw(pops, r, size, mass, base_cdf, u0, u1)
    total = mixture_predictive_into(counts, r, log_w, log_q, lp, cum)
    if total == 0.0:
        return -1.0
    return float(inverse_cdf(cum, total, u0))


@njit(cache=True)
def init_block(pops, wts, counts, breed_kind, mass, base_cdf, log_w, log_q,
               phi_kind, phi_params, phi_xs, phi_ys, scale, u):
    """Fill every row by running the breeding law forward from the empty population.

    ``u`` has shape ``(R, n, 2)``.  Returns False if some draw was impossible.
    """
    lp = np.empty(log_q.shape[0])
    cum = np.empty(log_q.shape[1])
    for r in range(pops.shape[0]):
        for j in range(pops.shape[1]):
            x = breed(pops, counts, r, j, breed_kind, mass, base_cdf, log_w, log_q, lp, cum,
                      u[r, j, 0], u[r, j, 1])
            if x < 0.0:
                return False
            pops[r, j] = x
            if counts.shape[1] > 0:
                counts[r, int(x)] += 1
            wts[r, j] = weight_eval(phi_kind, phi_params, phi_xs, phi_ys, scale, x)
    return True


@njit(cache=True)
def run_block(pops, wts, counts, kernel, breed_kind, mass, base_cdf, log_w, log_q,
              phi_kind, phi_params, phi_xs, phi_ys, scale, u):
    """Advance every row by ``u.shape[0]`` kernel steps; ``u`` has shape ``(T, R, 4)``.

    The body is written out flat (no helper calls) because per-step calls
    carrying many array arguments dominate the runtime.  The arithmetic mirrors
    ``breed`` exactly.  Rows are independent, so loop order does not affect
    results.  Returns the first ``(t, r)`` that hit an impossible population
    as ``t * R + r``, or -1.
    """
    n_comp, K = log_q.shape
    lp = np.empty(n_comp)
    cum = np.empty(K)
    n = pops.shape[1]
    T, R = u.shape[0], u.shape[1]
    n_base = base_cdf.size
    track = counts.shape[1] > 0
    for t in range(T):
        for r in range(R):
            u0 = u[t, r, 0]
            u1 = u[t, r, 1]
            u2 = u[t, r, 2]
            u3 = u[t, r, 3]
            # breed the newcomer
            if breed_kind == BREED_URN:
                if u0 * (mass + n) < mass:
                    if n_base == 0:
                        x_new = u1
                    else:
                        k = 0
                        while k < n_base - 1 and not (u1 < base_cdf[k]):
                            k += 1
                        x_new = float(k)
                else:
                    j = int(u1 * n)
                    if j >= n:
                        j = n - 1
                    x_new = pops[r, j]
            else:
                top = -np.inf
                for i in range(n_comp):
                    s = log_w[i]
                    for k in range(K):
                        c = counts[r, k]
                        if c > 0:
                            s += c * log_q[i, k]
                    lp[i] = s
                    if s > top:
                        top = s
                if top == -np.inf:
                    return t * R + r
                for k in range(K):
                    cum[k] = 0.0
                tot = 0.0
                for i in range(n_comp):
                    lp[i] = math.exp(lp[i] - top)
                    tot += lp[i]
                for i in range(n_comp):
                    wi = lp[i] / tot
                    if wi > 0.0:
                        for k in range(K):
                            cum[k] += wi * math.exp(log_q[i, k])
                acc = 0.0
                for k in range(K):
                    acc += cum[k]
                    cum[k] = acc
                target = u0 * acc
                k = 0
                while k < K - 1 and not (target < cum[k]):
                    k += 1
                x_new = float(k)
            # fitness of the newcomer
            if phi_kind == PHI_TABLE:
                ph = phi_ys[int(x_new)]
            elif phi_kind == PHI_POWER:
                ph = abs(x_new - phi_params[0]) ** phi_params[1]
            else:
                ph = np.interp(x_new, phi_xs, phi_ys)
            w_new = math.exp(-ph * scale)
            # selection
            if kernel == TOURNAMENT:
                i = int(u2 * n)
                if i >= n:
                    i = n - 1
                if u3 * (w_new + wts[r, i]) >= w_new:
                    continue
            else:
                total = 1.0 / w_new
                for j in range(n):
                    total += 1.0 / wts[r, j]
                target = u2 * total
                acc = 0.0
                i = n
                for j in range(n):
                    acc += 1.0 / wts[r, j]
                    if target < acc:
                        i = j
                        break
                if i == n:
                    continue
            if track:
                counts[r, int(pops[r, i])] -= 1
                counts[r, int(x_new)] += 1
            pops[r, i] = x_new
            wts[r, i] = w_new
    return -1
