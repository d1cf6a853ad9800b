"""Compiled inner loops for the coordinate solvers.

Potentials are passed as a variant code, three scalar parameters (d, lambda1,
lambda2) and, for table potentials, piecewise-polynomial breakpoints and
coefficients (highest degree first). Hot paths evaluate through inner closures
so arrays never cross a call boundary inside a loop; numba otherwise emits
reference-count traffic on every call.

Energy changes of one coordinate are formed as differences that stay accurate
when t is close to t0, which lets the derivative-free search resolve minimizers
well below sqrt(machine epsilon).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

POT_ZERO = 0
POT_DOUBLE_WELL = 1
POT_CHI_POSITIVE = 2
POT_CHI_INTERVAL = 3
POT_TWO_PHASE = 4
POT_TABLE = 5

GOLD = (math.sqrt(5.0) - 1.0) / 2.0

STATUS_OK = 0
STATUS_EDGE = 1
STATUS_NO_ROOT = 2


@njit(cache=True)
def ppoly_interval(x, t):
    lo = 0
    hi = x.shape[0] - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if x[mid] <= t:
            lo = mid
        else:
            hi = mid - 1
    return lo


@njit(cache=True)
def ppoly_eval(x, c, t):
    i = ppoly_interval(x, t)
    dt = t - x[i]
    val = 0.0
    for j in range(c.shape[0]):
        val = val * dt + c[j, i]
    return val


@njit(cache=True)
def ppoly_diff(x, c, t, t0):
    """P(t) - P(t0), factored through (t - t0) when both lie in one piece."""
    i = ppoly_interval(x, t)
    if ppoly_interval(x, t0) != i:
        return ppoly_eval(x, c, t) - ppoly_eval(x, c, t0)
    a = t - x[i]
    b = t0 - x[i]
    # sum_k c_k (a^k - b^k) with a^k - b^k = (a - b) S_k and S_k = a S_(k-1) + b^(k-1)
    deg = c.shape[0] - 1
    s_k = 0.0
    b_pow = 1.0
    acc = 0.0
    for k in range(1, deg + 1):
        s_k = a * s_k + b_pow
        b_pow *= b
        acc += c[deg - k, i] * s_k
    return (t - t0) * acc


@njit(cache=True)
def pot_F(code, d, l1, l2, t):
    """F(t) for the analytic variants; tables are evaluated by the caller."""
    if code == POT_DOUBLE_WELL:
        w = 1.0 - t * t
        if d == 2.0:
            return w * w
        return abs(w) ** d
    if code == POT_CHI_POSITIVE:
        return 1.0 if t > 0.0 else 0.0
    if code == POT_CHI_INTERVAL:
        return 1.0 if -1.0 < t < 1.0 else 0.0
    if code == POT_TWO_PHASE:
        if t < 0.0:
            return l1
        if t > 0.0:
            return l2
    return 0.0


@njit(cache=True)
def pot_dF(code, d, l1, l2, t, t0):
    """F(t) - F(t0) without cancellation for the smooth analytic variants."""
    if code == POT_DOUBLE_WELL:
        w = 1.0 - t * t
        w0 = 1.0 - t0 * t0
        dw = (t0 - t) * (t0 + t)
        if d == 2.0:
            return dw * (w + w0)
        if w0 == 0.0:
            return abs(w) ** d
        if w == 0.0 or (w > 0.0) != (w0 > 0.0):
            return abs(w) ** d - abs(w0) ** d
        return abs(w0) ** d * math.expm1(d * math.log1p(dw / w0))
    return pot_F(code, d, l1, l2, t) - pot_F(code, d, l1, l2, t0)


@njit(cache=True)
def pot_f(code, d, t):
    if code == POT_DOUBLE_WELL:
        w = 1.0 - t * t
        if d == 2.0:
            return -4.0 * t * w
        if w == 0.0:
            return 0.0
        sgn = 1.0 if w > 0.0 else -1.0
        return -2.0 * d * t * abs(w) ** (d - 1.0) * sgn
    return 0.0


@njit(cache=True)
def power_diff(e, e0, p):
    """|e|^p - |e0|^p, accurate when e is close to e0."""
    if e0 == 0.0:
        return abs(e) ** p
    if e == 0.0 or (e > 0.0) != (e0 > 0.0):
        return abs(e) ** p - abs(e0) ** p
    return abs(e0) ** p * math.expm1(p * math.log1p((e - e0) / e0))


@njit(cache=True)
def interaction_diff(a, t, t0, W, v, p):
    acc = 0.0
    for m in range(W.shape[1]):
        w = W[a, m]
        if w != 0.0:
            acc += w * power_diff(t - v[m], t0 - v[m], p)
    return acc / p


@njit(cache=True)
def interaction_grad(a, t, W, v, p):
    acc = 0.0
    for m in range(W.shape[1]):
        w = W[a, m]
        if w != 0.0:
            e = t - v[m]
            if e > 0.0:
                acc += w * e ** (p - 1.0)
            elif e < 0.0:
                acc -= w * (-e) ** (p - 1.0)
    return acc


@njit(cache=True)
def dphi(a, t, t0, quad, A, B, W, v, p, hn, code, d, l1, l2, px, pc):
    """phi_a(t) - phi_a(t0) for the single-coordinate energy restriction."""
    if t == t0:
        return 0.0
    if quad:
        inter = (t - t0) * (0.5 * A[a] * (t + t0) - B[a])
    else:
        inter = interaction_diff(a, t, t0, W, v, p)
    if code == POT_TABLE:
        return inter + hn * ppoly_diff(px, pc, t, t0)
    return inter + hn * pot_dF(code, d, l1, l2, t, t0)


@njit(cache=True)
def residual(a, t, quad, A, B, W, v, p, hn, code, d, px, pc):
    """d phi_a / dt = sum_m W_am g(t - v_m) + h^n f(t)."""
    if quad:
        inter = A[a] * t - B[a]
    else:
        inter = interaction_grad(a, t, W, v, p)
    if code == POT_TABLE:
        return inter + hn * ppoly_eval(px, pc, t)
    return inter + hn * pot_f(code, d, t)


@njit(cache=True)
def residual_scale(a, t, W, v, p, hn, code, d, px, pc):
    acc = 0.0
    for m in range(W.shape[1]):
        w = W[a, m]
        if w != 0.0:
            acc += w * abs(t - v[m]) ** (p - 1.0)
    if code == POT_TABLE:
        return acc + hn * abs(ppoly_eval(px, pc, t))
    return acc + hn * abs(pot_f(code, d, t))


@njit(cache=True)
def coord_min(a, t0, quad, A, B, W, v, p, hn, code, d, l1, l2, px, pc, npts, width, tol):
    """Scan-then-golden search for coordinate a; returns (t, energy change, status)."""
    Aa = A[a]
    Ba = B[a]

    def obj(t):
        if t == t0:
            return 0.0
        if quad:
            inter = (t - t0) * (0.5 * Aa * (t + t0) - Ba)
        else:
            inter = interaction_diff(a, t, t0, W, v, p)
        if code == POT_TABLE:
            return inter + hn * ppoly_diff(px, pc, t, t0)
        return inter + hn * pot_dF(code, d, l1, l2, t, t0)

    centre = t0
    expansions = 0
    best = 0.0
    t_best = t0
    t_lo = t0
    t_hi = t0
    while True:
        best = np.inf
        i = -1
        dist = np.inf
        prev_t = 0.0
        for j in range(npts):
            t = centre + width * (-1.0 + 2.0 * j / (npts - 1))
            f = obj(t)
            # ties go to the point nearest t0
            if f < best or (f == best and abs(t - t0) < dist):
                best = f
                i = j
                dist = abs(t - t0)
                t_best = t
                t_lo = prev_t
            elif j == i + 1:
                t_hi = t
            prev_t = t
        if 0 < i < npts - 1:
            break
        if expansions >= 2:
            return t0, 0.0, STATUS_EDGE
        expansions += 1
        centre = t_best
        width *= 2.0
    lo = t_lo
    hi = t_hi
    c = hi - GOLD * (hi - lo)
    dd = lo + GOLD * (hi - lo)
    fc = obj(c)
    fd = obj(dd)
    for _ in range(200):
        if abs(hi - lo) <= tol * max(1.0, abs(c)):
            break
        if fc <= fd:
            hi = dd
            dd = c
            fd = fc
            c = hi - GOLD * (hi - lo)
            fc = obj(c)
        else:
            lo = c
            c = dd
            fc = fd
            dd = lo + GOLD * (hi - lo)
            fd = obj(dd)
    if fc <= fd:
        tg, fg = c, fc
    else:
        tg, fg = dd, fd
    # candidates: stay, best scan point, golden result; ties go to the one nearest t0
    tb, fb = t0, 0.0
    if best < fb or (best == fb and abs(t_best - t0) < abs(tb - t0)):
        tb, fb = t_best, best
    if fg < fb or (fg == fb and abs(tg - t0) < abs(tb - t0)):
        tb, fb = tg, fg
    if fb < 0.0:
        return tb, fb, STATUS_OK
    return t0, 0.0, STATUS_OK


@njit(cache=True)
def _shift_b(quad, B, Wo, a, delta):
    if quad:
        for b in range(B.shape[0]):
            B[b] += Wo[a, b] * delta


@njit(cache=True)
def sweep_minimize(quad, A, B, W, Wo, v, omega_pos, p, hn, code, d, l1, l2, px, pc, npts, width, tol, relax):
    """One lexicographic coordinate-descent sweep; updates v (and B) in place.

    Returns (max update, summed energy change, status, failing cell).
    """
    max_upd = 0.0
    total = 0.0
    for a in range(omega_pos.shape[0]):
        pos = omega_pos[a]
        t0 = v[pos]
        t1, df, status = coord_min(a, t0, quad, A, B, W, v, p, hn, code, d, l1, l2, px, pc, npts, width, tol)
        if status != STATUS_OK:
            return max_upd, total, status, a
        if relax != 1.0 and t1 != t0:
            tr = t0 + relax * (t1 - t0)
            fr = dphi(a, tr, t0, quad, A, B, W, v, p, hn, code, d, l1, l2, px, pc)
            if fr < 0.0:
                t1 = tr
                df = fr
        if t1 != t0:
            delta = t1 - t0
            v[pos] = t1
            total += df
            _shift_b(quad, B, Wo, a, delta)
            if abs(delta) > max_upd:
                max_upd = abs(delta)
    return max_upd, total, STATUS_OK, -1


@njit(cache=True)
def bisect_root(a, t0, quad, A, B, W, v, p, hn, code, d, px, pc, npts, width, tol):
    """Root of the increasing residual map; returns (root, non-monotone flag, status)."""
    Aa = A[a]
    Ba = B[a]

    def res(t):
        if quad:
            inter = Aa * t - Ba
        else:
            inter = interaction_grad(a, t, W, v, p)
        if code == POT_TABLE:
            return inter + hn * ppoly_eval(px, pc, t)
        return inter + hn * pot_f(code, d, t)

    lo = t0 - width
    hi = t0 + width
    rlo = res(lo)
    rhi = res(hi)
    found = False
    for _ in range(80):
        if rlo <= 0.0 <= rhi:
            found = True
            break
        span = hi - lo
        if rlo > 0.0:
            hi = lo
            rhi = rlo
            lo = lo - 2.0 * span
            rlo = res(lo)
        else:
            lo = hi
            rlo = rhi
            hi = hi + 2.0 * span
            rhi = res(hi)
    if not found:
        return t0, False, STATUS_NO_ROOT
    nonmono = False
    prev = rlo
    for j in range(1, npts):
        r = res(lo + (hi - lo) * j / (npts - 1))
        if r < prev:
            nonmono = True
        prev = r
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
        if res(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), nonmono, STATUS_OK


@njit(cache=True)
def sweep_equation(quad, A, B, W, Wo, v, omega_pos, p, hn, code, d, px, pc, npts, width, tol, step):
    """One nonlinear Gauss-Seidel sweep; ``step`` scales each move toward the cell root."""
    max_upd = 0.0
    nonmono_any = False
    for a in range(omega_pos.shape[0]):
        pos = omega_pos[a]
        t0 = v[pos]
        root, nonmono, status = bisect_root(a, t0, quad, A, B, W, v, p, hn, code, d, px, pc, npts, width, tol)
        if status != STATUS_OK:
            return max_upd, nonmono_any, status, a
        if nonmono:
            nonmono_any = True
        t1 = t0 + step * (root - t0)
        if t1 != t0:
            delta = t1 - t0
            v[pos] = t1
            _shift_b(quad, B, Wo, a, delta)
            if abs(delta) > max_upd:
                max_upd = abs(delta)
    return max_upd, nonmono_any, STATUS_OK, -1


@njit(cache=True)
def max_relative_residual(quad, A, B, W, v, omega_pos, p, hn, code, d, px, pc):
    worst = 0.0
    for a in range(omega_pos.shape[0]):
        t = v[omega_pos[a]]
        r = abs(residual(a, t, quad, A, B, W, v, p, hn, code, d, px, pc))
        sc = residual_scale(a, t, W, v, p, hn, code, d, px, pc)
        if sc > 0.0:
            q = r / sc
        elif r > 0.0:
            q = np.inf
        else:
            q = 0.0
        if q > worst:
            worst = q
    return worst


@njit(cache=True)
def interaction_energy(W, factor, v, omega_pos, p):
    """(1/2p) sum_a sum_m W_am factor_m |v_a - v_m|^p with row partial sums added in order."""
    n = omega_pos.shape[0]
    rows = np.empty(n)
    for a in range(n):
        va = v[omega_pos[a]]
        acc = 0.0
        for m in range(W.shape[1]):
            w = W[a, m]
            if w != 0.0:
                e = abs(va - v[m])
                acc += w * factor[m] * (e * e if p == 2.0 else e**p)
        rows[a] = acc
    return np.sum(rows) / (2.0 * p)


@njit(cache=True)
def potential_sum(v, omega_pos, code, d, l1, l2, px, pc):
    acc = 0.0
    for a in range(omega_pos.shape[0]):
        t = v[omega_pos[a]]
        if code == POT_TABLE:
            acc += ppoly_eval(px, pc, t)
        else:
            acc += pot_F(code, d, l1, l2, t)
    return acc
