"""Compiled numerical core: tail families, adaptive quadrature, kernel steps.

Every distribution handled here is described by an integer family id and a
fixed-length float64 parameter vector, so the hot loops stay in nopython mode.

Families (``p`` layout):

* ``F_WEIBULL``  ``[k, b, m]``: tail ``exp(-b (t+m)^k)`` for ``t > -m``; ``1/k`` integer.
* ``F_PARETO``   ``[beta, sigma, m]``: tail ``(1 + (t+m)/sigma)^-beta`` for ``t > -m``.
* ``F_POINT``    ``[a]``: unit mass at ``a``.
* ``F_MAX``      ``[fidA, a0, a1, a2, fidB, b0, b1, b2, g2, g1]``: law of
  ``max(YA, max(YB, 0) - g2) + g1`` with independent basic ``YA``, ``YB``.
"""

import math

import numpy as np
from numba import njit

F_WEIBULL = 0
F_PARETO = 1
F_POINT = 2
F_MAX = 3
NPAR = 10

_EPS = 2.220446049250313e-16
_TINY = 1e-300

# 15-point Kronrod rule and its embedded 7-point Gauss rule (QUADPACK qk15).
_XGK = (
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
)
_WGK = (
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
)
_WG = (
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
)


# ---------------------------------------------------------------------------
# adaptive Gauss-Kronrod


def make_quadrature(f):
    """Compile panel, adaptive and half-line integrators for integrand ``f(args, x)``."""

    @njit(cache=True)
    def gk15(args, a, b):
        """One 15-point Kronrod panel: (integral, error estimate)."""
        c = 0.5 * (a + b)
        h = 0.5 * (b - a)
        fc = f(args, c)
        resk = fc * _WGK[7]
        resg = fc * _WG[3]
        fv1 = np.empty(7)
        fv2 = np.empty(7)
        for j in range(7):
            x = h * _XGK[j]
            f1 = f(args, c - x)
            f2 = f(args, c + x)
            fv1[j] = f1
            fv2[j] = f2
            resk += _WGK[j] * (f1 + f2)
            if j % 2 == 1:
                resg += _WG[j // 2] * (f1 + f2)
        half = 0.5 * resk
        resasc = _WGK[7] * abs(fc - half)
        resabs = _WGK[7] * abs(fc)
        for j in range(7):
            resasc += _WGK[j] * (abs(fv1[j] - half) + abs(fv2[j] - half))
            resabs += _WGK[j] * (abs(fv1[j]) + abs(fv2[j]))
        ah = abs(h)
        resasc *= ah
        resabs *= ah
        err = abs((resk - resg) * h)
        if resasc != 0.0 and err != 0.0:
            err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
        if resabs > _TINY / (50.0 * _EPS):
            err = max(50.0 * _EPS * resabs, err)
        return resk * h, err


    @njit(cache=True)
    def adapt(args, breaks, rel, absol, maxpan):
        """Globally adaptive bisection on the panels given by ``breaks``.

        Returns (total, error, ok, left, right, value, npanels) with panels sorted
        by left endpoint.
        """
        nb = breaks.shape[0] - 1
        cap = max(maxpan, nb)
        left = np.empty(cap)
        right = np.empty(cap)
        val = np.empty(cap)
        err = np.empty(cap)
        n = 0
        for i in range(nb):
            if breaks[i + 1] > breaks[i]:
                left[n] = breaks[i]
                right[n] = breaks[i + 1]
                val[n], err[n] = gk15(args, breaks[i], breaks[i + 1])
                n += 1
        ok = True
        while True:
            tot = 0.0
            etot = 0.0
            kmax = 0
            for i in range(n):
                tot += val[i]
                etot += err[i]
                if err[i] > err[kmax]:
                    kmax = i
            if n == 0 or etot <= max(absol, rel * abs(tot)):
                break
            if n >= cap:
                ok = False
                break
            a = left[kmax]
            b = right[kmax]
            m = 0.5 * (a + b)
            if m <= a or m >= b:
                ok = False
                break
            v1, e1 = gk15(args, a, m)
            v2, e2 = gk15(args, m, b)
            right[kmax] = m
            val[kmax] = v1
            err[kmax] = e1
            left[n] = m
            right[n] = b
            val[n] = v2
            err[n] = e2
            n += 1
        order = np.argsort(left[:n])
        return (tot, etot, ok, left[:n][order], right[:n][order],
                val[:n][order], n)


    @njit(cache=True)
    def integrate_to_inf(args, a, brk, rel):
        """Integral of ``f`` over [a, inf) on doubling panels; ``brk`` is an optional
        interior breakpoint (ignored unless it lies above ``a``)."""
        total = 0.0
        start = a
        if brk > a:
            bb = np.array([a, brk])
            v, e, ok, _, _, _, _ = adapt(args, bb, rel, 0.0, 200)
            total += v
            start = brk
        width = 1.0
        small = 0
        for _ in range(1100):
            bb = np.array([start, start + width])
            v, e, ok, _, _, _, _ = adapt(args, bb, rel, 0.0, 200)
            total += v
            start += width
            width *= 2.0
            if v <= 1e-17 * total or (total == 0.0 and f(args, start) == 0.0):
                small += 1
                if small >= 2:
                    break
            else:
                small = 0
            if start > 1e300:
                break
        return total


    @njit(cache=True)
    def gk15_value(args, a, b):
        v, e = gk15(args, a, b)
        return v

    return gk15, gk15_value, adapt, integrate_to_inf


# ---------------------------------------------------------------------------
# basic families


@njit(cache=True)
def _upow(u, k):
    if k == 0.5:
        return math.sqrt(u)
    return u ** k


@njit(cache=True)
def _weibull_n(k):
    return int(round(1.0 / k))


@njit(cache=True)
def b_tail(fid, p, t):
    if fid == F_WEIBULL:
        u = t + p[2]
        if u <= 0.0:
            return 1.0
        return math.exp(-p[1] * _upow(u, p[0]))
    if fid == F_PARETO:
        u = t + p[2]
        if u <= 0.0:
            return 1.0
        return math.exp(-p[0] * math.log1p(u / p[1]))
    return 1.0 if t < p[0] else 0.0


@njit(cache=True)
def b_logtail(fid, p, t):
    if fid == F_WEIBULL:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        return -p[1] * _upow(u, p[0])
    if fid == F_PARETO:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        return -p[0] * math.log1p(u / p[1])
    return 0.0 if t < p[0] else -math.inf


@njit(cache=True)
def b_cdf(fid, p, t):
    if fid == F_WEIBULL:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        return -math.expm1(-p[1] * _upow(u, p[0]))
    if fid == F_PARETO:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        return -math.expm1(-p[0] * math.log1p(u / p[1]))
    return 0.0 if t < p[0] else 1.0


@njit(cache=True)
def b_density(fid, p, t):
    if fid == F_WEIBULL:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        k, b = p[0], p[1]
        return b * k * u ** (k - 1.0) * math.exp(-b * u ** k)
    if fid == F_PARETO:
        u = t + p[2]
        if u <= 0.0:
            return 0.0
        return p[0] / p[1] * math.exp(-(p[0] + 1.0) * math.log1p(u / p[1]))
    return 0.0


@njit(cache=True)
def b_lo(fid, p):
    if fid == F_POINT:
        return p[0]
    return -p[2]


@njit(cache=True)
def b_itail(fid, p, t):
    """Integrated tail of a basic family, in closed form."""
    if fid == F_WEIBULL:
        k, b, m = p[0], p[1], p[2]
        n = _weibull_n(k)
        fact = 1.0
        for j in range(2, n + 1):
            fact *= j
        scale = fact / b ** n
        u = t + m
        if u <= 0.0:
            return -u + scale
        z = b * _upow(u, k)
        term = 1.0
        acc = 1.0
        for j in range(1, n):
            term *= z / j
            acc += term
        return scale * math.exp(-z) * acc
    if fid == F_PARETO:
        beta, sig, m = p[0], p[1], p[2]
        scale = sig / (beta - 1.0)
        u = t + m
        if u <= 0.0:
            return -u + scale
        return scale * math.exp((1.0 - beta) * math.log1p(u / sig))
    return max(p[0] - t, 0.0)


@njit(cache=True)
def b_tailq(fid, p, q):
    """Smallest t with tail(t) <= q."""
    if q <= 0.0:
        return math.inf
    if fid == F_POINT:
        return p[0]
    if q >= 1.0:
        return -p[2]
    if fid == F_WEIBULL:
        y = -math.log(q) / p[1]
        if p[0] == 0.5:
            return y * y - p[2]
        return y ** (1.0 / p[0]) - p[2]
    return p[1] * math.expm1(-math.log(q) / p[0]) - p[2]


# ---------------------------------------------------------------------------
# dispatch including the max-of-independent composite


@njit(cache=True)
def tail(fid, p, t):
    if fid == F_MAX:
        s = t - p[9]
        ta = b_tail(int(p[0]), p[1:4], s)
        if s < -p[8]:
            tu = 1.0
        else:
            tu = b_tail(int(p[4]), p[5:8], s + p[8])
        return ta + tu - ta * tu
    return b_tail(fid, p, t)


@njit(cache=True)
def logtail(fid, p, t):
    if fid == F_MAX:
        s = t - p[9]
        la = b_logtail(int(p[0]), p[1:4], s)
        if s < -p[8]:
            return 0.0
        lu = b_logtail(int(p[4]), p[5:8], s + p[8])
        if la == -math.inf and lu == -math.inf:
            return -math.inf
        hi = max(la, lu)
        lo_ = min(la, lu)
        # log(ta + tu - ta tu) = hi + log(1 + e^(lo-hi) - e^lo)
        return hi + math.log1p(math.exp(lo_ - hi) - math.exp(lo_))
    return b_logtail(fid, p, t)


@njit(cache=True)
def cdf(fid, p, t):
    if fid == F_MAX:
        s = t - p[9]
        if s < -p[8]:
            return 0.0
        return b_cdf(int(p[0]), p[1:4], s) * b_cdf(int(p[4]), p[5:8], s + p[8])
    return b_cdf(fid, p, t)


@njit(cache=True)
def lo(fid, p):
    if fid == F_MAX:
        return max(b_lo(int(p[0]), p[1:4]), -p[8]) + p[9]
    return b_lo(fid, p)


@njit(cache=True)
def tailq(fid, p, q):
    if fid != F_MAX:
        return b_tailq(fid, p, q)
    if q <= 0.0:
        return math.inf
    a = lo(fid, p)
    if tail(fid, p, a) <= q:
        return a
    step = 1.0
    b = a + step
    n = 0
    while tail(fid, p, b) > q:
        a = b
        step *= 2.0
        b = a + step
        n += 1
        if n > 200:
            return math.nan
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if tail(fid, p, mid) <= q:
            b = mid
        else:
            a = mid
        if b - a <= 1e-14 * max(1.0, abs(b)):
            break
    return b


@njit(cache=True)
def _cross_integrand(p, r):
    ta = b_tail(int(p[0]), p[1:4], r)
    if r < -p[8]:
        return ta
    return ta * b_tail(int(p[4]), p[5:8], r + p[8])


@njit(cache=True)
def _integrand(mode, args, r):
    if mode == 0:
        return _w_integrand(args, r)
    return _cross_integrand(args, r)


_cross_gk15, _cross_gk15v, _cross_adapt, _cross_inf = make_quadrature(_cross_integrand)


@njit(cache=True)
def itail(fid, p, t):
    if fid != F_MAX:
        return b_itail(fid, p, t)
    s = t - p[9]
    pa = p[1:4]
    pb = p[5:8]
    g2 = p[8]
    ia = b_itail(int(p[0]), pa, s)
    iu = max(-g2 - s, 0.0) + b_itail(int(p[4]), pb, max(s + g2, 0.0))
    cross = _cross_inf(p, s, -g2, 1e-12)
    return ia + iu - cross


@njit(cache=True)
def mean(fid, p):
    a = lo(fid, p)
    return a + itail(fid, p, a)


# ---------------------------------------------------------------------------
# ladder variable and the importance-sampling kernel


@njit(cache=True)
def ladder_tail(fid, p, mu, t0, t):
    if t < 0.0 or t < t0:
        return 1.0
    return min(1.0, itail(fid, p, t) / mu)


@njit(cache=True)
def ladder_sample(fid, p, mu, t0, atom0, u):
    """Generalized inverse of the ladder tail at ``u`` in (0, 1]."""
    if u >= 1.0 - atom0:
        return t0
    target = u * mu
    a = t0
    b = max(t0, 0.0) + 1.0
    n = 0
    while itail(fid, p, b) > target:
        a = b
        b = a + 2.0 * (b - t0 + 1.0)
        n += 1
        if n > 200:
            return math.nan
    # bisection then secant polish on log I
    for _ in range(80):
        mid = 0.5 * (a + b)
        if itail(fid, p, mid) > target:
            a = mid
        else:
            b = mid
        if b - a <= 1e-9 * max(1.0, b):
            break
    lt = math.log(target)
    fa = math.log(itail(fid, p, a)) - lt
    fb = math.log(itail(fid, p, b)) - lt
    for _ in range(20):
        if fa == fb:
            break
        x = b - fb * (b - a) / (fb - fa)
        if not (x >= min(a, b) - 1.0 and x <= max(a, b) + 1.0):
            break
        fx = math.log(itail(fid, p, x)) - lt
        a, fa = b, fb
        b, fb = x, fx
        if abs(b - a) <= 1e-12 * max(1.0, abs(b)):
            break
    return b


@njit(cache=True)
def _w_integrand(args, r):
    fid = int(args[0])
    p = args[1:1 + NPAR]
    mu = args[1 + NPAR]
    t0 = args[2 + NPAR]
    c = args[3 + NPAR]
    e = math.exp(-r)
    u = tailq(fid, p, e)
    return ladder_tail(fid, p, mu, t0, c - u) * e


_w_gk15, _w_gk15v, _w_adapt, _w_inf = make_quadrature(_w_integrand)


@njit(cache=True)
def _pack(fid, p, mu, t0, c):
    args = np.zeros(4 + NPAR)
    args[0] = fid
    args[1:1 + p.shape[0]] = p
    args[1 + NPAR] = mu
    args[2 + NPAR] = t0
    args[3 + NPAR] = c
    return args


@njit(cache=True)
def w_split(fid, p, mu, t0, c, rel):
    """P(X + W > c) split as (tail_X(c), body) with the body integral computed
    in the log-tail variable r = -log tail_X(u), u <= c.

    Returns (tx, body, err, ok, args, left, right, value, npanels).
    """
    args = _pack(fid, p, mu, t0, c)
    big_r = -logtail(fid, p, c)
    tx = math.exp(-big_r)
    empty = np.zeros(0)
    if big_r <= 0.0:
        return 1.0, 0.0, 0.0, True, args, empty, empty, empty, 0
    if big_r > 745.0:
        # the whole integrand lies below the double range
        return 0.0, 0.0, 0.0, True, args, empty, empty, empty, 0
    pts = np.empty(4)
    pts[0] = 0.0
    n = 1
    lo_x = lo(fid, p)
    ra = -logtail(fid, p, lo_x)
    if ra > 0.0:
        if ra < big_r:
            pts[n] = ra
            n += 1
    if t0 > 0.0 and c - t0 > lo_x:
        rk = -logtail(fid, p, c - t0)
        if pts[n - 1] < rk < big_r:
            pts[n] = rk
            n += 1
    pts[n] = big_r
    n += 1
    body, err, ok, left, right, val, npan = _w_adapt(
        args, pts[:n], rel, 0.0, 400)
    return tx, body, err, ok, args, left, right, val, npan


@njit(cache=True)
def w_value(fid, p, mu, t0, c, rel):
    tx, body, err, ok, args, left, right, val, npan = w_split(fid, p, mu, t0, c, rel)
    return tx + body


@njit(cache=True)
def _invert_panel(args, a, b, target, vpan):
    x = a + (b - a) * min(max(target / vpan, 0.0), 1.0)
    xl = a
    xh = b
    for _ in range(100):
        fx = _w_gk15v(args, a, x) - target
        if abs(fx) <= 1e-14 * vpan:
            return x
        if fx > 0.0:
            xh = x
        else:
            xl = x
        d = _w_integrand(args, x)
        xn = x - fx / d if d > 0.0 else 0.5 * (xl + xh)
        if not (xn > xl and xn < xh):
            xn = 0.5 * (xl + xh)
        if abs(xn - x) <= 1e-12 * max(1.0, abs(x)) or xh - xl <= 1e-12 * max(1.0, abs(x)):
            return xn
        x = xn
    return x


@njit(cache=True)
def kernel_step(fid, p, mu, t0, c, u1, u2, rel):
    """One transition of the tilted walk at distance ``c`` (already shifted by
    the kernel's offset): draw the increment conditioned on increment + W > c.

    ``u1`` selects the mixture component, ``u2`` in (0, 1] drives the inversion.
    Returns (xi, log w, log v, status) with status 0 on success.
    """
    tx, body, err, ok, args, left, right, val, npan = w_split(fid, p, mu, t0, c, rel)
    status = 0 if ok else 1
    w = tx + body
    if not (w > 0.0):
        return math.nan, -math.inf, -math.inf, 4
    if tx >= 1.0:
        xi = tailq(fid, p, u2)
        return xi, 0.0, math.log(ladder_tail(fid, p, mu, t0, c - xi)), status
    if u1 * w < tx or npan == 0:
        xi = tailq(fid, p, u2 * tx)
    else:
        target = u2 * body
        acc = 0.0
        j = npan - 1
        for i in range(npan):
            if acc + val[i] >= target:
                j = i
                break
            acc += val[i]
        r = _invert_panel(args, left[j], right[j], target - acc, val[j])
        xi = tailq(fid, p, math.exp(-r))
        if xi > c:
            xi = c
    lv = ladder_tail(fid, p, mu, t0, c - xi)
    if not (lv > 0.0):
        status = 2
        return xi, math.log(w), -math.inf, status
    return xi, math.log(w), math.log(lv), status


@njit(cache=True)
def logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(nogil=True, cache=True)
def walk_to_cross(fid, p, mu, t0, level, astar, rng, max_steps, rel):
    """Run the tilted walk from 0 until it first exceeds ``level``.

    Returns (tau, walk, loglr, increments, status).
    """
    buf = np.empty(64)
    walk = 0.0
    loglr = 0.0
    n = 0
    status = 0
    while walk <= level:
        if n >= max_steps:
            status = 3
            break
        c = level - walk - astar
        u1 = rng.random()
        u2 = 1.0 - rng.random()
        xi, lw, lv, st = kernel_step(fid, p, mu, t0, c, u1, u2, rel)
        if st != 0:
            status = st
        if n >= buf.shape[0]:
            nbuf = np.empty(2 * buf.shape[0])
            nbuf[:n] = buf[:n]
            buf = nbuf
        buf[n] = xi
        loglr += lw - lv
        walk += xi
        n += 1
    return n, walk, loglr, buf[:n].copy(), status


@njit(nogil=True, cache=True)
def perpetuity_replication(fid, p, mu, t0, level, astar, gamma1, logx,
                           cap, rng, max_steps, rel):
    """Unit-reward perpetuity (B = 1): tilted walk to the crossing, then
    original-measure steps until Z exceeds x or ``cap`` post-crossing steps.

    Z^(n) = sum_{k<n} exp(S_k) with S the log-product of the multipliers.
    Returns (tau, loglr, hit, logz_tau, logprod_tau, walk_tau, status) where
    ``hit`` is the smallest k <= cap with Z^(tau+k) > x (0 if Z^(tau) > x
    already, -1 if none).  Deciding Z^(tau+k) > x uses k - 1 fresh draws.
    """
    walk = 0.0
    loglr = 0.0
    logprod = 0.0
    logz = -math.inf
    n = 0
    status = 0
    while walk <= level:
        if n >= max_steps:
            return n, loglr, -1, logz, logprod, walk, 3
        c = level - walk - astar
        u1 = rng.random()
        u2 = 1.0 - rng.random()
        xi, lw, lv, st = kernel_step(fid, p, mu, t0, c, u1, u2, rel)
        if st != 0:
            status = st
        loglr += lw - lv
        logz = logaddexp(logz, logprod)
        logprod += xi - gamma1
        walk += xi
        n += 1
    tau = n
    logz_tau = logz
    logprod_tau = logprod
    if logz > logx:
        return tau, loglr, 0, logz_tau, logprod_tau, walk, status
    hit = -1
    for k in range(1, cap + 1):
        if tau + k > max_steps:
            status = 3
            break
        logz = logaddexp(logz, logprod)
        if logz > logx:
            hit = k
            break
        u = 1.0 - rng.random()
        logprod += tailq(fid, p, u) - gamma1
    return tau, loglr, hit, logz_tau, logprod_tau, walk, status


@njit(nogil=True, cache=True)
def perpetuity_cmc(fid, p, gamma1, logx, horizon, nrep, rng):
    """Crude Monte Carlo count of paths with Z^(horizon) > x (B = 1)."""
    hits = 0
    for _ in range(nrep):
        logprod = 0.0
        logz = -math.inf
        for k in range(horizon):
            # below e^-40 relative the sum is unchanged in double precision
            if not (logz > 0.1 and logprod < logz - 40.0):
                logz = logaddexp(logz, logprod)
            if logz > logx:
                hits += 1
                break
            u = 1.0 - rng.random()
            logprod += tailq(fid, p, u) - gamma1
    return hits


@njit(nogil=True, cache=True)
def walk_cmc(fid, p, level, horizon, nrep, rng):
    """Crude Monte Carlo count of walks exceeding ``level`` within ``horizon``."""
    hits = 0
    for _ in range(nrep):
        walk = 0.0
        for k in range(horizon):
            walk += tailq(fid, p, 1.0 - rng.random())
            if walk > level:
                hits += 1
                break
    return hits


# ---------------------------------------------------------------------------
# vectorized helpers for the Python layer


@njit(cache=True)
def vec_tail(fid, p, t):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = tail(fid, p, t[i])
    return out


@njit(cache=True)
def vec_cdf(fid, p, t):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = cdf(fid, p, t[i])
    return out


@njit(cache=True)
def vec_tailq(fid, p, q):
    out = np.empty(q.shape[0])
    for i in range(q.shape[0]):
        out[i] = tailq(fid, p, q[i])
    return out


@njit(cache=True)
def vec_itail(fid, p, t):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = itail(fid, p, t[i])
    return out


@njit(cache=True)
def vec_ladder_tail(fid, p, mu, t0, t):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = ladder_tail(fid, p, mu, t0, t[i])
    return out


@njit(cache=True)
def vec_ladder_sample(fid, p, mu, t0, atom0, u):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        out[i] = ladder_sample(fid, p, mu, t0, atom0, u[i])
    return out


@njit(cache=True)
def vec_w(fid, p, mu, t0, c, rel):
    out = np.empty(c.shape[0])
    for i in range(c.shape[0]):
        out[i] = w_value(fid, p, mu, t0, c[i], rel)
    return out
