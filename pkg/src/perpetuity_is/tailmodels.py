"""Heavy-tailed increment laws, their integrated tails and the ladder variable W."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special

from . import _numerics as nx


class DivergentIntegralError(ValueError):
    """The positive part of the law has infinite mean."""


class BracketError(RuntimeError):
    """A monotone root search could not bracket its target."""


_BRACKET_EXPANSIONS = 200


def _bisect_secant(fun, target, lo, hi, decreasing=True, xtol=1e-12):
    """Solve fun(t) = target for monotone ``fun`` on an already bracketing [lo, hi]."""
    sign = 1.0 if decreasing else -1.0

    def g(t):
        return sign * (fun(t) - target)

    # g > 0 left of the root, g <= 0 right of it
    return optimize.brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


class TailModel:
    """Law of a real random variable with a heavy right tail.

    Subclasses implement ``tail``; everything else has generic fallbacks based
    on scipy quadrature and bracketing root finds.  Compiled families also
    carry ``fid`` and ``pvec`` so the kernel can run in nopython code.
    """

    fid: Optional[int] = None

    @property
    def compiled(self) -> bool:
        return self.fid is not None

    @property
    def pvec(self) -> np.ndarray:
        raise NotImplementedError

    # -- core interface -------------------------------------------------
    def tail(self, t: float) -> float:
        raise NotImplementedError

    def cdf(self, t: float) -> float:
        return 1.0 - self.tail(t)

    def density(self, t: float) -> float:
        h = 1e-6 * max(1.0, abs(t))
        return (self.tail(t - h) - self.tail(t + h)) / (2 * h)

    def lower(self) -> float:
        """Left end of the support (may be -inf)."""
        return -math.inf

    def tail_quantile(self, q: float) -> float:
        """Smallest t with tail(t) <= q."""
        if q <= 0.0:
            return math.inf
        lo_t = self.lower()
        if math.isfinite(lo_t) and self.tail(lo_t) <= q:
            return lo_t
        a = lo_t if math.isfinite(lo_t) else -1.0
        step = 1.0
        if not math.isfinite(lo_t):
            n = 0
            while self.tail(a) <= q:
                a -= step
                step *= 2
                n += 1
                if n > _BRACKET_EXPANSIONS:
                    raise BracketError("cannot bracket tail quantile from below")
            step = 1.0
        b = a + step
        n = 0
        while self.tail(b) > q:
            a = b
            step *= 2
            b = a + step
            n += 1
            if n > _BRACKET_EXPANSIONS:
                raise BracketError("cannot bracket tail quantile from above")
        for _ in range(200):
            m = 0.5 * (a + b)
            if m <= a or m >= b or b - a <= 1e-13 * max(1.0, abs(b)):
                break
            if self.tail(m) <= q:
                b = m
            else:
                a = m
        return b

    def quantile(self, p: float) -> float:
        """Generalized inverse of the CDF: smallest t with cdf(t) >= p."""
        return self.tail_quantile(1.0 - p)

    def integrated_tail(self, t: float) -> float:
        """The integral of tail(s) over s in [t, inf)."""
        lo_t = self.lower()
        extra = 0.0
        if math.isfinite(lo_t) and t < lo_t:
            extra = lo_t - t
            t = lo_t
        val, err = integrate.quad(self.tail, t, math.inf, epsabs=0.0,
                                  epsrel=1e-11, limit=400)
        if not math.isfinite(val):
            raise DivergentIntegralError("integrated tail diverges")
        return extra + val

    @property
    def mean(self) -> float:
        lo_t = self.lower()
        if not math.isfinite(lo_t):
            neg, _ = integrate.quad(lambda s: 1.0 - self.tail(s), -math.inf, 0.0)
            return self.integrated_tail(0.0) - neg
        return lo_t + self.integrated_tail(lo_t)

    def sample(self, rng: np.random.Generator, size=None):
        u = 1.0 - rng.random(size)
        if size is None:
            return self.tail_quantile(float(u))
        return np.array([self.tail_quantile(x) for x in np.ravel(u)]).reshape(np.shape(u))

    def shifted(self, delta: float) -> "TailModel":
        """Law of Y + delta."""
        return Shifted(self, delta)

    # -- vectorized helpers ---------------------------------------------
    def tail_array(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.compiled:
            return nx.vec_tail(self.fid, self.pvec, t.ravel()).reshape(t.shape)
        return np.vectorize(self.tail, otypes=[float])(t)

    def cdf_array(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.compiled:
            return nx.vec_cdf(self.fid, self.pvec, t.ravel()).reshape(t.shape)
        return np.vectorize(self.cdf, otypes=[float])(t)

    def tail_quantile_array(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.compiled:
            return nx.vec_tailq(self.fid, self.pvec, q.ravel()).reshape(q.shape)
        return np.vectorize(self.tail_quantile, otypes=[float])(q)


class _Compiled(TailModel):
    """Families evaluated by the compiled core."""

    _p: tuple = ()

    @property
    def pvec(self) -> np.ndarray:
        out = np.zeros(nx.NPAR)
        out[:len(self._p)] = self._p
        return out

    def tail(self, t):
        return nx.tail(self.fid, self.pvec, float(t))

    def cdf(self, t):
        return nx.cdf(self.fid, self.pvec, float(t))

    def tail_quantile(self, q):
        return nx.tailq(self.fid, self.pvec, float(q))

    def lower(self):
        return nx.lo(self.fid, self.pvec)

    def integrated_tail(self, t):
        return nx.itail(self.fid, self.pvec, float(t))

    @property
    def mean(self):
        return nx.mean(self.fid, self.pvec)

    def sample(self, rng, size=None):
        u = 1.0 - rng.random(size)
        if size is None:
            return self.tail_quantile(u)
        return self.tail_quantile_array(u)


@dataclass(frozen=True, eq=True)
class ShiftedWeibull(_Compiled):
    """tail(t) = exp(-scale * (t + shift)**shape) for t > -shift.

    Defaults give log A = W - 3/2 with P(W > t) = exp(-2 sqrt(t)), so E log A = -1.
    """

    shape: float = 0.5
    scale: float = 2.0
    shift: float = 1.5
    fid: int = field(default=nx.F_WEIBULL, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.shape < 1.0):
            raise ValueError("Weibull shape must lie in (0, 1) for a heavy tail")
        if self.scale <= 0:
            raise ValueError("Weibull scale must be positive")
        n = 1.0 / self.shape
        if abs(n - round(n)) > 1e-12:
            # closed-form integrated tail needs 1/shape integer; use the generic path
            object.__setattr__(self, "fid", None)

    @property
    def _p(self):
        return (self.shape, self.scale, self.shift)

    def tail(self, t):
        if self.fid is not None:
            return super().tail(t)
        u = t + self.shift
        return 1.0 if u <= 0 else math.exp(-self.scale * u ** self.shape)

    def cdf(self, t):
        return 1.0 - self.tail(t) if self.fid is None else super().cdf(t)

    def tail_quantile(self, q):
        if self.fid is not None:
            return super().tail_quantile(q)
        if q <= 0:
            return math.inf
        if q >= 1:
            return -self.shift
        return (-math.log(q) / self.scale) ** (1.0 / self.shape) - self.shift

    def lower(self):
        return -self.shift

    def density(self, t):
        return nx.b_density(nx.F_WEIBULL, self.pvec, float(t))

    def integrated_tail(self, t):
        if self.fid is not None:
            return super().integrated_tail(t)
        u = t + self.shift
        k, b = self.shape, self.scale
        scale = special.gamma(1 / k) / (k * b ** (1 / k))
        if u <= 0:
            return -u + scale
        return scale * special.gammaincc(1 / k, b * u ** k)

    @property
    def mean(self):
        return self.lower() + self.integrated_tail(self.lower())

    def shifted(self, delta):
        return ShiftedWeibull(self.shape, self.scale, self.shift - delta)

    def scaled(self, factor: float) -> "ShiftedWeibull":
        """Law of factor * Y for factor > 0."""
        return ShiftedWeibull(self.shape, self.scale * factor ** (-self.shape),
                              self.shift * factor)


@dataclass(frozen=True, eq=True)
class ShiftedPareto(_Compiled):
    """Lomax tail (1 + (t + shift)/scale)**(-beta) for t > -shift.

    Regularly varying with index ``beta``; in the limit-law diagnostics
    ``beta = alpha + 1``.
    """

    beta: float = 2.5
    scale: float = 1.0
    shift: float = 1.0
    fid: int = field(default=nx.F_PARETO, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.beta <= 1.0:
            raise DivergentIntegralError("Pareto index must exceed 1 for a finite mean")
        if self.scale <= 0:
            raise ValueError("Pareto scale must be positive")

    @property
    def _p(self):
        return (self.beta, self.scale, self.shift)

    @property
    def alpha(self) -> float:
        return self.beta - 1.0

    def density(self, t):
        return nx.b_density(nx.F_PARETO, self.pvec, float(t))

    def shifted(self, delta):
        return ShiftedPareto(self.beta, self.scale, self.shift - delta)

    def scaled(self, factor: float) -> "ShiftedPareto":
        return ShiftedPareto(self.beta, self.scale * factor, self.shift * factor)


@dataclass(frozen=True, eq=True)
class PointMass(_Compiled):
    """Degenerate law at ``at``."""

    at: float = 0.0
    fid: int = field(default=nx.F_POINT, init=False, repr=False, compare=False)

    @property
    def _p(self):
        return (self.at,)

    def density(self, t):
        return 0.0

    def shifted(self, delta):
        return PointMass(self.at + delta)

    def scaled(self, factor: float) -> "PointMass":
        return PointMass(self.at * factor)


@dataclass(frozen=True, eq=True)
class MaxOfIndependent(_Compiled):
    """Law of max(Y_a, max(Y_b, 0) - gamma2) + gamma1 for independent Y_a, Y_b.

    This is the bounding-walk increment of the perpetuity couplings, with
    Y_a = log A and Y_b = log of the dominating additive term.
    """

    ya: TailModel
    yb: TailModel
    gamma2: float = 0.0
    gamma1: float = 0.0
    fid: int = field(default=nx.F_MAX, init=False, repr=False, compare=False)

    def __post_init__(self):
        for y in (self.ya, self.yb):
            if not (y.compiled and y.fid != nx.F_MAX):
                raise TypeError("components must be Weibull, Pareto or point laws")

    @property
    def _p(self):
        return (self.ya.fid, *self.ya.pvec[:3], self.yb.fid, *self.yb.pvec[:3],
                self.gamma2, self.gamma1)

    def u_cdf(self, g: float) -> float:
        """CDF of U = max(Y_b, 0) - gamma2."""
        if g < -self.gamma2:
            return 0.0
        return self.yb.cdf(g + self.gamma2)

    def shifted(self, delta):
        return MaxOfIndependent(self.ya, self.yb, self.gamma2, self.gamma1 + delta)


@dataclass(frozen=True)
class Shifted(TailModel):
    """Law of base + delta for an arbitrary base law."""

    base: TailModel
    delta: float

    def tail(self, t):
        return self.base.tail(t - self.delta)

    def cdf(self, t):
        return self.base.cdf(t - self.delta)

    def density(self, t):
        return self.base.density(t - self.delta)

    def lower(self):
        return self.base.lower() + self.delta

    def tail_quantile(self, q):
        return self.base.tail_quantile(q) + self.delta

    def integrated_tail(self, t):
        return self.base.integrated_tail(t - self.delta)

    @property
    def mean(self):
        return self.base.mean + self.delta


@dataclass(frozen=True)
class UserTailModel(TailModel):
    """User hook: any law given by its tail function.

    ``tail_fn`` must be nonincreasing and right-continuous.  Optional
    ``tail_quantile_fn``, ``integrated_tail_fn`` and ``density_fn`` replace the
    numerical fallbacks.  ``lower_bound`` is the left end of the support.
    """

    tail_fn: Callable[[float], float]
    lower_bound: float = -math.inf
    tail_quantile_fn: Optional[Callable[[float], float]] = None
    integrated_tail_fn: Optional[Callable[[float], float]] = None
    density_fn: Optional[Callable[[float], float]] = None

    def tail(self, t):
        if t < self.lower_bound:
            return 1.0
        return float(self.tail_fn(t))

    def lower(self):
        return self.lower_bound

    def tail_quantile(self, q):
        if self.tail_quantile_fn is not None:
            return float(self.tail_quantile_fn(q))
        return super().tail_quantile(q)

    def integrated_tail(self, t):
        if self.integrated_tail_fn is not None:
            return float(self.integrated_tail_fn(t))
        return super().integrated_tail(t)

    def density(self, t):
        if self.density_fn is not None:
            return float(self.density_fn(t))
        return super().density(t)


def integrated_tail(model: TailModel, t: float) -> float:
    return model.integrated_tail(t)


@dataclass(frozen=True)
class LadderVariable:
    """W >= 0 with P(W > t) = min(1, I(t)/mu), I the integrated increment tail.

    ``source`` must have negative mean; ``mu`` is its absolute value.
    """

    source: TailModel
    mu: float = field(init=False)
    atom0: float = field(init=False)
    t0: float = field(init=False)

    def __post_init__(self):
        m = self.source.mean
        if not (m < 0):
            raise ValueError(f"increment mean must be negative, got {m}")
        mu = -m
        i0 = self.source.integrated_tail(0.0)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "atom0", max(0.0, 1.0 - i0 / mu))
        if i0 <= mu:
            t0 = 0.0
        else:
            # I(t) = mu somewhere above 0; tail_W is 1 up to there
            hi = 1.0
            n = 0
            while self.source.integrated_tail(hi) > mu:
                hi *= 2
                n += 1
                if n > _BRACKET_EXPANSIONS:
                    raise BracketError("cannot locate the ladder plateau")
            t0 = _bisect_secant(self.source.integrated_tail, mu, 0.0, hi)
        object.__setattr__(self, "t0", t0)

    def tail(self, t: float) -> float:
        if self.source.compiled:
            return nx.ladder_tail(self.source.fid, self.source.pvec, self.mu, self.t0, float(t))
        if t < 0.0 or t < self.t0:
            return 1.0
        return min(1.0, self.source.integrated_tail(t) / self.mu)

    def tail_array(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.source.compiled:
            return nx.vec_ladder_tail(self.source.fid, self.source.pvec, self.mu,
                                      self.t0, t.ravel()).reshape(t.shape)
        return np.vectorize(self.tail, otypes=[float])(t)

    def sample(self, u: float) -> float:
        """Generalized inverse of the tail at u in (0, 1)."""
        if not (0.0 < u <= 1.0):
            raise ValueError("u must lie in (0, 1]")
        if u >= 1.0 - self.atom0:
            return self.t0
        if self.source.compiled:
            x = nx.ladder_sample(self.source.fid, self.source.pvec, self.mu, self.t0,
                                 self.atom0, float(u))
            if math.isnan(x):
                raise BracketError("ladder inversion failed to bracket")
            return x
        target = u * self.mu
        lo_t = self.t0
        hi = max(lo_t, 0.0) + 1.0
        n = 0
        while self.source.integrated_tail(hi) > target:
            lo_t, hi = hi, 2 * hi + 1.0
            n += 1
            if n > _BRACKET_EXPANSIONS:
                raise BracketError("ladder inversion failed to bracket")
        return _bisect_secant(self.source.integrated_tail, target, lo_t, hi)

    def sample_array(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.source.compiled:
            return nx.vec_ladder_sample(self.source.fid, self.source.pvec, self.mu,
                                        self.t0, self.atom0, u.ravel()).reshape(u.shape)
        return np.vectorize(self.sample, otypes=[float])(u)


def ladder_tail(w: LadderVariable, t: float) -> float:
    return w.tail(t)


def sample_ladder(w: LadderVariable, u: float) -> float:
    return w.sample(u)


def from_spec(spec: dict) -> TailModel:
    """Build a model from a config mapping such as
    ``{"family": "weibull", "shape": 0.5, "scale": 2, "shift": 1.5}``."""
    spec = dict(spec)
    fam = str(spec.pop("family", "weibull")).lower()
    if fam in ("weibull", "shifted-weibull"):
        return ShiftedWeibull(**{k: float(v) for k, v in spec.items()})
    if fam in ("pareto", "lomax", "regularly-varying"):
        return ShiftedPareto(**{k: float(v) for k, v in spec.items()})
    if fam in ("point", "degenerate"):
        return PointMass(float(spec["at"]))
    raise ValueError(f"unknown distribution family {fam!r}")
