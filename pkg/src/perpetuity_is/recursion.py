"""Perpetuities and iterated random Lipschitz maps coupled to a bounding walk.

Three variants are supported:

* ``PerpetuityM1``: Z' = A Z + 1.
* ``PerpetuityM2``: Z' = A Z + B with independent positive A, B.
* ``GoldieRecursion``: Z' = sqrt(A Z^2 + C), a Lipschitz map bounded above by
  sqrt(A) z + sqrt(C).

Z^(n) always denotes the backward iterate Psi_1 o ... o Psi_n (0), which is
nondecreasing in n along a path.  The bounding walk has increments
max(log+ Bbar - gamma2, log Abound) + gamma1 (log A + gamma1 for M1), and
Z^(n) <= e^gamma2 / (1 - e^-gamma1) * exp(max_{k<=n} S_k) holds pathwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .iskernel import ISKernel, MaxStepsExceeded
from .tailmodels import (MaxOfIndependent, PointMass, TailModel, UserTailModel)

Z99 = stats.norm.ppf(0.99)


class ModelValidationError(ValueError):
    pass


class ConditionalRedrawError(RuntimeError):
    pass


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _truncated_draw(model: TailModel, upper: float, u: float) -> float:
    """Draw from ``model`` conditioned on Y <= upper by inversion."""
    f = model.cdf(upper)
    if f <= 0:
        raise ConditionalRedrawError("truncation set has zero probability")
    return min(model.quantile(u * f), upper)


def _point_at(model: TailModel, g: float, tol: float) -> Optional[bool]:
    """None for continuous laws, otherwise whether the atom sits at g."""
    if isinstance(model, PointMass):
        return abs(model.at - g) <= tol
    return None


# ---------------------------------------------------------------------------
# accumulators for Z^(n)


class AffineAccumulator:
    """log Z^(n) for Z' = A Z + B, pushed one (log A, log B) pair at a time."""

    def __init__(self):
        self.logz = -math.inf
        self.logprod = 0.0

    def push(self, draw):
        la, lb = draw
        self.logz = _logaddexp(self.logz, lb + self.logprod)
        self.logprod += la

    def copy(self):
        out = AffineAccumulator()
        out.logz, out.logprod = self.logz, self.logprod
        return out


class CompositionAccumulator:
    """log of Psi_1 o ... o Psi_n (0) for a general monotone map, recomputed on push."""

    def __init__(self, log_map):
        self.log_map = log_map
        self.draws = []
        self.logz = -math.inf
        self.logprod = 0.0

    def push(self, draw):
        self.draws.append(draw)
        lz = -math.inf
        for d in reversed(self.draws):
            lz = self.log_map(d, lz)
        self.logz = lz

    def copy(self):
        out = CompositionAccumulator(self.log_map)
        out.draws = list(self.draws)
        out.logz = self.logz
        return out


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class PerpetuityM1:
    """Z' = A Z + 1 with log A drawn from ``log_a``."""

    log_a: TailModel
    variant: str = field(default="M1", init=False)

    def draw(self, rng):
        return (float(self.log_a.sample(rng)), 0.0)

    def draws(self, rng, n):
        la = np.asarray(self.log_a.sample(rng, n), dtype=float)
        return np.column_stack([la, np.zeros(n)])

    def bound_parts(self, draw):
        """(log of the Lipschitz bound, log+ of the additive bound)."""
        return draw[0], 0.0

    def raw_increment(self, draw, gamma2):
        return draw[0]

    def raw_increment_many(self, draws, gamma2):
        return draws[:, 0]

    def increment_law(self, gamma2) -> TailModel:
        return self.log_a

    def redraw(self, g, gamma2, rng):
        return (g, 0.0)

    def accumulator(self):
        return AffineAccumulator()

    def drift_samples(self, rng, n):
        return self.draws(rng, n)[:, 0]


@dataclass(frozen=True)
class _IndependentMax:
    """Shared logic for bounding increments max(max(Yb, 0) - gamma2, Ya)."""

    def _ya_yb(self):
        raise NotImplementedError

    def _to_draw(self, ya, yb):
        raise NotImplementedError

    def _from_draw(self, draw):
        raise NotImplementedError

    def raw_increment(self, draw, gamma2):
        ya, yb = self._from_draw(draw)
        return max(max(yb, 0.0) - gamma2, ya)

    def raw_increment_many(self, draws, gamma2):
        ya, yb = self._from_draw(draws.T)
        return np.maximum(np.maximum(yb, 0.0) - gamma2, ya)

    def bound_parts(self, draw):
        ya, yb = self._from_draw(draw)
        return ya, max(yb, 0.0)

    def increment_law(self, gamma2) -> TailModel:
        a, b = self._ya_yb()
        try:
            return MaxOfIndependent(a, b, gamma2, 0.0)
        except TypeError:
            lo = max(a.lower(), -gamma2)

            def tail_fn(t):
                if t < -gamma2:
                    return 1.0
                return 1.0 - a.cdf(t) * b.cdf(t + gamma2)
            return UserTailModel(tail_fn, lower_bound=lo)

    def redraw(self, g, gamma2, rng):
        """Draw the model randomness given max(max(Yb,0) - gamma2, Ya) = g."""
        a, b = self._ya_yb()
        tol = 1e-9 * max(1.0, abs(g))
        u1, u2 = rng.random(), 1.0 - rng.random()
        if g <= -gamma2 + tol:
            # discrete component: Yb <= 0 and Ya <= -gamma2
            yb = _truncated_draw(b, 0.0, u1 if u1 > 0 else 0.5)
            ya = _truncated_draw(a, -gamma2, u2)
            return self._to_draw(ya, yb)
        pa = _point_at(a, g, tol)
        pb = _point_at(b, g + gamma2, tol)
        if pa or pb:
            wa = float(bool(pa)) * b.cdf(g + gamma2)
            wb = float(bool(pb)) * a.cdf(g)
        else:
            wa = (0.0 if pa is False else a.density(g)) * b.cdf(g + gamma2)
            wb = (0.0 if pb is False else b.density(g + gamma2)) * a.cdf(g)
        if not (wa + wb > 0):
            raise ConditionalRedrawError(f"increment value {g} has zero density")
        if u1 * (wa + wb) < wa:
            return self._to_draw(g, _truncated_draw(b, g + gamma2, u2))
        return self._to_draw(_truncated_draw(a, g, u2), g + gamma2)


@dataclass(frozen=True)
class PerpetuityM2(_IndependentMax):
    """Z' = A Z + B with independent log A ~ ``log_a`` and log B ~ ``log_b``."""

    log_a: TailModel
    log_b: TailModel
    variant: str = field(default="M2", init=False)

    def _ya_yb(self):
        return self.log_a, self.log_b

    def _to_draw(self, ya, yb):
        return (ya, yb)

    def _from_draw(self, draw):
        return draw[0], draw[1]

    def draw(self, rng):
        return (float(self.log_a.sample(rng)), float(self.log_b.sample(rng)))

    def draws(self, rng, n):
        return np.column_stack([self.log_a.sample(rng, n), self.log_b.sample(rng, n)])

    def accumulator(self):
        return AffineAccumulator()

    def drift_samples(self, rng, n):
        return self.draws(rng, n)[:, 0]


@dataclass(frozen=True)
class GoldieRecursion(_IndependentMax):
    """Z' = sqrt(A Z^2 + C) with independent log A, log C.

    Bounding pair: Lip = sqrt(A) and Psi(z) <= sqrt(A) z+ + sqrt(C), so the
    dominating additive term is max(sqrt(C), 1).
    """

    log_a: TailModel
    log_c: TailModel
    variant: str = field(default="M3", init=False)

    def _ya_yb(self):
        return self.log_a.scaled(0.5), self.log_c.scaled(0.5)

    def _to_draw(self, ya, yb):
        return (2.0 * ya, 2.0 * yb)

    def _from_draw(self, draw):
        return 0.5 * draw[0], 0.5 * draw[1]

    def draw(self, rng):
        return (float(self.log_a.sample(rng)), float(self.log_c.sample(rng)))

    def draws(self, rng, n):
        return np.column_stack([self.log_a.sample(rng, n), self.log_c.sample(rng, n)])

    @staticmethod
    def log_map(draw, logz):
        la, lc = draw
        return 0.5 * _logaddexp(la + 2.0 * logz, lc)

    def apply(self, draw, z):
        return math.sqrt(math.exp(draw[0]) * z * z + math.exp(draw[1]))

    def upper_bound(self, draw, z):
        return math.exp(0.5 * draw[0]) * max(z, 0.0) + math.exp(0.5 * draw[1])

    def accumulator(self):
        return CompositionAccumulator(self.log_map)

    def drift_samples(self, rng, n):
        return 0.5 * self.draws(rng, n)[:, 0]


def check_sandwich(model: GoldieRecursion, zs, rng, n: int = 10_000) -> bool:
    """Psi(z) <= Lip z+ + Bbar on a grid of z and n sampled maps."""
    d = model.draws(rng, n)
    for z in zs:
        lhs = np.sqrt(np.exp(d[:, 0]) * z * z + np.exp(d[:, 1]))
        rhs = np.exp(0.5 * d[:, 0]) * max(z, 0.0) + np.exp(0.5 * d[:, 1])
        if np.any(lhs > rhs * (1 + 1e-12)):
            return False
    return True


# ---------------------------------------------------------------------------
# coupling parameters


def validate_drift(model, mc_budget: int = 10**6, seed: int = 0) -> float:
    """MC test that E log(Lipschitz bound) < 0 at the 99% one-sided level."""
    rng = np.random.default_rng(seed)
    x = model.drift_samples(rng, mc_budget)
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    if not (m + Z99 * se < 0):
        raise ModelValidationError(f"log multiplier mean {m:.4g} not significantly negative")
    return m


def find_gamma2(model, margin: float = 0.05, mc_budget: int = 10**6, seed: int = 0) -> float:
    """Smallest gamma2 (doubling then bisection) with E[raw increment] < -margin at 99%.

    For M1 the bounding walk uses log A directly, so gamma2 = 0 once the
    drift condition holds.
    """
    if not margin > 0:
        raise ValueError("margin must be strictly positive")
    rng = np.random.default_rng(seed)
    if model.variant == "M1":
        x = model.draws(rng, mc_budget)[:, 0]
        m = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(len(x)))
        if m + Z99 * se < -margin:
            return 0.0
        raise ModelValidationError(f"E log A estimate {m:.4g} not below -{margin}")
    d = model.draws(rng, mc_budget)
    ya, lbb = model._from_draw(d.T)
    lbb = np.maximum(lbb, 0.0)
    n = len(ya)

    def passes(g2):
        x = np.maximum(lbb - g2, ya)
        m = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return m + Z99 * se < -margin, m

    ok, est = passes(0.0)
    if ok:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        ok, est = passes(hi)
        if ok:
            break
        lo, hi = hi, 2 * hi
    else:
        raise ModelValidationError(
            f"no gamma2 found after 60 doublings (last estimate {est:.4g})")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-9 * max(1.0, hi):
            break
        if passes(mid)[0]:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class CouplingParams:
    gamma1: float
    gamma2: float
    increment: TailModel  # law of S_1(gamma), raw increment + gamma1

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ValueError("gamma1 must be positive")
        if self.gamma2 < 0:
            raise ValueError("gamma2 must be nonnegative")

    @property
    def mu(self) -> float:
        return -self.increment.mean

    def crossing_level(self, logx: float) -> float:
        return crossing_level(self, logx)

    def envelope_log_const(self) -> float:
        return self.gamma2 - math.log(-math.expm1(-self.gamma1))


def crossing_level(params: CouplingParams, logx: float) -> float:
    """s(x) = log x - gamma2 + log(1 - e^-gamma1)."""
    if not math.isfinite(logx):
        raise ValueError("log x must be finite")
    return logx - params.gamma2 + math.log(-math.expm1(-params.gamma1))


def make_coupling(model, gamma1: Optional[float] = None, gamma2=None,
                  margin: float = 0.05, mc_budget: int = 10**6,
                  seed: int = 0) -> CouplingParams:
    """Choose gamma2 (``None`` or ``"auto"`` searches) and gamma1 (default: half the drift)."""
    if gamma2 is None or gamma2 == "auto":
        gamma2 = find_gamma2(model, margin, mc_budget, seed)
    gamma2 = float(gamma2)
    raw = model.increment_law(gamma2)
    drift = raw.mean
    if not drift < 0:
        raise ModelValidationError(f"bounding increment mean {drift:.4g} is not negative")
    if gamma1 is None:
        gamma1 = -drift / 2
    if not (0 < gamma1 < -drift):
        raise ValueError(f"gamma1 must lie in (0, {-drift:.6g})")
    return CouplingParams(float(gamma1), gamma2, raw.shifted(gamma1))


# ---------------------------------------------------------------------------
# coupled evolution


@dataclass
class PathState:
    n: int = 0
    walk: float = 0.0
    logz: float = -math.inf
    loglr: float = 0.0
    phase: str = "pre-crossing"
    walk_max: float = 0.0
    acc: object = field(default=None, repr=False)

    @property
    def logprod(self) -> float:
        return getattr(self.acc, "logprod", math.nan)

    def envelope_ok(self, params: CouplingParams) -> bool:
        """Z^(n) <= e^gamma2 (1 - e^-gamma1)^-1 exp(max_{k<=n} S_k)."""
        bound = params.envelope_log_const() + self.walk_max
        return self.logz <= bound + 1e-12 * max(1.0, abs(bound))


def initial_state(model) -> PathState:
    return PathState(acc=model.accumulator())


def _advance(state: PathState, params: CouplingParams, model, draw, g, loglr_inc=0.0):
    state.acc.push(draw)
    state.logz = state.acc.logz
    state.walk += g + params.gamma1
    state.walk_max = max(state.walk_max, state.walk)
    state.loglr += loglr_inc
    state.n += 1
    return state


def coupled_step_original(model, params: CouplingParams, state: PathState, rng) -> PathState:
    """One step under the original law; mutates and returns ``state``."""
    draw = model.draw(rng)
    g = model.raw_increment(draw, params.gamma2)
    return _advance(state, params, model, draw, g)


def coupled_step_tilted(model, params: CouplingParams, kernel: ISKernel,
                        state: PathState, rng) -> PathState:
    """One kernel step of the walk, then redraw the model randomness given the increment."""
    if state.phase != "pre-crossing":
        raise ValueError("tilted steps are only taken before the crossing")
    xi, lw, lv = kernel.step(state.walk, rng)
    g = xi - params.gamma1
    draw = model.redraw(g, params.gamma2, rng)
    _advance(state, params, model, draw, g, lw - lv)
    if state.walk > kernel.level:
        state.phase = "post-crossing"
    return state


def run_to_tau(model, params: CouplingParams, kernel: ISKernel, rng,
               max_steps: int = 10**8, audit: bool = False):
    """Tilted steps until the walk exceeds the level; returns (state, tau)."""
    state = initial_state(model)
    while state.walk <= kernel.level:
        if state.n >= max_steps:
            raise MaxStepsExceeded(f"no crossing within {max_steps} steps")
        coupled_step_tilted(model, params, kernel, state, rng)
        if audit and not state.envelope_ok(params):
            raise AssertionError(f"envelope violated at step {state.n}")
    state.phase = "post-crossing"
    return state, state.n


def backward_sum_samples(model, n: int, reps: int, rng) -> np.ndarray:
    """Z^(n) directly as sum_{k<n} B_{k+1} exp(S_k) (affine models)."""
    out = np.empty(reps)
    for r in range(reps):
        d = model.draws(rng, n)
        s = np.concatenate([[0.0], np.cumsum(d[:-1, 0])])
        out[r] = np.sum(np.exp(d[:, 1] + s))
    return out


def forward_chain_samples(model, n: int, reps: int, rng) -> np.ndarray:
    """Z_n of the forward chain Z' = Psi(Z) from Z_0 = 0."""
    out = np.empty(reps)
    for r in range(reps):
        d = model.draws(rng, n)
        z = 0.0
        for la, lb in d:
            if model.variant == "M3":
                z = model.apply((la, lb), z)
            else:
                z = math.exp(la) * z + math.exp(lb)
        out[r] = z
    return out


def model_from_spec(spec: dict):
    """Build a model from ``{"variant": "M1", "log_a": {...}, ...}``."""
    from .tailmodels import from_spec
    variant = str(spec.get("variant", "M1")).upper()
    if variant == "M1":
        return PerpetuityM1(from_spec(spec.get("log_a", {})))
    if variant == "M2":
        return PerpetuityM2(from_spec(spec["log_a"]), from_spec(spec["log_b"]))
    if variant == "M3":
        return GoldieRecursion(from_spec(spec["log_a"]), from_spec(spec["log_c"]))
    raise ValueError(f"unknown model variant {variant!r}")


def with_gamma(params: CouplingParams, **kw) -> CouplingParams:
    return replace(params, **kw)


@dataclass
class AuditResult:
    paths: int
    envelope_violations: int
    order_violations: int

    @property
    def passed(self) -> bool:
        return self.envelope_violations == 0 and self.order_violations == 0


def audit_coupling(model, params: CouplingParams, kernel: ISKernel, logx: float,
                   paths: int, rng_for, measure: str = "tilted",
                   horizon: int = 2000, post_steps: int = 64) -> AuditResult:
    """Check the envelope at every step and that the walk crosses no later than Z passes x.

    ``rng_for(i)`` supplies the generator of path i.  Under ``"original"`` paths
    run ``horizon`` steps of the untilted law; under ``"tilted"`` they run to
    the crossing and then ``post_steps`` untilted steps.
    """
    if measure not in ("original", "tilted"):
        raise ValueError("measure must be 'original' or 'tilted'")
    env_bad = 0
    order_bad = 0
    level = kernel.level
    for i in range(paths):
        rng = rng_for(i)
        state = initial_state(model)
        tau = None
        t_hit = None
        env_ok = True
        steps = horizon if measure == "original" else None
        while True:
            if measure == "tilted" and tau is None:
                if state.n >= horizon * 1000:
                    raise MaxStepsExceeded("audit path did not cross")
                coupled_step_tilted(model, params, kernel, state, rng)
            else:
                coupled_step_original(model, params, state, rng)
            env_ok &= state.envelope_ok(params)
            if tau is None and state.walk > level:
                tau = state.n
                if measure == "tilted":
                    steps = state.n + post_steps
            if t_hit is None and state.logz > logx:
                t_hit = state.n
            if steps is not None and state.n >= steps:
                break
        env_bad += not env_ok
        if t_hit is not None and (tau is None or tau > t_hit):
            order_bad += 1
    return AuditResult(paths, env_bad, order_bad)
