"""State-dependent importance sampling for a negative-drift heavy-tailed walk.

Under the kernel, a walk at ``y`` below the level ``s`` moves by an increment
drawn from its law conditioned on ``increment + W > s - y - astar`` where W is
the ladder variable of the increment law.  The likelihood ratio of one step
from y to z is w(y + astar) / v(z + astar).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from . import _numerics as nx
from .tailmodels import LadderVariable, TailModel


class QuadratureError(RuntimeError):
    """Adaptive quadrature missed its tolerance."""

    def __init__(self, msg, achieved):
        super().__init__(f"{msg} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class MaxStepsExceeded(RuntimeError):
    pass


STATUS_OK = 0
STATUS_QUAD = 1
STATUS_ZERO_V = 2
STATUS_MAXSTEPS = 3
STATUS_UNDERFLOW = 4


@dataclass
class WalkResult:
    tau: int
    walk: float
    loglr: float
    increments: np.ndarray
    status: int = STATUS_OK


@dataclass
class AstarReport:
    passed: bool
    worst_margin: float
    worst_point: float
    underflow: bool
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray
    ratio: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y", "v", "w", "ratio"])
            for row in zip(self.y, self.v, self.w, self.ratio):
                wr.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class ISKernel:
    increment: TailModel
    level: float
    astar: float = -10.0
    delta: float = 0.5
    rel_tol: float = 1e-10
    ladder: LadderVariable = field(init=False, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.level):
            raise ValueError("crossing level must be finite")
        if self.astar > 0:
            raise ValueError("astar must be nonpositive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        object.__setattr__(self, "ladder", LadderVariable(self.increment))

    @property
    def mu(self) -> float:
        return self.ladder.mu

    @property
    def compiled(self) -> bool:
        return self.increment.compiled

    # -- v and w --------------------------------------------------------
    def v(self, z: float) -> float:
        """P(W > s - z)."""
        _check_finite(z)
        return self.ladder.tail(self.level - z)

    def w(self, y: float) -> float:
        """P(increment + W > s - y)."""
        _check_finite(y)
        return self.w_at_distance(self.level - y)

    def w_at_distance(self, c: float) -> float:
        return sum(self.w_parts(c)[:2])

    def w_parts(self, c: float):
        """(tail of the increment at c, remaining body, error estimate)."""
        if self.compiled:
            inc = self.increment
            tx, body, err, ok, *_ = nx.w_split(inc.fid, inc.pvec, self.mu, self.ladder.t0,
                                               float(c), self.rel_tol)
            if not ok:
                raise QuadratureError("w quadrature did not converge", err)
            return tx, body, err
        return _w_parts_python(self, c)

    # -- kernel transition ----------------------------------------------
    def distance(self, y: float) -> float:
        """Conditioning threshold c = (s - y) - astar."""
        return (self.level - y) - self.astar

    def step(self, y: float, rng: np.random.Generator):
        """One kernel transition from y: (increment, log w(y+a*), log v(z+a*))."""
        _check_finite(y)
        c = self.distance(y)
        u1 = rng.random()
        u2 = 1.0 - rng.random()
        if self.compiled:
            inc = self.increment
            xi, lw, lv, st = nx.kernel_step(inc.fid, inc.pvec, self.mu, self.ladder.t0,
                                            c, u1, u2, self.rel_tol)
            if st == STATUS_UNDERFLOW:
                raise FloatingPointError(f"w underflows at distance {c}")
            if st == STATUS_QUAD:
                tx, body, err, ok, *_ = nx.w_split(inc.fid, inc.pvec, self.mu,
                                                   self.ladder.t0, c, self.rel_tol)
                raise QuadratureError("w quadrature did not converge", err)
            return xi, lw, lv
        return _step_python(self, c, u1, u2)

    def sample_conditional_increment(self, y: float, rng: np.random.Generator) -> float:
        return self.step(y, rng)[0]

    def run_walk_to_cross(self, rng: np.random.Generator, max_steps: int = 10**8,
                          callback: Optional[Callable[[int, float, float], None]] = None
                          ) -> WalkResult:
        """Simulate the tilted walk from 0 until it first exceeds the level.

        ``callback(n, increment, walk)`` is invoked after every step.
        """
        if self.compiled and callback is None:
            inc = self.increment
            tau, walk, loglr, incs, st = nx.walk_to_cross(
                inc.fid, inc.pvec, self.mu, self.ladder.t0, self.level, self.astar,
                rng, max_steps, self.rel_tol)
            if st == STATUS_MAXSTEPS:
                raise MaxStepsExceeded(f"walk did not cross within {max_steps} steps")
            return WalkResult(tau, walk, loglr, incs, st)
        walk = 0.0
        loglr = 0.0
        incs = []
        while walk <= self.level:
            if len(incs) >= max_steps:
                raise MaxStepsExceeded(f"walk did not cross within {max_steps} steps")
            xi, lw, lv = self.step(walk, rng)
            loglr += lw - lv
            walk += xi
            incs.append(xi)
            if callback is not None:
                callback(len(incs), xi, walk)
        return WalkResult(len(incs), walk, loglr, np.asarray(incs))


def _check_finite(y):
    if not math.isfinite(y):
        raise ValueError("walk state must be finite")


# -- generic (uncompiled) path ----------------------------------------------

def _body_integrand(kernel: ISKernel, c: float):
    inc = kernel.increment
    lad = kernel.ladder

    def h(r):
        e = math.exp(-r)
        return lad.tail(c - inc.tail_quantile(e)) * e
    return h


def _w_parts_python(kernel: ISKernel, c: float):
    inc = kernel.increment
    tx = inc.tail(c)
    if tx >= 1.0:
        return tx, 0.0, 0.0
    big_r = -math.log(tx) if tx > 0 else 745.0
    h = _body_integrand(kernel, c)
    pts = []
    lo = inc.lower()
    if math.isfinite(lo):
        tl = inc.tail(lo)
        if 0 < tl < 1:
            pts.append(-math.log(tl))
    t0 = kernel.ladder.t0
    if t0 > 0 and c - t0 > lo:
        pts.append(-math.log(inc.tail(c - t0)))
    pts = sorted(p for p in pts if 0 < p < big_r) or None
    body, err = integrate.quad(h, 0.0, big_r, points=pts, epsabs=0.0,
                               epsrel=kernel.rel_tol, limit=400)
    return tx, body, err


def _step_python(kernel: ISKernel, c: float, u1: float, u2: float):
    inc = kernel.increment
    tx, body, _ = _w_parts_python(kernel, c)
    w = tx + body
    if tx >= 1.0:
        xi = inc.tail_quantile(u2)
        return xi, 0.0, math.log(kernel.ladder.tail(c - xi))
    if u1 * w < tx or body <= 0:
        xi = inc.tail_quantile(u2 * tx)
    else:
        h = _body_integrand(kernel, c)
        big_r = -math.log(tx) if tx > 0 else 745.0
        target = u2 * body

        def g(r):
            return integrate.quad(h, 0.0, r, epsabs=0.0, epsrel=kernel.rel_tol,
                                  limit=400)[0] - target
        r = optimize.brentq(g, 0.0, big_r, xtol=1e-12)
        xi = min(inc.tail_quantile(math.exp(-r)), c)
    return xi, math.log(w), math.log(kernel.ladder.tail(c - xi))


# -- Lyapunov verifier --------------------------------------------------------

def default_astar_grid(kernel: ISKernel, span: float = 50.0, n_lin: int = 201,
                       n_geo: int = 40) -> np.ndarray:
    """Points y <= s + astar: a linear band of width ``span`` plus a geometric tail."""
    top = kernel.level + kernel.astar
    lin = top - np.linspace(0.0, span, n_lin)
    geo = top - span * np.geomspace(1.0, 100.0, n_geo)[1:]
    return np.concatenate([lin, geo])


def verify_astar(kernel: ISKernel, p: float = 2.0,
                 grid: Optional[Sequence[float]] = None,
                 frame: str = "origin") -> AstarReport:
    """Check -delta <= (v^p - w^p) / (P(increment > -y) w^(p-1)) on the grid.

    States y are walk positions (the walk starts at 0).  With
    ``frame="level"`` the tail in the denominator is instead taken at the
    remaining distance s - y, which is a much stricter test.
    """
    if frame not in ("origin", "level"):
        raise ValueError("frame must be 'origin' or 'level'")
    if p < 2:
        raise ValueError("exponent must be at least 2")
    y = np.asarray(default_astar_grid(kernel) if grid is None else grid, dtype=float)
    if y.size == 0:
        raise ValueError("empty verification grid")
    if np.any(y > kernel.level + kernel.astar + 1e-12):
        raise ValueError("grid points must satisfy y <= s + astar")
    v = np.array([kernel.v(t) for t in y])
    w = np.array([kernel.w(t) for t in y])
    shift = kernel.level if frame == "level" else 0.0
    tails = kernel.increment.tail_array(shift - y)
    underflow = bool(np.any((w <= 0) | (tails <= 0) | (v <= 0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (v ** p - w ** p) / (tails * w ** (p - 1))
    valid = np.isfinite(ratio)
    if not valid.any():
        return AstarReport(False, math.nan, math.nan, True, y, v, w, ratio)
    idx = int(np.nanargmin(np.where(valid, ratio, np.inf)))
    worst = float(ratio[idx])
    return AstarReport(worst >= -kernel.delta, worst, float(y[idx]), underflow,
                       y, v, w, ratio)
