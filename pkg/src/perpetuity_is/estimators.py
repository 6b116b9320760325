"""Truncated and randomized-truncation estimators of P(Z > x), plus oracles and diagnostics."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import _numerics as nx
from .iskernel import ISKernel, MaxStepsExceeded, STATUS_MAXSTEPS
from .recursion import CouplingParams, coupled_step_original, run_to_tau
from .rng import derived_seed, stream
from .stats import SummaryStats, bernoulli_summary, summarize

DEFAULT_MAX_STEPS = 10**8


@dataclass
class ReplicationResult:
    l_value: float
    tau: int
    horizon_used: int
    indicator: bool
    flags: tuple = ()


@dataclass(frozen=True)
class RGConfig:
    """Law of the truncation index N.

    ``geometric``: P(N >= i) = (1 - p)^i.  ``power``: P(N >= i) = 2^(-i(1+eps)).
    """

    law: str = "geometric"
    p: float = 0.5
    eps: float = 0.1

    def __post_init__(self):
        if self.law not in ("geometric", "power"):
            raise ValueError("truncation law must be 'geometric' or 'power'")
        if not (0.0 < self.p < 1.0):
            raise ValueError("p must lie in (0, 1)")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @property
    def ratio(self) -> float:
        return 1.0 - self.p if self.law == "geometric" else 2.0 ** (-(1.0 + self.eps))

    def prob_ge(self, i: int) -> float:
        return self.ratio ** i

    def draw_n(self, u: float) -> int:
        """N from a uniform u in (0, 1] by inversion of P(N >= i)."""
        return int(math.floor(math.log(u) / math.log(self.ratio)))


@dataclass
class PathOutcome:
    tau: int
    loglr: float
    hit: int          # smallest k with Z^(tau+k) > x, -1 if none within the cap
    logz_tau: float
    logprod_tau: float
    walk_tau: float
    cap: int
    status: int = 0


def _nested_index(hit: int) -> int:
    """Smallest i >= 0 with hit <= 2^i + 1."""
    if hit <= 2:
        return 0
    return (hit - 2).bit_length()


def truncation_indicator(hit: int, M: int) -> bool:
    """Is Z^(tau+M+1) > x, i.e. did the running sum pass x within M post-crossing updates."""
    return 0 <= hit <= M + 1


def _compiled_m1(model, kernel: ISKernel) -> bool:
    return model.variant == "M1" and kernel.compiled


def simulate_path(model, params: CouplingParams, kernel: ISKernel, logx: float, cap: int,
                  rng, max_steps: int = DEFAULT_MAX_STEPS) -> PathOutcome:
    """Tilted path to the crossing, then up to ``cap`` original-measure checks of Z > x."""
    if _compiled_m1(model, kernel):
        inc = kernel.increment
        tau, loglr, hit, lz, lp, walk, st = nx.perpetuity_replication(
            inc.fid, inc.pvec, kernel.mu, kernel.ladder.t0, kernel.level, kernel.astar,
            params.gamma1, logx, cap, rng, max_steps, kernel.rel_tol)
        return PathOutcome(tau, loglr, hit, lz, lp, walk, cap, st)
    state, tau = run_to_tau(model, params, kernel, rng, max_steps)
    lz, lp, walk = state.logz, state.logprod, state.walk
    if state.logz > logx:
        return PathOutcome(tau, state.loglr, 0, lz, lp, walk, cap)
    hit = -1
    status = 0
    for k in range(1, cap + 1):
        if tau + k > max_steps:
            status = STATUS_MAXSTEPS
            break
        if model.variant == "M1":
            # B = 1: the next term of the backward sum is already known
            if np.logaddexp(state.acc.logz, state.acc.logprod) > logx:
                hit = k
                break
        coupled_step_original(model, params, state, rng)
        if state.logz > logx:
            hit = k
            break
    return PathOutcome(tau, state.loglr, hit, lz, lp, walk, cap, status)


def _flags(status: int) -> tuple:
    return ("max-steps",) if status == STATUS_MAXSTEPS else ()


def estimate_truncated(model, params: CouplingParams, kernel: ISKernel, logx: float, M: int,
                       rng, max_steps: int = DEFAULT_MAX_STEPS) -> ReplicationResult:
    """One draw of the truncated estimator with M post-crossing updates."""
    if M < 1:
        raise ValueError("M must be at least 1")
    out = simulate_path(model, params, kernel, logx, M + 1, rng, max_steps)
    ind = truncation_indicator(out.hit, M)
    used = out.tau + (out.hit if out.hit > 0 else (0 if out.hit == 0 else out.cap))
    return ReplicationResult(math.exp(out.loglr) if ind else 0.0, out.tau, used, ind,
                             _flags(out.status))


def rg_value(loglr: float, hit: int, n: int, cfg: RGConfig) -> float:
    """Telescoping sum over nested horizons 2^0..2^N of one path."""
    if hit < 0:
        return 0.0
    i = _nested_index(hit)
    if i > n:
        return 0.0
    return math.exp(loglr) / cfg.prob_ge(i)


def estimate_rg(model, params: CouplingParams, kernel: ISKernel, logx: float, cfg: RGConfig,
                rng, n_override: Optional[int] = None,
                max_steps: int = DEFAULT_MAX_STEPS) -> ReplicationResult:
    """One draw of the randomized-truncation (unbiased) estimator.

    The first uniform of the stream fixes N; the path then runs to tau + 2^N.
    """
    u = 1.0 - rng.random()
    n = cfg.draw_n(u) if n_override is None else int(n_override)
    cap = 2 ** n + 1
    out = simulate_path(model, params, kernel, logx, cap, rng, max_steps)
    val = rg_value(out.loglr, out.hit, n, cfg)
    used = out.tau + (out.hit if out.hit > 0 else (0 if out.hit == 0 else out.cap))
    return ReplicationResult(val, out.tau, used, val > 0, _flags(out.status))


# ---------------------------------------------------------------------------
# batched replications


@dataclass
class GridResult:
    """Per-replication outcomes of one coupled path each."""

    logx: float
    Ms: tuple
    rg: Optional[RGConfig]
    tau: np.ndarray
    loglr: np.ndarray
    hit: np.ndarray
    n_rg: np.ndarray
    logz_tau: np.ndarray
    logprod_tau: np.ndarray
    status: np.ndarray
    elapsed: float = 0.0

    @property
    def reps(self) -> int:
        return len(self.tau)

    def values(self, M: int) -> np.ndarray:
        ind = (self.hit >= 0) & (self.hit <= M + 1)
        return np.where(ind, np.exp(self.loglr), 0.0)

    def rg_values(self) -> np.ndarray:
        if self.rg is None:
            raise ValueError("grid was run without a truncation-index law")
        out = np.zeros(self.reps)
        for r in range(self.reps):
            out[r] = rg_value(self.loglr[r], int(self.hit[r]), int(self.n_rg[r]), self.rg)
        return out

    def summary(self, M) -> SummaryStats:
        v = self.rg_values() if M == "RG" else self.values(int(M))
        return summarize(v, self.elapsed)


def run_grid(model, params: CouplingParams, kernel: ISKernel, logx: float,
             Ms: Sequence[int], rg: Optional[RGConfig], reps: int, seed: int,
             threads: int = 1, max_steps: int = DEFAULT_MAX_STEPS,
             rep_offset: int = 0) -> GridResult:
    """``reps`` independent coupled paths; replication r uses stream(seed, r).

    Every path serves all horizons in ``Ms`` and the RG column at once, so the
    columns are pathwise coupled.  Results do not depend on ``threads``.
    """
    if reps < 2:
        raise ValueError("need at least two replications")
    Ms = tuple(int(m) for m in Ms)
    base_cap = max(Ms) + 1 if Ms else 1
    tau = np.zeros(reps, dtype=np.int64)
    loglr = np.zeros(reps)
    hit = np.zeros(reps, dtype=np.int64)
    n_rg = np.zeros(reps, dtype=np.int64)
    lz = np.zeros(reps)
    lp = np.zeros(reps)
    status = np.zeros(reps, dtype=np.int64)

    def work(lo, hi):
        for r in range(lo, hi):
            rng = stream(seed, rep_offset + r)
            u = 1.0 - rng.random()
            n = rg.draw_n(u) if rg is not None else 0
            cap = base_cap
            if rg is not None:
                cap = max(cap, 2 ** min(n, 62) + 1)
            try:
                out = simulate_path(model, params, kernel, logx, cap, rng, max_steps)
            except MaxStepsExceeded:
                status[r] = STATUS_MAXSTEPS
                hit[r] = -1
                continue
            tau[r], loglr[r], hit[r] = out.tau, out.loglr, out.hit
            lz[r], lp[r], status[r], n_rg[r] = out.logz_tau, out.logprod_tau, out.status, n

    t0 = time.perf_counter()
    chunk = max(1, min(1000, reps // max(1, 4 * threads)))
    bounds = [(i, min(reps, i + chunk)) for i in range(0, reps, chunk)]
    if threads <= 1:
        for lo, hi in bounds:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda b: work(*b), bounds))
    return GridResult(logx, Ms, rg, tau, loglr, hit, n_rg, lz, lp, status,
                      time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# crude Monte Carlo oracles

CMC_TAG = 0xC3C


def estimate_cmc(model, logx: float, horizon: int = 10_000, reps: int = 10**6,
                 seed: int = 0, threads: int = 1, block: int = 10_000) -> SummaryStats:
    """Fraction of forward-simulated paths with Z^(horizon) > x."""
    if not math.isfinite(logx) and logx < 0:
        return bernoulli_summary(reps, reps)
    sd = derived_seed(seed, CMC_TAG)
    nblocks = -(-reps // block)
    counts = np.zeros(nblocks, dtype=np.int64)
    t0 = time.perf_counter()

    def work(b):
        rng = stream(sd, b)
        m = min(block, reps - b * block)
        if model.variant == "M1" and model.log_a.compiled:
            la = model.log_a
            counts[b] = nx.perpetuity_cmc(la.fid, la.pvec, 0.0, logx, horizon, m, rng)
            return
        c = 0
        for _ in range(m):
            acc = model.accumulator()
            for _k in range(horizon):
                acc.push(model.draw(rng))
                if acc.logz > logx:
                    c += 1
                    break
        counts[b] = c

    if threads <= 1:
        for b in range(nblocks):
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(nblocks)))
    return bernoulli_summary(int(counts.sum()), reps, time.perf_counter() - t0)


def walk_crossing_cmc(increment, level: float, horizon: int = 10_000, reps: int = 10**5,
                      seed: int = 0, block: int = 10_000) -> SummaryStats:
    """Fraction of untilted walks exceeding ``level`` within ``horizon`` steps."""
    sd = derived_seed(seed, CMC_TAG + 1)
    hits = 0
    t0 = time.perf_counter()
    for b in range(-(-reps // block)):
        m = min(block, reps - b * block)
        hits += nx.walk_cmc(increment.fid, increment.pvec, level, horizon, m, stream(sd, b))
    return bernoulli_summary(hits, reps, time.perf_counter() - t0)


def walk_crossing_is(kernel: ISKernel, reps: int, seed: int = 0) -> np.ndarray:
    """exp(log-likelihood ratio) of independent tilted walks to the level."""
    out = np.empty(reps)
    for r in range(reps):
        out[r] = math.exp(kernel.run_walk_to_cross(stream(seed, r)).loglr)
    return out


# ---------------------------------------------------------------------------
# diagnostics


def log_lip_mean(model) -> float:
    if model.variant == "M3":
        return 0.5 * model.log_a.mean
    return model.log_a.mean


def asymptote(params: CouplingParams, model, logx: float) -> float:
    """Integrated tail of log max(Lip, Bbar) at log x over |E log Lip|."""
    law = model.increment_law(0.0)
    return law.integrated_tail(logx) / abs(log_lip_mean(model))


def xi_density(alpha: float, mu: float, gamma: float, y):
    """Limit density of the scaled overshoot statistic."""
    _check_xi(alpha, mu, gamma)
    y = np.asarray(y, dtype=float)
    c = (mu - gamma) / mu
    k = (mu - gamma) / (alpha * gamma)
    neg = c * (1 - np.minimum(y, 0) / alpha) ** (-alpha - 1)
    pos = c * (1 + k * np.maximum(y, 0)) ** (-alpha - 1)
    return np.where(y < 0, neg, pos)


def xi_cdf(alpha: float, mu: float, gamma: float, y):
    _check_xi(alpha, mu, gamma)
    y = np.asarray(y, dtype=float)
    c = (mu - gamma) / mu
    k = (mu - gamma) / (alpha * gamma)
    neg = c * (1 - np.minimum(y, 0) / alpha) ** (-alpha)
    pos = c + (gamma / mu) * (1 - (1 + k * np.maximum(y, 0)) ** (-alpha))
    return np.where(y < 0, neg, pos)


def xi_total_mass(alpha: float, mu: float, gamma: float) -> float:
    f = lambda y: float(xi_density(alpha, mu, gamma, y))
    a, _ = integrate.quad(f, -np.inf, 0.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    b, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return a + b


def _check_xi(alpha, mu, gamma):
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not (0 < gamma < mu):
        raise ValueError("need 0 < gamma < mu")


def xi_from_path(logx: float, logz_tau: float, logprod_tau: float, alpha: float) -> float:
    """(log(x - Z^(tau)) - S_tau) / a(log x) with a(t) = t / alpha."""
    return (logx + math.log1p(-math.exp(logz_tau - logx)) - logprod_tau) / (logx / alpha)


def xi_empirical(model, params: CouplingParams, kernel: ISKernel, logx: float, alpha: float,
                 reps: int, seed: int = 0):
    """Samples of the overshoot statistic with their likelihood-ratio weights.

    The weights turn the tilted sample into one from the law conditional on a
    crossing.
    """
    xs = np.empty(reps)
    ws = np.empty(reps)
    for r in range(reps):
        out = simulate_path(model, params, kernel, logx, 0, stream(seed, r))
        xs[r] = xi_from_path(logx, out.logz_tau, out.logprod_tau, alpha)
        ws[r] = math.exp(out.loglr)
    return xs, ws


def weighted_ks(samples, weights, cdf) -> float:
    """Kolmogorov distance between a weighted empirical CDF and ``cdf``."""
    order = np.argsort(samples)
    x = np.asarray(samples)[order]
    w = np.asarray(weights)[order]
    w = w / w.sum()
    upper = np.cumsum(w)
    lower = upper - w
    f = cdf(x)
    return float(max(np.max(np.abs(upper - f)), np.max(np.abs(lower - f))))
