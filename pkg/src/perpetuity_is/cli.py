"""Command-line harness: estimate, table1, figure1, verify, oracle."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace

import numpy as np

from .config import PRESETS, ConfigError, RunConfig
from .estimators import RGConfig, asymptote, estimate_cmc, run_grid
from .iskernel import ISKernel, verify_astar
from .recursion import ModelValidationError, audit_coupling, make_coupling, model_from_spec
from .rng import derived_seed, stream

log = logging.getLogger("perpetuity_is")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3
EXIT_INFEASIBLE = 4

CSV_COLUMNS = ["x_log10", "M_or_RG", "n", "mean", "ci_lo", "ci_hi", "cv", "seconds"]
LN10 = math.log(10.0)


class GateFailure(RuntimeError):
    pass


class OracleInfeasible(RuntimeError):
    pass


def _setup(cfg: RunConfig):
    try:
        model = model_from_spec(cfg.model)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad model spec: {e}") from None
    params = make_coupling(model, gamma1=cfg.gamma1, gamma2=cfg.gamma2,
                           margin=cfg.gamma2_margin, seed=cfg.seed)
    return model, params


def _kernel(cfg, params, logx):
    return ISKernel(params.increment, params.crossing_level(logx), cfg.astar, cfg.delta,
                    cfg.rel_tol)


def _rg(cfg):
    return None if cfg.rg is None else RGConfig(**cfg.rg)


def _fmt(v: float) -> str:
    return f"{v:.10e}"


def _rows_for(x_log10, grid, cols, timing):
    rows = []
    for col in cols:
        s = grid.summary(col)
        rows.append([f"{x_log10:g}", str(col), str(s.n), _fmt(s.mean), _fmt(s.ci_lo),
                     _fmt(s.ci_hi), f"{s.cv:.6f}", f"{grid.elapsed:.3f}" if timing else ""])
    return rows


def _write_csv(rows, out):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    wr.writerows(rows)
    text = buf.getvalue()
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def gate(cfg, params) -> None:
    for xl in cfg.x_log10:
        k = _kernel(cfg, params, xl * LN10)
        rep = verify_astar(k, cfg.lyapunov_p)
        if not rep.passed:
            raise GateFailure(f"a* check failed at x=1e{xl:g}: worst margin "
                              f"{rep.worst_margin:.4g} at y={rep.worst_point:.4g}")


def _write_trace(wr, xl, grid, cols):
    for col in cols:
        vals = grid.rg_values() if col == "RG" else grid.values(col)
        for r, (t, v) in enumerate(zip(grid.tau, vals)):
            wr.writerow([f"{xl:g}", r, int(t), col, repr(float(v))])


def cmd_estimate(cfg: RunConfig, timing: bool = False, trace=None) -> str:
    model, params = _setup(cfg)
    gate(cfg, params)
    rg = _rg(cfg)
    cols = list(cfg.M) + (["RG"] if rg is not None else [])
    rows = []
    fh = open(trace, "w", newline="") if trace else None
    try:
        if fh:
            tw = csv.writer(fh, lineterminator="\n")
            tw.writerow(["x_log10", "rep", "tau", "horizon", "l_value"])
        for xl in cfg.x_log10:
            logx = xl * LN10
            k = _kernel(cfg, params, logx)
            grid = run_grid(model, params, k, logx, cfg.M, rg, cfg.reps, cfg.seed,
                            cfg.threads, cfg.max_steps)
            rows.extend(_rows_for(xl, grid, cols, timing))
            if fh:
                _write_trace(tw, xl, grid, cols)
            log.info("x=1e%g done in %.1fs", xl, grid.elapsed)
    finally:
        if fh:
            fh.close()
    return _write_csv(rows, cfg.out)


def _sampler_selftest(cfg, params, n=4000) -> list:
    """KS of the conditional sampler against accept/reject at c = 0, 1, 2."""
    from scipy import stats as sst
    out = []
    k = ISKernel(params.increment, 0.0, 0.0, cfg.delta, cfg.rel_tol)
    rng = stream(derived_seed(cfg.seed, 71), 0)
    for c in (0.0, 1.0, 2.0):
        y = -c  # distance s - y = c with astar = 0
        draws = np.array([k.sample_conditional_increment(y, rng) for _ in range(n)])
        ref = []
        while len(ref) < n:
            xi = params.increment.sample(rng, 4 * n)
            w = k.ladder.sample_array(1.0 - rng.random(4 * n))
            ref.extend(xi[xi + w > c].tolist())
        res = sst.ks_2samp(draws, np.array(ref[:n]))
        out.append((c, res.pvalue))
    return out


def _envelope_audit(cfg, model, params, logx, paths=100) -> int:
    k = _kernel(cfg, params, logx)
    bad = 0
    for tag, measure in ((72, "original"), (73, "tilted")):
        sd = derived_seed(cfg.seed, tag)
        res = audit_coupling(model, params, k, logx, paths, lambda i: stream(sd, i), measure,
                             horizon=500)
        bad += res.envelope_violations + res.order_violations
    return bad


def cmd_verify(cfg: RunConfig) -> tuple:
    model, params = _setup(cfg)
    lines = []
    ok = True
    for xl in cfg.x_log10:
        k = _kernel(cfg, params, xl * LN10)
        rep = verify_astar(k, cfg.lyapunov_p)
        ok &= rep.passed
        lines.append(f"astar x=1e{xl:g}: {'pass' if rep.passed else 'FAIL'} "
                     f"worst={rep.worst_margin:.4g} at y={rep.worst_point:.6g}"
                     + (" (underflow flagged)" if rep.underflow else ""))
    for c, pv in _sampler_selftest(cfg, params):
        good = pv > 0.01
        ok &= good
        lines.append(f"sampler c={c:g}: {'pass' if good else 'FAIL'} ks_pvalue={pv:.4f}")
    bad = _envelope_audit(cfg, model, params, cfg.x_log10[0] * LN10)
    ok &= bad == 0
    lines.append(f"envelope audit: {'pass' if bad == 0 else 'FAIL'} violations={bad}")
    return ok, "\n".join(lines)


def cmd_oracle(cfg: RunConfig) -> tuple:
    model, params = _setup(cfg)
    lines = ["x_log10,method,mean,ci_lo,ci_hi"]
    ok = True
    for xl in cfg.x_log10:
        logx = xl * LN10
        guess = 1.0 if logx <= 0 else min(1.0, asymptote(params, model, logx))
        # predicted relative CI half-width of the crude estimate
        rel = 1.96 * math.sqrt((1.0 - guess) / (guess * cfg.cmc_reps)) if guess > 0 else math.inf
        if rel > cfg.oracle_max_rel_halfwidth:
            raise OracleInfeasible(
                f"x=1e{xl:g}: probability near {guess:.3g} gives a crude CI of about "
                f"{100 * rel:.0f}% with {cfg.cmc_reps} paths (limit "
                f"{100 * cfg.oracle_max_rel_halfwidth:.0f}%)")
        k = _kernel(cfg, params, logx)
        grid = run_grid(model, params, k, logx, [cfg.oracle_M], None, cfg.reps, cfg.seed,
                        cfg.threads, cfg.max_steps)
        s_is = grid.summary(cfg.oracle_M)
        s_cmc = estimate_cmc(model, logx, cfg.cmc_horizon, cfg.cmc_reps, cfg.seed,
                             cfg.threads)
        verdict = s_is.overlaps(s_cmc)
        ok &= verdict
        for name, s in (("IS", s_is), ("CMC", s_cmc)):
            lines.append(f"{xl:g},{name},{_fmt(s.mean)},{_fmt(s.ci_lo)},{_fmt(s.ci_hi)}")
        lines.append(f"# x=1e{xl:g} overlap: {'pass' if verdict else 'FAIL'}")
    return ok, "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perpetuity-is",
                                description="Importance sampling for perpetuity tails.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("estimate", "table1", "figure1", "verify", "oracle"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", help="output path (stdout if omitted)")
        sp.add_argument("--reps", type=int, help="override the replication count")
        sp.add_argument("--timing", action="store_true",
                        help="fill the seconds column (makes output run-dependent)")
        sp.add_argument("--trace", help="per-replication CSV (rep, tau, horizon, l_value)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.command in PRESETS:
        cfg = replace(cfg, **PRESETS[args.command])
    if args.command == "oracle" and not args.config:
        cfg = replace(cfg, x_log10=[math.log10(50.0)], reps=100_000)
    for key in ("seed", "threads", "out", "reps"):
        val = getattr(args, key)
        if val is not None:
            cfg = replace(cfg, **{key: val})
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        if args.command in ("estimate", "table1", "figure1"):
            cmd_estimate(cfg, timing=args.timing, trace=args.trace)
            return EXIT_OK
        if args.command == "verify":
            ok, text = cmd_verify(cfg)
        else:
            ok, text = cmd_oracle(cfg)
        if cfg.out:
            with open(cfg.out, "w") as fh:
                fh.write(text + "\n")
        print(text)
        return EXIT_OK if ok else EXIT_GATE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GateFailure, ModelValidationError) as e:
        print(f"gate failure: {e}", file=sys.stderr)
        return EXIT_GATE
    except OracleInfeasible as e:
        print(f"oracle infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
