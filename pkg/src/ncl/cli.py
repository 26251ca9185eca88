"""Command-line front end: ``ncl {rates,solve,simulate,sibuya}``.

Exit codes: 0 success, 2 usage or configuration error, 3 hypothesis
violated, 4 inputs do not match, 5 numerical failure (non-convergence,
failed dominance check, negative mass).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConvergenceError, DomainError, IntegrityError, SearchError
from .kernel import build_kernel
from .measure import LambdaMeasure, alpha_c, mean_inv_x, psi, rate_table
from .rde import (ExtDist, TailPolicy, fix_from_delta1, fix_from_delta_inf, g_map,
                  inverse_T, mean_identity_check, pgf_residual, tv)
from .sibuya import (build_mu0, build_nu0, check_mu0, check_nu0, default_beta, default_p,
                     gamma_coeffs,
                     sibuya_limit_constant, tail_index, theorem3_bracket)
from .sim import SimConfig, run_many

log = logging.getLogger("ncl")

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS, EXIT_MISMATCH, EXIT_NUMERIC = 0, 2, 3, 4, 5
RESIDUAL_GRID = [i / 10 for i in range(1, 10)]


class UsageError(Exception):
    pass


class MismatchError(Exception):
    pass


DEFAULTS = {
    "rates": {"bmax": None, "kernel_c": None},
    "solve": {"c": None, "from_": "one", "n": 512, "tol": 1e-12, "max_iter": 100_000,
              "policy": "FoldToN", "assert_finite_mean": False},
    "simulate": {"s": None, "m": 3, "c": None, "init": "one", "reps": 1000, "seed": 0,
                 "compare_to": None, "n": 512, "cutoff": 50},
    "sibuya": {"gamma_only": False, "alpha": None, "nmax": 100_000, "c": None, "beta": None,
               "n": 512, "search": False, "a": None, "eps": None, "k": None, "tol": 1e-10},
}
COMMON = {"measure": None, "measure_file": None, "out": "out"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag values (flags override)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--measure", help="measure JSON or shorthand beta:<alpha>")
    common.add_argument("--measure-file", help="file holding measure JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ncl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rates", parents=[common], help="merger-rate table")
    r.add_argument("--bmax", type=int)
    r.add_argument("--kernel-c", type=float, help="also write the Exp(c) block-count kernel")

    s = sub.add_parser("solve", parents=[common], help="fixed point of G_c")
    s.add_argument("--c", type=float)
    s.add_argument("--from", dest="from_", choices=["one", "inf"])
    s.add_argument("--n", type=int, help="truncation N (default 512)")
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--policy", choices=[t.value for t in TailPolicy])
    s.add_argument("--assert-finite-mean", action="store_true", default=None)

    m = sub.add_parser("simulate", parents=[common], help="nested coalescent Monte Carlo")
    m.add_argument("--s", help="initial species count, or a comma list for a sweep")
    m.add_argument("--m", type=int)
    m.add_argument("--c", type=float)
    m.add_argument("--init", choices=["one", "inf"])
    m.add_argument("--reps", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--compare-to", help="solve output JSON used as the reference law")
    m.add_argument("--n", type=int, help="truncation for the internal reference solve")
    m.add_argument("--cutoff", type=int, help="bucket counts above this together")

    b = sub.add_parser("sibuya", parents=[common], help="Sibuya coefficients and bracket")
    b.add_argument("--gamma-only", action="store_true", default=None)
    b.add_argument("--alpha", type=float)
    b.add_argument("--nmax", type=int)
    b.add_argument("--c", type=float)
    b.add_argument("--beta", type=float)
    b.add_argument("--n", type=int)
    b.add_argument("--search", action="store_true", default=None)
    b.add_argument("--a", type=float)
    b.add_argument("--eps", type=float)
    b.add_argument("--k", type=int)
    b.add_argument("--tol", type=float)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    defaults = {**COMMON, **DEFAULTS[args.command]}
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        if "from" in cfg:
            cfg["from_"] = cfg.pop("from")
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        out[key] = val if val is not None else cfg.get(key, default)
    return out


def load_measure(opts: dict) -> LambdaMeasure:
    text = opts.get("measure")
    if opts.get("measure_file"):
        text = Path(opts["measure_file"]).read_text(encoding="utf-8")
    if isinstance(text, dict):
        text = json.dumps(text)
    if not text:
        raise UsageError("a measure is required (--measure or --measure-file)")
    try:
        return LambdaMeasure.parse(str(text))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid measure: {exc}") from None


def _require(opts, *keys):
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): "
                         + ", ".join("--" + k.rstrip("_").replace("_", "-") for k in missing))


def _inputs(opts):
    return [p for p in (opts.get("measure_file"), opts.get("compare_to")) if p]


def _config_view(opts, measure=None):
    view = {k.rstrip("_"): v for k, v in opts.items() if k not in ("measure_file", "out")}
    if measure is not None:
        view["measure"] = measure.to_dict()
    return view


# -- commands -----------------------------------------------------------------

def cmd_rates(opts: dict, out: Path) -> int:
    _require(opts, "bmax")
    measure = load_measure(opts)
    bmax = int(opts["bmax"])
    if bmax < 2:
        raise UsageError("--bmax must be at least 2")
    man = io.manifest("rates", _config_view(opts, measure), _inputs(opts))
    tab = rate_table(measure, bmax + 1)  # one extra row for the recursion check
    lam = tab.lambda_bk
    b = np.arange(2, bmax)[:, None]
    k = np.arange(2, bmax + 1)[None, :]
    ok = k <= b
    viol = np.abs(lam[2:bmax, 2:bmax + 1] - lam[3:bmax + 1, 2:bmax + 1] - lam[3:bmax + 1, 3:bmax + 2])
    worst = float(viol[ok].max()) if ok.any() else 0.0
    rows = ([bb, tab.lambda_b[bb]] + [lam[bb, kk] if kk <= bb else None for kk in range(2, bmax + 1)]
            for bb in range(1, bmax + 1))
    io.write_text(out / "rates.csv", io.csv_text(
        ["b", "lambda_b"] + [f"k{kk}" for kk in range(2, bmax + 1)], rows, man))
    report = {"manifest": man, "measure": measure.to_dict(), "bmax": bmax,
              "max_recursion_violation": worst, "lambda_22": float(lam[2, 2]),
              "mean_inv_x": mean_inv_x(measure)}
    if opts.get("kernel_c") is not None:
        kern = build_kernel(measure, float(opts["kernel_c"]), bmax,
                            inf_row=measure.is_dust)
        io.write_text(out / "kernel.csv", io.kernel_csv(kern, man))
        report["kernel_max_row_sum_error"] = float(np.abs(kern.K[1:].sum(axis=1) - 1).max())
    io.write_text(out / "rates_report.json", io.dumps(report))
    print(f"max recursion violation {io.fmt(worst)}")
    return EXIT_OK


def _dist_json(d: ExtDist) -> dict:
    return {"p": d.p[1:], "p_inf": d.p_inf, "tail": d.tail, "mean": d.mean()}


def cmd_solve(opts: dict, out: Path) -> int:
    _require(opts, "c")
    measure = load_measure(opts)
    c = float(opts["c"])
    N = int(opts["n"])
    if c <= 0 or N < 2:
        raise UsageError("need c > 0 and n >= 2")
    e = mean_inv_x(measure)
    if opts["assert_finite_mean"] and not c < e:
        raise DomainError(f"finite-mean hypothesis violated: c={c} >= E[1/X]={e}")
    man = io.manifest("solve", _config_view(opts, measure), _inputs(opts))
    kernel = build_kernel(measure, c, N, inf_row=measure.is_dust)
    driver = fix_from_delta1 if opts["from_"] == "one" else fix_from_delta_inf
    status = EXIT_OK
    try:
        fp = driver(kernel, tol=float(opts["tol"]), max_iter=int(opts["max_iter"]),
                    policy=opts["policy"])
    except ConvergenceError as exc:
        fp = exc.result
        fp.notes.append(str(exc))
        status = EXIT_NUMERIC
    d = fp.dist
    pol = TailPolicy.FOLD_TO_N if d.tail_policy == TailPolicy.ENVELOPE else d.tail_policy
    diag = {"pgf_residual_max": None, "inverse_T_tv": None, "mean_identity_gap": None,
            "g_map_tv": tv(g_map(d, kernel, pol), d.with_policy(pol))}
    if measure.is_dust and c < e and d.p_inf == 0 and d.tail == 0:
        res = pgf_residual(d, measure, c, RESIDUAL_GRID)
        conv = np.convolve(d.p, d.p)[:N + 1]
        lhs, rhs = mean_identity_check(d, measure, c)
        diag.update(pgf_residual_max=float(np.abs(res).max()),
                    inverse_T_tv=0.5 * float(np.abs(inverse_T(d, kernel) - conv).sum()),
                    mean_identity_gap=abs(lhs - rhs))
    else:
        fp.notes.append("identity diagnostics not asserted outside the finite-mean regime")
    result = {
        "manifest": man, "measure": measure.to_dict(), "c": c, "N": N,
        "policy": str(TailPolicy(opts["policy"]).value), "from": opts["from_"],
        "p": d.p[1:], "p_inf": d.p_inf, "tail": d.tail, "mean": d.mean(),
        "band_max": d.band_max(), "converged": fp.converged, "iterations": fp.iterations,
        "regime": fp.regime, "tv_trace": fp.tv_trace, "diagnostics": diag, "notes": fp.notes,
    }
    io.write_text(out / "solve.json", io.dumps(result))
    print(f"{fp.regime}; iterations {fp.iterations}; p_inf {io.fmt(d.p_inf)}; mean {io.fmt(d.mean())}")
    return status


def _load_reference(path, measure, c) -> ExtDist:
    try:
        ref = json.loads(Path(path).read_text(encoding="utf-8"))
        ref_measure = LambdaMeasure.from_dict(ref["measure"])
        ref_c = float(ref["c"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read reference {path}: {exc}") from None
    if ref_measure != measure or ref_c != c:
        raise MismatchError(f"reference was solved for measure {ref_measure} and c={ref_c}, "
                            f"simulation uses {measure} and c={c}")

    def num(v):
        return float(v) if not isinstance(v, str) else float(v)

    p = [num(v) for v in ref["p"]]
    return ExtDist.from_masses(p, num(ref.get("p_inf", 0.0)), num(ref.get("tail", 0.0)))


def cmd_simulate(opts: dict, out: Path) -> int:
    _require(opts, "s", "c")
    measure = load_measure(opts)
    c = float(opts["c"])
    try:
        s_values = [int(v) for v in str(opts["s"]).split(",")]
    except ValueError:
        raise UsageError(f"--s must be an integer or comma list, got {opts['s']!r}") from None
    if opts["compare_to"]:
        ref = _load_reference(opts["compare_to"], measure, c)
    else:
        kern = build_kernel(measure, c, int(opts["n"]), inf_row=measure.is_dust)
        try:
            ref = (fix_from_delta1 if opts["init"] == "one" else fix_from_delta_inf)(kern).dist
        except ConvergenceError as exc:
            ref = exc.result.dist
            log.warning("reference solve did not converge; using last iterate")
    man = io.manifest("simulate", _config_view(opts, measure), _inputs(opts))
    cutoff = int(opts["cutoff"])
    sweep = []
    for s in s_values:
        cfg = SimConfig(s=s, m=int(opts["m"]), c=c, measure=measure, init=opts["init"],
                        replicates=int(opts["reps"]), seed=int(opts["seed"]))
        res = run_many(cfg)
        name = "simulate.csv" if len(s_values) == 1 else f"simulate_s{s}.csv"
        io.write_text(out / name, io.csv_text(
            [f"n{j + 1}" for j in range(cfg.m)], res.counts.tolist(), man))
        tvs = res.tv_to(ref, cutoff)
        sweep.append({
            "s": s,
            "empirical_pmf": [res.marginal_pmf(cutoff, j) for j in range(cfg.m)],
            "pooled_pmf": res.marginal_pmf(cutoff),
            "tv_to_reference": tvs,
            "correlations": np.nan_to_num(res.correlations(), nan=0.0),
            "max_abs_correlation": res.max_abs_correlation(),
            "all_infinite": bool(np.isinf(res.counts).all()),
            "any_infinite": bool(np.isinf(res.counts).any()),
        })
        print(f"s={s}: TV to reference {', '.join(io.fmt(t) for t in tvs)}")
    summary = {"manifest": man, "config": _config_view(opts, measure), "seed": int(opts["seed"]),
               "reference": {"N": ref.N, "p_inf": ref.p_inf, "mean": ref.mean()},
               "buckets": f"1..{cutoff} then >{cutoff} (including inf)"}
    if len(sweep) == 1:
        summary.update(sweep[0])
    else:
        worst = [max(e["tv_to_reference"]) for e in sweep]
        summary["sweep"] = sweep
        summary["tv_by_s"] = {str(e["s"]): w for e, w in zip(sweep, worst)}
        summary["tv_trend_nonincreasing"] = bool(all(b <= a for a, b in zip(worst, worst[1:])))
    io.write_text(out / "simulate.json", io.dumps(summary))
    return EXIT_OK


def cmd_sibuya(opts: dict, out: Path) -> int:
    if opts["gamma_only"]:
        _require(opts, "alpha")
        alpha, nmax = float(opts["alpha"]), int(opts["nmax"])
        g = gamma_coeffs(alpha, nmax)
        scaled = g.gamma[nmax] * nmax ** (1.0 + alpha)
        const = sibuya_limit_constant(alpha) if alpha < 1 else float("nan")
        man = io.manifest("sibuya", _config_view(opts))
        rep = {"manifest": man, "alpha": alpha, "nmax": nmax, "gamma_nmax": g.gamma[nmax],
               "scaled": scaled, "limit_constant": const,
               "relative_error": abs(scaled - const) / const, "gamma_head": g.gamma[1:11]}
        io.write_text(out / "gamma.json", io.dumps(rep))
        print(f"gamma_n n^(1+alpha) = {io.fmt(scaled)}; limit {io.fmt(const)}")
        return EXIT_OK

    _require(opts, "c")
    measure = load_measure(opts)
    c = float(opts["c"])
    N = int(opts["n"])
    man = io.manifest("sibuya", _config_view(opts, measure), _inputs(opts))
    manual = all(opts.get(k) is not None for k in ("a", "eps", "k")) and not opts["search"]
    if manual:
        half = psi(measure, 0.5)
        if not c < half:
            raise DomainError(f"need c < E[(1-(1-X)^(1/2))/X^2] = {half!r}")
        ac = alpha_c(measure, c)
        beta = opts["beta"] if opts["beta"] is not None else default_beta(ac, default_p(measure))
        kernel = build_kernel(measure, c, N)
        mu0 = build_mu0(measure, c, beta, float(opts["a"]), float(opts["eps"]), N, ac=ac)
        nu0 = build_nu0(measure, c, beta, int(opts["k"]), N, kernel=kernel, ac=ac)
        m_mu, b_mu = check_mu0(mu0, kernel)
        m_nu, b_nu = check_nu0(nu0.dist, kernel)
        passed = bool((m_mu >= -b_mu - 1e-12).all() and (m_nu >= -b_nu - 1e-12).all())
        rep = {"manifest": man,
               "params": {"a": opts["a"], "eps": opts["eps"], "k": opts["k"], "beta": beta,
                          "alpha_c": ac, "M1": nu0.M1},
               "dominance_margins": [_margin_json("mu0", m_mu, b_mu), _margin_json("nu0", m_nu, b_nu)],
               "tail_index_estimates": {"alpha_c": ac, "mu0": tail_index(mu0),
                                        "nu0": tail_index(nu0.dist)},
               "passed": passed}
    else:
        br = theorem3_bracket(measure, c, N, beta=opts["beta"], tol=float(opts["tol"]))
        passed = br.passed()
        rep = {"manifest": man,
               "params": br.params,
               "lower_summary": _fp_summary(br.lower),
               "upper_summary": _fp_summary(br.upper),
               "star_summary": _fp_summary(br.star),
               "dominance_margins": [_margin_json("mu0", br.mu0_margin, br.mu0_band),
                                     _margin_json("nu0", br.nu0_margin, br.nu0_band),
                                     {"check": "lower<=upper", "min_margin": float(br.order_margin.min())}],
               "tail_index_estimates": br.tail_indices,
               "tv_between_limits": tv(br.lower.dist, br.upper.dist),
               "passed": passed, "notes": br.notes}
    io.write_text(out / "bracket.json", io.dumps(rep))
    print("dominance checks " + ("passed" if passed else "FAILED beyond the truncation band"))
    return EXIT_OK if passed else EXIT_NUMERIC


def _margin_json(name, margin, band):
    return {"check": name, "min_margin": float(margin.min()),
            "min_margin_plus_band": float((margin + band).min()), "max_band": float(band.max()),
            "margins": margin, "band": band}


def _fp_summary(fp):
    d = fp.dist
    return {"mean": d.mean(), "p_inf": d.p_inf, "tail": d.tail, "iterations": fp.iterations,
            "converged": fp.converged, "last_tv": fp.tv_trace[-1] if fp.tv_trace else 0.0,
            "tail_index": tail_index(d), "p": d.p[1:]}


COMMANDS = {"rates": cmd_rates, "solve": cmd_solve, "simulate": cmd_simulate,
            "sibuya": cmd_sibuya}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve(args)
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](opts, out)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except DomainError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except MismatchError as exc:
        print(f"input mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (IntegrityError, SearchError, ConvergenceError, MemoryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
