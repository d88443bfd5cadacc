"""Batch experiment runner: every verification exposed as a subcommand.

One binary, subcommands {constants, sample, couple, mixing, lln, tv, verify}.
Each run is a pure function of (config, seed): primary outputs are
byte-identical across re-runs and across thread counts.  The canonicalized
config's 64-bit FNV-1a hash is embedded in every output header for
provenance.

Exit codes: 0 success, 2 usage, 3 safety refusal (step size beyond the cap
without --unsafe-eta), 4 validation failure, 5 numeric overflow during a run.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import coupling, model, randommap, sampler, stats
from .errors import ConfigurationError, EtaCapError, NumericOverflowError

EXIT_USAGE = 2
EXIT_SAFETY = 3
EXIT_VALIDATION = 4
EXIT_OVERFLOW = 5


def fnv1a64(data):
    """64-bit FNV-1a over bytes."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(cfg):
    # where results land and how many workers computed them do not change
    # what was computed, so they stay out of the provenance hash
    hashed = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return fnv1a64(canon.encode("utf-8"))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header_cols, rows, cfg_hash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash:016x}\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, doc, cfg_hash):
    doc = dict(doc)
    doc["config_hash"] = f"{cfg_hash:016x}"
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def write_curve(outdir, name, xs, ys, cfg_hash):
    """Plot-ready two-column CSV for one curve."""
    write_csv(outdir / f"curve_{name}.csv", ["x", "y"],
              list(zip(xs, ys)), cfg_hash)


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


# ---------------------------------------------------------------------------
# Config plumbing.

def _load_problem(source):
    if isinstance(source, str) and source in model.BUILTIN_NAMES:
        return model.builtin_problem(source)
    if isinstance(source, str):
        p = Path(source)
        if p.exists():
            return model.problem_from_json(p.read_text())
        raise ConfigurationError(
            f"unknown problem {source!r}: not a builtin "
            f"({', '.join(model.BUILTIN_NAMES)}) and no such file")
    return model.problem_from_json(source)


def _resolve(args, extra_keys=()):
    """Merge an optional JSON config file with flag overrides."""
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    keys = ["problem", "eta", "eps", "seed", "steps", "reps", "k_override",
            "regen_override", "unsafe_eta", "threads", "out", "format",
            *extra_keys]
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if "problem" not in cfg:
        raise _Usage("--problem is required (flag or config file)")
    cfg.setdefault("eps", 0.1)
    cfg.setdefault("seed", 0)
    cfg.setdefault("reps", 200)
    cfg.setdefault("unsafe_eta", False)
    cfg.setdefault("threads", 1)
    cfg.setdefault("out", ".")
    cfg.setdefault("format", "csv")
    problem = _load_problem(cfg["problem"])
    if cfg.get("eta") is None:
        cfg["eta"] = sampler.eta_max(problem)
    if not isinstance(cfg["problem"], str):
        cfg["problem"] = json.loads(model.problem_to_json(problem))
    return cfg, problem


def _bundle_for(problem, cfg):
    bundle = randommap.derive_constants(
        problem, cfg["eta"], cfg["eps"],
        e_x0_sq=float(cfg.get("e_x0_sq", 0.0)),
        unsafe_eta=cfg["unsafe_eta"])
    if cfg.get("k_override") is not None or cfg.get("regen_override") is not None:
        bundle = randommap.with_overrides(
            problem, bundle, k_override=cfg.get("k_override"),
            regen_radius=cfg.get("regen_override"))
        gate = randommap.verify_minorization(problem, cfg["eta"], bundle,
                                             trials=20000, seed=cfg["seed"])
        if not gate["pass"]:
            raise _Validation(
                "overridden constants fail the minorization check "
                f"(min density ratio {gate['min_density_ratio']:.6g})")
    return bundle


class _Validation(Exception):
    pass


class _Usage(Exception):
    pass


def _outdir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_constants(args):
    cfg, problem = _resolve(args)
    h = config_hash(cfg)
    bundle = _bundle_for(problem, cfg)
    out = _outdir(cfg) / "constants.json"
    doc = json.loads(bundle.to_json())
    write_json(out, doc, h)
    print(f"problem        {problem.name or 'custom'}")
    print(f"eta            {bundle.eta!r}")
    print(f"eps            {bundle.eps!r}")
    print(f"C_check        {bundle.c_check!r}")
    print(f"C_hat          {bundle.c_hat!r}")
    print(f"K(eps)         {bundle.k_eps!r}")
    print(f"log beta       {bundle.log_beta!r}")
    print(f"good-set radii x<={bundle.good_x_radius!r} "
          f"rows<={bundle.good_g_radius!r}")
    print(f"regen radius   {bundle.regen_radius!r}")
    print(f"wrote {out}")
    return 0


def cmd_sample(args):
    cfg, problem = _resolve(args, ("stride", "x0"))
    cfg.setdefault("steps", 10000)
    cfg.setdefault("stride", 1)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    x0 = np.array(cfg.get("x0") or [0.0] * problem.dim, dtype=np.float64)
    traj = sampler.run_chain(problem, x0, cfg["eta"], cfg["steps"],
                             cfg["seed"], stride=cfg["stride"],
                             unsafe_eta=cfg["unsafe_eta"])
    if cfg["format"] == "binary":
        tpath = outdir / "trajectory.bin"
        traj.to_binary(tpath, config_hash=h)
    else:
        tpath = outdir / "trajectory.csv"
        traj.to_csv(tpath, header_comment=f"config_hash={h:016x}")
    mom = stats.track_moments(problem, ("point", x0), cfg["eta"],
                              min(cfg["steps"], 2000), cfg["reps"],
                              cfg["seed"], unsafe_eta=cfg["unsafe_eta"],
                              threads=cfg["threads"])
    rows = [(int(n), mom.ex_sq[n], mom.eg_sq_max[n], mom.bound_x,
             mom.bound_g[n]) for n in range(mom.steps.shape[0])]
    write_csv(outdir / "moments.csv",
              ["step", "e_xsq", "e_gsq_max", "bound_x", "bound_g"], rows, h)
    write_json(outdir / "moments.json", {
        "applicable": mom.applicable, "x_ok": mom.x_ok, "g_ok": mom.g_ok,
        "bound_x": mom.bound_x, "replications": mom.replications,
    }, h)
    write_curve(outdir, "e_xsq", mom.steps, mom.ex_sq, h)
    write_curve(outdir, "e_gsq_max", mom.steps, mom.eg_sq_max, h)
    write_curve(outdir, "bound_g", mom.steps, mom.bound_g, h)
    flag = "n/a (unsafe eta)" if not mom.applicable else \
        ("PASS" if (mom.x_ok and mom.g_ok) else "FAIL")
    print(f"moment bounds: {flag}")
    print(f"wrote {tpath} and {outdir / 'moments.csv'}")
    return 0


def cmd_couple(args):
    cfg, problem = _resolve(args, ("k_max", "x0_a", "x0_b", "init_law"))
    cfg.setdefault("k_max", 200)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    bundle = _bundle_for(problem, cfg)
    d = problem.dim
    cfg.setdefault("init_law", "gauss")
    if cfg["init_law"] == "point":
        law_a = ("point", cfg.get("x0_a") or [0.0] * d)
        law_b = ("point", cfg.get("x0_b") or [1.0] * d)
    else:
        law_a = ("gauss", cfg.get("x0_a") or [0.0] * d, 1.0)
        law_b = ("gauss", cfg.get("x0_b") or [1.0] * d, 1.0)
    rep = coupling.empirical_meet_prob(problem, law_a, law_b, cfg["k_max"],
                                       cfg["reps"], cfg["eta"], bundle,
                                       cfg["seed"], threads=cfg["threads"])
    n = problem.count
    reps = cfg["reps"]
    rate_occ = rep["cnt_d"] / reps
    rows = []
    bound_emp = 0.0
    log_rate = (n + 1) * bundle.log_beta - n * math.log(n)
    rate = math.exp(log_rate) if log_rate > -745 else 0.0
    for k in range(cfg["k_max"] + 1):
        bound_paper = coupling.theoretical_meet_bound(
            k, bundle.log_beta, n, bundle.eps)
        if k > 0:
            prev = k - 1
            if prev < rep["cnt_hbar_d"].shape[0]:
                bound_emp = min(1.0, bound_emp
                                + rep["cnt_hbar_d"][prev] / reps * rate)
        occ = rate_occ[k] if k < rate_occ.shape[0] else math.nan
        rows.append((k, rep["p_hat"][k], rep["stderr"][k], bound_paper,
                     bound_emp, occ))
    write_csv(outdir / "coupling.csv",
              ["k", "p_hat", "stderr", "bound_paper", "bound_empiricalD",
               "d_occupancy"], rows, h)
    write_curve(outdir, "p_hat", [r[0] for r in rows], [r[1] for r in rows], h)
    write_curve(outdir, "d_occupancy", list(range(rate_occ.shape[0])),
                rate_occ, h)
    meets = rep["meet_after"]
    met = meets[meets >= 0]
    quant = {f"q{q}": (float(np.quantile(met, q / 100.0)) if met.size else None)
             for q in (10, 50, 90, 99)}
    nz = coupling.n_zero(bundle.log_beta, n, bundle.eps)
    write_json(outdir / "coupling.json", {
        "met_fraction": float((meets >= 0).mean()),
        "meet_quantiles": quant,
        "violations": rep["violations"],
        "sweep_events": int(rep["cnt_i"].sum()),
        "n_zero": (None if math.isinf(nz["n_zero"]) else nz["n_zero"]),
        "n_zero_log10": nz["log10_n_zero"],
        "n_zero_is_sentinel": bool(math.isinf(nz["n_zero"])),
        "blocks": int(rep["n_blocks"]),
        # which guarantees remain in force for this run
        "guarantees": {
            "minorization_verified": True,
            "moment_bounds_in_force": not bundle.unsafe_eta,
            "constants_overridden": bundle.overridden,
        },
    }, h)
    print(f"met fraction {float((meets >= 0).mean()):.4f}, "
          f"sweep events {int(rep['cnt_i'].sum())}, "
          f"violations {rep['violations']}")
    print(f"wrote {outdir / 'coupling.csv'}")
    return 0


def cmd_mixing(args):
    cfg, problem = _resolve(args, ("lags", "anchor_step"))
    cfg.setdefault("lags", [100, 1000, 10000])
    cfg.setdefault("anchor_step", 512)
    cfg.setdefault("reps", 2000)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    bundle = _bundle_for(problem, cfg)
    rep = stats.mixing_vs_coupling(problem, cfg["eta"], bundle, cfg["lags"],
                                   cfg["reps"], cfg["seed"],
                                   anchor_step=cfg["anchor_step"],
                                   threads=cfg["threads"])
    rows = list(zip(rep.lags, rep.alpha_hat, rep.alpha_stderr,
                    rep.coupling_bound, rep.bound_stderr))
    write_csv(outdir / "mixing.csv",
              ["lag", "alpha_hat", "alpha_stderr", "coupling_bound",
               "bound_stderr"], rows, h)
    write_json(outdir / "mixing.json", {
        "pass_inequality": rep.pass_inequality,
        "pass_monotone": rep.pass_monotone,
        "event_family": rep.event_family,
        "anchor_step": rep.anchor_step,
        "p_meet": rep.details["p_meet"],
        "guarantees": {
            "minorization_verified": True,
            "moment_bounds_in_force": not bundle.unsafe_eta,
            "constants_overridden": bundle.overridden,
        },
    }, h)
    write_curve(outdir, "alpha_hat", rep.lags, rep.alpha_hat, h)
    write_curve(outdir, "coupling_bound", rep.lags, rep.coupling_bound, h)
    print(f"mixing inequality: {'PASS' if rep.pass_inequality else 'FAIL'}; "
          f"monotone: {'PASS' if rep.pass_monotone else 'FAIL'}")
    print(f"wrote {outdir / 'mixing.csv'}")
    return 0


def cmd_lln(args):
    cfg, problem = _resolve(args, ("phi", "horizon"))
    cfg.setdefault("phi", "sqcap:100")
    cfg.setdefault("horizon", 100000)
    cfg.setdefault("reps", 8)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    rep = stats.lln_check(problem, cfg["eta"], cfg["phi"], cfg["horizon"],
                          cfg["reps"], cfg["seed"],
                          threads=cfg["threads"],
                          unsafe_eta=cfg["unsafe_eta"])
    rows = [(r, rep["avg_half"][r], rep["avg_full"][r], rep["avg_burned"][r])
            for r in range(cfg["reps"])]
    write_csv(outdir / "lln.csv",
              ["replication", "avg_half", "avg_full", "avg_burned"], rows, h)
    write_json(outdir / "lln.json", {
        "observable": rep["observable"],
        "growth_constant": rep["growth_constant"],
        "mean_full": rep["mean_full"],
        "mean_burned": rep["mean_burned"],
        "spread_half": rep["spread_half"],
        "spread_full": rep["spread_full"],
        "burn_in": rep["burn_in"],
        "c_w_hat": rep["c_w_hat"],
        "ui_bound": {str(k): v for k, v in rep["ui_bound"].items()},
    }, h)
    write_curve(outdir, "avg_full", list(range(cfg["reps"])),
                rep["avg_full"], h)
    print(f"ergodic average ({rep['observable']}): "
          f"{rep['mean_full']:.6g} (burned {rep['mean_burned']:.6g}), "
          f"spread {rep['spread_full']:.3g}")
    print(f"wrote {outdir / 'lln.csv'}")
    return 0


def cmd_tv(args):
    cfg, problem = _resolve(args, ("checkpoints",))
    cfg.setdefault("checkpoints", [10, 100, 1000, 2000])
    cfg.setdefault("reps", 2000)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    rep = stats.tv_cauchy_scan(problem, cfg["eta"], cfg["checkpoints"],
                               cfg["reps"], cfg["seed"],
                               threads=cfg["threads"],
                               unsafe_eta=cfg["unsafe_eta"])
    cks = rep["checkpoints"]
    rows = [(cks[i], cks[j], rep["tv"][i][j])
            for i in range(len(cks)) for j in range(len(cks))]
    write_csv(outdir / "tv.csv", ["n_a", "n_b", "tv"], rows, h)
    write_json(outdir / "tv.json", {
        "checkpoints": cks,
        "successive": rep["successive"],
        "pass": rep["pass"],
    }, h)
    write_curve(outdir, "tv_successive", cks[1:], rep["successive"], h)
    print(f"tv cauchy diagnostic: {'PASS' if rep['pass'] else 'FAIL'}")
    print(f"wrote {outdir / 'tv.csv'}")
    return 0


def cmd_verify(args):
    cfg, problem = _resolve(args, ("trials", "radius"))
    cfg.setdefault("trials", 20000)
    cfg.setdefault("radius", 10.0)
    h = config_hash(cfg)
    outdir = _outdir(cfg)
    assum = model.verify_assumptions(problem, sample_count=cfg["trials"],
                                     radius=cfg["radius"], seed=cfg["seed"])
    bundle = _bundle_for(problem, cfg)
    minor = randommap.verify_minorization(problem, cfg["eta"], bundle,
                                          trials=cfg["trials"],
                                          seed=cfg["seed"])
    write_json(outdir / "verify.json",
               {"assumptions": assum, "minorization": minor}, h)
    ok = assum["lipschitz_ok"] and assum["dissip_ok"] and minor["pass"]
    print(f"assumptions: lipschitz {'ok' if assum['lipschitz_ok'] else 'VIOLATED'}"
          f" (worst ratio {assum['worst_ratio']:.6g}), "
          f"dissipativity {'ok' if assum['dissip_ok'] else 'VIOLATED'}"
          f" (worst margin {assum['worst_margin']:.6g})")
    print(f"minorization: {'PASS' if minor['pass'] else 'FAIL'} "
          f"(min ratio {minor['min_density_ratio']:.6g})")
    print(f"wrote {outdir / 'verify.json'}")
    return 0 if ok else EXIT_VALIDATION


# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--problem", help="builtin name or problem JSON file")
    sp.add_argument("--eta", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--k-override", dest="k_override", type=float)
    sp.add_argument("--regen-override", dest="regen_override", type=float)
    sp.add_argument("--unsafe-eta", dest="unsafe_eta", action="store_const",
                    const=True)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["csv", "json", "binary"])
    sp.add_argument("--config", help="JSON config file (flags override)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="sagald",
        description="variance-reduced Langevin sampling experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("constants", help="derive and export the constants bundle")
    _add_common(sp)
    sp.set_defaults(func=cmd_constants)

    sp = sub.add_parser("sample", help="run one chain; export trajectory and moments")
    _add_common(sp)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--x0", type=float, nargs="+")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("couple", help="coupled pairs: meeting curve and bounds")
    _add_common(sp)
    sp.add_argument("--k-max", dest="k_max", type=int)
    sp.add_argument("--x0-a", dest="x0_a", type=float, nargs="+")
    sp.add_argument("--x0-b", dest="x0_b", type=float, nargs="+")
    sp.add_argument("--init-law", dest="init_law", choices=["gauss", "point"])
    sp.set_defaults(func=cmd_couple)

    sp = sub.add_parser("mixing", help="mixing estimate vs coupling bound")
    _add_common(sp)
    sp.add_argument("--lags", type=int, nargs="+")
    sp.add_argument("--anchor-step", dest="anchor_step", type=int)
    sp.set_defaults(func=cmd_mixing)

    sp = sub.add_parser("lln", help="ergodic averages of a registered observable")
    _add_common(sp)
    sp.add_argument("--phi")
    sp.add_argument("--horizon", type=int)
    sp.set_defaults(func=cmd_lln)

    sp = sub.add_parser("tv", help="total variation between marginals")
    _add_common(sp)
    sp.add_argument("--checkpoints", type=int, nargs="+")
    sp.set_defaults(func=cmd_tv)

    sp = sub.add_parser("verify", help="assumption scan and minorization check")
    _add_common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--radius", type=float)
    sp.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _Validation as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EtaCapError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except ConfigurationError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericOverflowError as exc:
        print(f"numeric overflow: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except (ValueError, OSError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
