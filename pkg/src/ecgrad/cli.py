"""Command-line entry point: ``ecgrad {run,compare,bounds,verify}``.

Configuration is an INI file with one section per module.  Command-line
flags override file values, which override the chosen preset.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 diverged run.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import compressors as C
from . import data_io as D
from . import schemes as S
from . import simulation as M
from . import theory as T
from . import verify as V
from .errors import ConfigError, DivergedError, EcgradError
from .problems import OracleConfig, QuadraticProblem, default_probes, estimate_variances

SECTIONS = ("problems", "compressors", "schemes", "simulation", "theory")

DEFAULTS = {
    "problems": {"kind": "quadratic", "d": "20", "kappa": "100", "seed": "0", "n_samples": "4000",
                 "noise": "0.1", "signal": "1.0", "lam": "0.0", "path": "", "normalize": "true",
                 "shard_policy": "contiguous", "mu": "1.0"},
    "compressors": {"compressor": "epsball:0.1"},
    "schemes": {"scheme": "ec:hessian", "gamma_rule": "1/L", "coupling": "same"},
    "simulation": {"iterations": "1000", "seed": "0", "workers": "1", "batch": "full",
                   "metrics_every": "1", "x0": "zeros"},
    "theory": {"require": "", "beta": "", "theorems": "thm1,thm5", "eps": ""},
}

PRESETS = {
    "quadratic": {},
    "scalar-example": {
        "problems": {"kind": "scalar", "mu": "1.0"},
        "compressors": {"compressor": "epsball:0.5"},
        "schemes": {"scheme": "direct", "gamma_rule": "0.5"},
        "simulation": {"iterations": "100", "x0": "2.5"},
    },
    "floor-ratio": {
        "problems": {"kind": "quadratic", "d": "20", "kappa": "1000"},
        "simulation": {"iterations": "5000"},
    },
    "ls-sign": {
        "problems": {"kind": "least-squares", "n_samples": "4000", "d": "400"},
        "compressors": {"compressor": "sign"},
        "schemes": {"gamma_rule": "ls-sign"},
        "simulation": {"iterations": "2000", "workers": "5", "metrics_every": "10"},
    },
    "robust-sign": {
        "problems": {"kind": "robust", "n_samples": "4000", "d": "400", "signal": "0.2"},
        "compressors": {"compressor": "sign"},
        "schemes": {"gamma_rule": "robust-sign"},
        "simulation": {"iterations": "2000", "workers": "5", "metrics_every": "10"},
    },
    "thm4": {
        "problems": {"kind": "least-squares", "n_samples": "1000", "d": "20", "seed": "11"},
        "compressors": {"compressor": "rounding:0.01"},
        "schemes": {"scheme": "direct", "gamma_rule": "thm4"},
        "simulation": {"iterations": "400", "workers": "5", "batch": "20"},
        "theory": {"require": "thm4", "theorems": "thm4"},
    },
    "thm7b": {
        "problems": {"kind": "least-squares", "n_samples": "1000", "d": "20", "seed": "11"},
        "compressors": {"compressor": "rounding:0.01"},
        "schemes": {"scheme": "ec:hessian", "gamma_rule": "thm7b:0.5"},
        "simulation": {"iterations": "400", "workers": "5", "batch": "20"},
        "theory": {"require": "thm7b", "beta": "0.5", "theorems": "thm7a,thm7b"},
    },
}

THEOREMS = ("thm1", "thm3", "thm4", "thm5", "thm6", "thm7a", "thm7b")

# flag name -> (section, key)
OVERRIDES = {
    "seed": ("simulation", "seed"),
    "scheme": ("schemes", "scheme"),
    "compressor": ("compressors", "compressor"),
    "gamma_rule": ("schemes", "gamma_rule"),
    "workers": ("simulation", "workers"),
    "iters": ("simulation", "iterations"),
    "batch": ("simulation", "batch"),
}


def load_config(path=None, preset=None, overrides=None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        cfg.read_dict(PRESETS[preset])
    if path is not None:
        file_cfg = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in file_cfg.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in file_cfg[section].items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                cfg[section][key] = value
    for name, value in (overrides or {}).items():
        if value is not None:
            section, key = OVERRIDES[name]
            cfg[section][key] = str(value)
    return cfg


def _get(cfg, section, key, conv=str):
    raw = cfg[section][key]
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} in [{section}]") from None


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def build_problem(cfg):
    p = cfg["problems"]
    kind = p["kind"]
    workers = _get(cfg, "simulation", "workers", int)
    if workers < 1:
        raise ConfigError("workers must be positive")
    seed = _get(cfg, "problems", "seed", int)
    if kind == "quadratic":
        H, b = D.synth_quadratic(_get(cfg, "problems", "d", int), _get(cfg, "problems", "kappa", float), seed)
        return QuadraticProblem(H, b, n_workers=workers)
    if kind == "scalar":
        return QuadraticProblem([[_get(cfg, "problems", "mu", float)]], [0.0], n_workers=workers)
    lam = _get(cfg, "problems", "lam", float)
    policy = p["shard_policy"]
    normalize = _get(cfg, "problems", "normalize", _bool)
    if kind == "libsvm":
        raise ConfigError("libsvm problems need a loss: use kind = libsvm:<loss>")
    if kind.startswith("libsvm:"):
        loss = kind.split(":", 1)[1]
        if not p["path"]:
            raise ConfigError("libsvm problems need path = FILE")
        try:
            records = D.load_libsvm(p["path"])
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {p['path']}: {exc}") from exc
        return D.erm_from_records(records, workers, loss, lam, policy, normalize)
    if kind in ("least-squares", "logistic", "robust"):
        Z, y, _ = D.synth_least_squares(_get(cfg, "problems", "n_samples", int), _get(cfg, "problems", "d", int),
                                        _get(cfg, "problems", "noise", float), seed, normalize,
                                        _get(cfg, "problems", "signal", float))
        return D.build_erm(Z, y, workers, kind, lam, policy)
    raise ConfigError(f"unknown problem kind {kind!r}")


def build_oracle(cfg):
    batch = cfg["simulation"]["batch"].strip().lower()
    if batch == "full":
        return None
    try:
        size = int(batch)
    except ValueError:
        raise ConfigError(f"batch must be a positive integer or 'full', got {batch!r}") from None
    return OracleConfig(batch_size=size, coupling=cfg["schemes"]["coupling"])


def _x0(cfg, dim):
    raw = cfg["simulation"]["x0"].strip()
    if raw == "zeros":
        return np.zeros(dim)
    try:
        vals = [float(v) for v in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad x0 {raw!r}") from None
    if len(vals) == 1:
        return np.full(dim, vals[0])
    if len(vals) != dim:
        raise ConfigError(f"x0 has {len(vals)} entries, problem dimension is {dim}")
    return np.array(vals)


def _beta(cfg):
    raw = cfg["theory"]["beta"].strip()
    return float(raw) if raw else None


def resolve_gamma(cfg, problem):
    rule = cfg["schemes"]["gamma_rule"]
    require = cfg["theory"]["require"].strip() or None
    beta = _beta(cfg)
    if require == "thm7b" and beta is None and not rule.lower().startswith("thm7b"):
        raise ConfigError("require = thm7b needs beta")
    return T.validate_step(rule, problem.constants(), require, beta if beta is not None else 0.5)


def build_run(cfg, scheme_text=None):
    problem = build_problem(cfg)
    compressor = C.CompressorSpec.parse(cfg["compressors"]["compressor"])
    gamma = resolve_gamma(cfg, problem)
    scheme = S.SchemeConfig.parse(scheme_text or cfg["schemes"]["scheme"], gamma)
    return M.RunConfig(
        problem=problem,
        compressor=compressor,
        scheme=scheme,
        iterations=_get(cfg, "simulation", "iterations", int),
        oracle=build_oracle(cfg),
        x0=_x0(cfg, problem.dim),
        seed=_get(cfg, "simulation", "seed", int),
        metrics_every=_get(cfg, "simulation", "metrics_every", int),
    )


def write_resolved(cfg, out_dir: Path, run_cfg: M.RunConfig):
    path = out_dir / "config.resolved.ini"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# step size resolved to {run_cfg.scheme.gamma!r}\n")
        cfg.write(fh)
    return path


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _overrides(args):
    return {k: getattr(args, k, None) for k in OVERRIDES}


def cmd_run(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    run_cfg = build_run(cfg)
    out = _out_dir(args)
    trace = M.run(run_cfg)
    trace.to_csv(out / "trace.csv")
    write_resolved(cfg, out, run_cfg)
    print(f"wrote {out / 'trace.csv'} ({len(trace)} rows, gamma = {run_cfg.scheme.gamma:.6g})")
    return 0


def cmd_compare(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    labels = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if not labels:
        raise ConfigError("--schemes needs at least one scheme")
    configs = [build_run(cfg, s) for s in labels]
    out = _out_dir(args)
    result = M.compare(configs, labels, args.tail)
    for lab, tr in zip(labels, result.traces):
        tr.to_csv(out / f"trace_{lab.replace(':', '_')}.csv")
    metrics = sorted({m for f in result.floors.values() for m in f})
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme"] + [f"floor_{m}" for m in metrics])
        for lab in labels:
            w.writerow([lab] + [M.format_value(result.floors[lab].get(m)) for m in metrics])
    write_resolved(cfg, out, configs[0])
    for (a, b), r in result.ratios.items():
        print(f"{a} / {b}: " + ", ".join(f"{m} {v:.4g}" for m, v in r.items()))
    return 0


def _bound_inputs(cfg, problem, run_cfg, eps_override):
    c = problem.constants()
    x0 = run_cfg.x0
    x_star = getattr(problem, "x_star", None)
    f_star = getattr(problem, "f_star", None)
    if eps_override is not None:
        eps = eps_override
    else:
        eps = C.eps_bound(run_cfg.compressor, problem.dim)
        if not np.isfinite(eps):
            raise ConfigError(f"compressor {run_cfg.compressor} has no global bound; pass --eps")
    sigma_sq = sigma_h_sq = 0.0
    if run_cfg.oracle is not None:
        sigma_sq, sigma_h_sq = estimate_variances(problem, run_cfg.oracle, default_probes(problem, x0))
    beta = _beta(cfg)
    return T.BoundInputs(
        mu=c.mu, L=c.L, gamma=run_cfg.scheme.gamma, eps=eps, sigma_sq=sigma_sq, sigma_H_sq=sigma_h_sq,
        beta=beta if beta is not None else 0.5,
        x0_dist=float(np.linalg.norm(x0 - x_star)) if x_star is not None else 0.0,
        f0_gap=problem.value(x0) - f_star if f_star is not None else 0.0,
        k=run_cfg.iterations,
    )


def evaluate_theorem(name, inputs, ks, beta_given):
    """Columns for one theorem on the grid ``ks``."""
    if name == "thm1":
        c = T.thm1_bound(inputs, ks)
    elif name == "thm3":
        c = T.thm3_bound(inputs, ks)
    elif name == "thm5":
        c = T.thm5_bound(inputs, ks)
    elif name == "thm6":
        c = T.thm6_bound(inputs, ks)
    elif name == "thm4":
        parts = T.thm4_bounds(inputs, ks)
        return {**{p: v.values for p, v in parts.items()}, **{f"{p}_floor": v.floor for p, v in parts.items()}}
    elif name == "thm7a":
        c = T.thm7_bounds(inputs, ks, parts=("nonconvex",))["nonconvex"]
    elif name == "thm7b":
        if not beta_given:
            raise ConfigError("thm7b needs beta (set --beta or beta in [theory])")
        c = T.thm7_bounds(inputs, ks, parts=("strongly_convex",))["strongly_convex"]
    else:
        raise ConfigError(f"unknown theorem {name!r}; expected one of {THEOREMS}")
    return {"value": c.values, "floor": c.floor}


def cmd_bounds(args):
    cfg = load_config(args.config, args.preset, _overrides(args))
    if args.beta is not None:
        cfg["theory"]["beta"] = str(args.beta)
    names = [t.strip() for t in (args.theorem or cfg["theory"]["theorems"]).split(",") if t.strip()]
    for n in names:
        if n not in THEOREMS:
            raise ConfigError(f"unknown theorem {n!r}; expected one of {THEOREMS}")
    if "thm7b" in names and _beta(cfg) is None:
        raise ConfigError("thm7b needs beta (set --beta or beta in [theory])")
    run_cfg = build_run(cfg)
    problem = run_cfg.problem
    eps = args.eps if args.eps is not None else (_get(cfg, "theory", "eps", float) if cfg["theory"]["eps"] else None)
    inputs = _bound_inputs(cfg, problem, run_cfg, eps)
    every = run_cfg.metrics_every
    ks = np.array(sorted(set(range(0, run_cfg.iterations + 1, every)) | {run_cfg.iterations}))
    out = _out_dir(args)
    for n in names:
        cols = evaluate_theorem(n, inputs, ks, _beta(cfg) is not None)
        path = out / f"bounds_{n}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + list(cols))
            for i, k in enumerate(ks):
                row = [int(k)]
                for v in cols.values():
                    row.append(M.format_value(v[i] if np.ndim(v) else v))
                w.writerow(row)
        print(f"wrote {path}")
    return 0


def cmd_verify(args):
    if args.suite != "all" and args.suite not in V.SUITES:
        print(f"error: unknown suite {args.suite!r}; expected one of {sorted(V.SUITES) + ['all']}",
              file=sys.stderr)
        return 2
    checks = V.run_suite(args.suite)
    lines = [json.dumps(c.as_dict(), sort_keys=True, default=float) for c in checks]
    for line in lines:
        print(line)
    if args.out:
        out = _out_dir(args)
        (out / f"verify_{args.suite}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0 if all(c.passed for c in checks) else 1


def _common(p):
    p.add_argument("--config", metavar="PATH", help="INI file with [problems], [compressors], ... sections")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in starting configuration")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="run seed for mini-batch sampling")
    p.add_argument("--scheme", help="direct, ec:identity, ec:scaled:A, ec:hessian, ec:diag or ec:bfgs")
    p.add_argument("--compressor", help="exact, sign, rounding:D, topk:K or epsball:E")
    p.add_argument("--gamma-rule", dest="gamma_rule",
                   help="1/L, 2/(mu+L), c/L, thm4, thm7b:B, ls-sign, robust-sign or a number")
    p.add_argument("--workers", type=int, help="number of workers")
    p.add_argument("--iters", type=int, help="number of iterations")
    p.add_argument("--batch", help="mini-batch size per worker or 'full'")


def build_parser():
    parser = argparse.ArgumentParser(prog="ecgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one configuration and write trace.csv")
    _common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="run several schemes on one problem")
    _common(p)
    p.add_argument("--schemes", default="direct,ec:identity,ec:hessian", help="comma-separated scheme list")
    p.add_argument("--tail", type=float, default=0.1, help="tail fraction for floors")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("bounds", help="evaluate theorem bounds on the run grid")
    _common(p)
    p.add_argument("--theorem", help=f"comma-separated subset of {', '.join(THEOREMS)}")
    p.add_argument("--beta", type=float, help="analysis parameter in (0, 1)")
    p.add_argument("--eps", type=float, help="compressor bound override")
    p.set_defaults(func=cmd_bounds)
    p = sub.add_parser("verify", help="run a verification suite and print JSON lines")
    p.add_argument("suite", help=f"one of {', '.join(sorted(V.SUITES))} or all")
    p.add_argument("--out", metavar="DIR", help="also write the report here")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EcgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
