"""Verification suites: convergence identities, bound conformance and oracles.

Each suite returns a list of :class:`Check` records.  The CLI prints them as
JSON lines; the test-suite asserts on them.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import compressors as C
from . import data_io as D
from . import schemes as S
from . import simulation as M
from . import theory as T
from .errors import ConfigError, LibsvmParseError
from .problems import ErmProblem, OracleConfig, QuadraticProblem, default_probes, estimate_variances


@dataclass
class Check:
    suite: str
    check: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: str = ""
    seconds: float = 0.0
    info: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        for k in ("value", "threshold"):
            v = d[k]
            if v is not None and not math.isfinite(v):
                d[k] = str(v)
        return d


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# shared fixtures ----------------------------------------------------------

def quadratic_family(count: int = 100, max_dim: int = 50, seed: int = 2024):
    """Random SPD quadratics with dimensions in [2, max_dim] and kappa in [1, 1e3]."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(count):
        d = int(rng.integers(2, max_dim + 1))
        kappa = float(10 ** rng.uniform(0.0, 3.0))
        H, b = D.synth_quadratic(d, kappa, seed=seed + j)
        x0 = rng.standard_normal(d) * 3.0
        out.append((QuadraticProblem(H, b), x0))
    return out


def family_compressors(dim: int):
    return [
        C.CompressorSpec("exact"),
        C.CompressorSpec("rounding", delta=0.5),
        C.CompressorSpec("sign"),
        C.CompressorSpec("topk", k=max(1, dim // 4)),
        C.CompressorSpec("epsball", eps=0.1),
    ]


def quadratic_steps(problem):
    return {"1/L": 1.0 / problem.L, "2/(mu+L)": 2.0 / (problem.mu + problem.L)}


def _trajectory(problem, compressor, scheme, x0, iters):
    """Iterates, errors and the largest compressor input of a single-worker run."""
    workers = S.init_workers(1, problem.dim)
    xs = np.empty((iters + 1, problem.dim))
    es = np.empty((iters + 1, problem.dim))
    x = np.array(x0, dtype=float)
    xs[0], es[0] = x, 0.0
    cap = 0.0
    for k in range(iters):
        rep = S.step(x, workers, problem, compressor, scheme, None, k, 1)
        x = rep.x_next
        cap = max(cap, rep.input_inf)
        xs[k + 1], es[k + 1] = x, workers[0].error
    return xs, es, cap


# criterion suites -----------------------------------------------------------

def suite_quadratic_identity(count=100, iters=200):
    """EC with Hessian weighting: x^k - x* = (I - gamma H)^k (x^0 - x*) + gamma e^k."""
    name = "quadratic-identity"
    worst = 0.0
    failures = 0
    runs = 0
    with _Timer() as t:
        for problem, x0 in quadratic_family(count):
            z0 = x0 - problem.x_star
            tol = 1e-9 * (1.0 + np.linalg.norm(z0))
            for comp in family_compressors(problem.dim):
                for gamma in quadratic_steps(problem).values():
                    xs, es, _ = _trajectory(problem, comp, S.SchemeConfig("ec", "hessian", gamma=gamma), x0, iters)
                    res = S.accumulation_diagnostic(xs, es, problem, gamma, "hessian")
                    r = float(np.max(np.linalg.norm(res, axis=1)))
                    worst = max(worst, r / tol)
                    failures += r > tol
                    runs += 1
    return [
        Check(name, "identity residual / tolerance", failures == 0, worst, 1.0,
              f"{runs} runs, {failures} violations", t.seconds),
        Check(name, "runtime seconds", t.seconds < 30.0, t.seconds, 30.0, "", t.seconds),
    ]


def suite_quadratic_bounds(count=100, iters=200):
    """Direct runs under the eps/mu bound, Hessian-EC runs under the gamma*eps bound."""
    name = "quadratic-bounds"
    worst = {"direct": -math.inf, "ec:hessian": -math.inf}
    fails = {"direct": 0, "ec:hessian": 0}
    with _Timer() as t:
        for problem, x0 in quadratic_family(count):
            d0 = float(np.linalg.norm(x0 - problem.x_star))
            for comp in family_compressors(problem.dim):
                for gamma in quadratic_steps(problem).values():
                    for label, sch in (("direct", S.SchemeConfig("direct", gamma=gamma)),
                                       ("ec:hessian", S.SchemeConfig("ec", "hessian", gamma=gamma))):
                        xs, _, cap = _trajectory(problem, comp, sch, x0, iters)
                        eps = C.eps_bound(comp, problem.dim, cap)
                        inp = T.BoundInputs(problem.mu, problem.L, gamma, eps=eps, x0_dist=d0, k=iters)
                        curve = T.thm1_bound(inp) if label == "direct" else T.thm5_bound(inp)
                        excess = float(np.max(np.linalg.norm(xs - problem.x_star, axis=1) - curve.values))
                        worst[label] = max(worst[label], excess)
                        fails[label] += excess > 1e-9
    out = [
        Check(name, f"{lab} max excess over bound", fails[lab] == 0, worst[lab], 1e-9,
              f"{fails[lab]} violating runs", t.seconds)
        for lab in worst
    ]
    out.append(Check(name, "runtime seconds", t.seconds < 30.0, t.seconds, 30.0, "", t.seconds))
    return out


def suite_lower_bound(iters=100):
    """Scalar worst case: simulated |x^k| equals the closed form and never beats eps/mu."""
    name = "lower-bound"
    worst_match = 0.0
    worst_floor = math.inf
    with _Timer() as t:
        for mu in (0.5, 1.0, 2.0):
            problem = QuadraticProblem([[mu]], [0.0])
            for c in (0.25, 0.5, 0.75, 1.0):
                gamma = c / mu
                for eps in (0.1, 0.5):
                    x0 = 2.0 + eps
                    xs, _, _ = _trajectory(problem, C.CompressorSpec("epsball", eps=eps),
                                           S.SchemeConfig("direct", gamma=gamma), [x0], iters)
                    sim = np.abs(xs[:, 0])
                    ref = T.example3_trajectory(mu, gamma, eps, x0, np.arange(iters + 1))
                    worst_match = max(worst_match, float(np.max(np.abs(sim - ref.value))))
                    worst_floor = min(worst_floor, float(np.min(sim - ref.dist_floor)))
    return [
        Check(name, "max |simulated - closed form|", worst_match <= 1e-12, worst_match, 1e-12, "", t.seconds),
        Check(name, "min (|x^k| - eps/mu)", worst_floor >= -1e-12, worst_floor, -1e-12, "", t.seconds),
    ]


def floor_ratio_instance(d=20, kappa=1e3, seed=0):
    H, b = D.synth_quadratic(d, kappa, seed)
    return QuadraticProblem(H, b)


def floor_ratio(problem, iters, eps=0.1, tail=0.1):
    comp = C.CompressorSpec("epsball", eps=eps)
    gamma = 1.0 / problem.L
    cfgs = [M.RunConfig(problem, comp, S.SchemeConfig("direct", gamma=gamma), iters),
            M.RunConfig(problem, comp, S.SchemeConfig("ec", "hessian", gamma=gamma), iters)]
    cmp = M.compare(cfgs, ["direct", "ec:hessian"], tail, metrics=("dist",))
    return cmp.floors["direct"]["dist"], cmp.floors["ec:hessian"]["dist"]


def suite_floor_ratio(iters=5000):
    """kappa = 1e3, eps-ball, gamma = 1/L: direct floor over Hessian-EC floor."""
    name = "floor-ratio"
    problem = floor_ratio_instance()
    with _Timer() as t:
        fd, fe = floor_ratio(problem, iters)
    ratio = fd / fe
    target = problem.kappa / 2
    return [
        Check(name, f"floor ratio after {iters} iterations", ratio >= target, ratio, target,
              f"direct {fd:.6g}, ec:hessian {fe:.6g}", t.seconds),
        Check(name, "runtime seconds", t.seconds < 10.0, t.seconds, 10.0, "", t.seconds),
    ]


def accumulation_instance():
    return QuadraticProblem([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0])


def suite_accumulation(iters=500):
    """Hessian weighting leaves no accumulated error; identity weighting does."""
    name = "accumulation"
    problem = accumulation_instance()
    gamma = 1.0 / problem.L
    x0 = np.array([3.0, -2.0])
    comp = C.CompressorSpec("rounding", delta=1.0)
    out = []
    with _Timer() as t:
        xs, es, _ = _trajectory(problem, comp, S.SchemeConfig("ec", "hessian", gamma=gamma), x0, iters)
        h = float(np.max(np.linalg.norm(S.accumulation_diagnostic(xs, es, problem, gamma, "hessian"), axis=1)))
        xs, es, _ = _trajectory(problem, comp, S.SchemeConfig("ec", "identity", gamma=gamma), x0, iters)
        i = float(np.max(np.linalg.norm(S.accumulation_diagnostic(xs, es, problem, gamma, "identity"), axis=1)))
    out.append(Check(name, "hessian weighting max residual", h <= 1e-9, h, 1e-9, "", t.seconds))
    out.append(Check(name, "identity weighting max accumulated term", i > 1e-6, i, 1e-6, "", t.seconds))
    return out


def distributed_ls_instance(n_samples=500, d=10, workers=5, seed=7):
    Z, y, _ = D.synth_least_squares(n_samples, d, noise=0.1, seed=seed)
    return D.build_erm(Z, y, workers, "least-squares")


def suite_distributed_deterministic(iters=300):
    """Five workers, exact local gradients, gamma = 2/(mu+L)."""
    name = "distributed-deterministic"
    problem = distributed_ls_instance()
    c = problem.constants()
    gamma = 2.0 / (c.mu + c.L)
    x0 = np.zeros(problem.dim)
    d0 = float(np.linalg.norm(x0 - problem.x_star))
    out = []
    with _Timer() as t:
        worst = {"direct": -math.inf, "ec:hessian": -math.inf}
        for comp in (C.CompressorSpec("rounding", delta=0.05), C.CompressorSpec("epsball", eps=0.01),
                     C.CompressorSpec("sign"), C.CompressorSpec("topk", k=3)):
            for label, sch in (("direct", S.SchemeConfig("direct", gamma=gamma)),
                               ("ec:hessian", S.SchemeConfig("ec", "hessian", gamma=gamma))):
                tr = M.run(M.RunConfig(problem, comp, sch, iters, x0=x0))
                eps = C.eps_bound(comp, problem.dim, tr.max_input_inf)
                inp = T.BoundInputs(c.mu, c.L, gamma, eps=eps, x0_dist=d0, k=iters)
                curve = T.thm3_bound(inp) if label == "direct" else T.thm6_bound(inp)
                worst[label] = max(worst[label], float(np.max(tr.column("dist") - curve.values)))
    for lab, w in worst.items():
        out.append(Check(name, f"{lab} max excess over bound", w <= 1e-9, w, 1e-9, "", t.seconds))
    return out


def stochastic_instance(n_samples=1000, d=20, workers=5, seed=11):
    Z, y, _ = D.synth_least_squares(n_samples, d, noise=0.1, seed=seed)
    return D.build_erm(Z, y, workers, "least-squares")


def suite_stochastic_bounds(seeds=20, iters=400, beta=0.5):
    """Mini-batch runs averaged over seeds stay below the in-expectation bounds."""
    name = "stochastic-bounds"
    problem = stochastic_instance()
    c = problem.constants()
    batch = problem.shard_size(0) // 10
    oracle = OracleConfig(batch_size=batch)
    gamma = 1.0 / (12.0 * c.L)
    comp = C.CompressorSpec("rounding", delta=0.01)
    eps = C.eps_bound(comp, problem.dim)
    x0 = np.zeros(problem.dim)
    out = []
    with _Timer() as t:
        sigma_sq, sigma_h_sq = estimate_variances(problem, oracle, default_probes(problem, x0), draws=50)
        inp = T.BoundInputs(c.mu, c.L, gamma, eps=eps, sigma_sq=sigma_sq, sigma_H_sq=sigma_h_sq, beta=beta,
                            x0_dist=float(np.linalg.norm(x0 - problem.x_star)),
                            f0_gap=problem.value(x0) - problem.f_star, k=iters)
        bounds = {"direct": T.thm4_bounds(inp), "ec:hessian": T.thm7_bounds(inp)}
        for label, sch in (("direct", S.SchemeConfig("direct", gamma=gamma)),
                           ("ec:hessian", S.SchemeConfig("ec", "hessian", gamma=gamma))):
            ming = np.zeros(iters + 1)
            avg = np.zeros(iters + 1)
            for s in range(seeds):
                tr = M.run(M.RunConfig(problem, comp, sch, iters, oracle=oracle, x0=x0, seed=s))
                ming += tr.column("mingradsq")
                avg += tr.column("avg_gap")
            ming /= seeds
            avg /= seeds
            for metric, vals, part in (("mean min grad^2", ming, "nonconvex"),
                                       ("mean averaged-iterate gap", avg, "strongly_convex")):
                curve = bounds[label][part]
                excess = float(np.max(vals - curve.values))
                out.append(Check(name, f"{label} {metric}", excess <= 0.0, excess, 0.0,
                                 f"final {vals[-1]:.4g} vs bound {curve.values[-1]:.4g}", 0.0,
                                 {"sigma_sq": sigma_sq, "sigma_H_sq": sigma_h_sq}))
    for ch in out:
        ch.seconds = t.seconds
    out.append(Check(name, "runtime seconds", t.seconds < 120.0, t.seconds, 120.0, "", t.seconds))
    return out


def experiment_ls_instance():
    Z, y, _ = D.synth_least_squares(4000, 400, noise=0.1, seed=0)
    return D.build_erm(Z, y, 5, "least-squares")


def experiment_robust_instance():
    Z, y, _ = D.synth_least_squares(4000, 400, noise=0.1, seed=0, signal=0.2)
    return D.build_erm(Z, y, 5, "robust")


def _scheme_runs(problem, gamma, schemes, iters):
    comp = C.CompressorSpec("sign")
    out = {}
    for s in schemes:
        out[s] = M.run(M.RunConfig(problem, comp, S.SchemeConfig.parse(s, gamma), iters, metrics_every=10))
    return out


def suite_experiment_shape(iters=2000):
    """Sign compression, five workers, exact local gradients."""
    name = "experiment-shape"
    out = []
    with _Timer() as t:
        problem = experiment_ls_instance()
        gamma = T.validate_step("ls-sign", problem.constants())
        runs = _scheme_runs(problem, gamma, ("direct", "ec:hessian", "ec:diag"), iters)
        gap = {s: tr.column("gap")[-1] for s, tr in runs.items()}
    out.append(Check(name, "ls gap ec:hessian / direct", gap["ec:hessian"] <= 0.1 * gap["direct"],
                     gap["ec:hessian"] / gap["direct"], 0.1, "", t.seconds, gap))
    out.append(Check(name, "ls gap ec:diag / direct", gap["ec:diag"] <= gap["direct"],
                     gap["ec:diag"] / gap["direct"], 1.0, "", t.seconds))
    out.append(Check(name, "ls runtime seconds", t.seconds < 120.0, t.seconds, 120.0, "", t.seconds))
    with _Timer() as t:
        problem = experiment_robust_instance()
        gamma = T.validate_step("robust-sign", problem.constants())
        runs = _scheme_runs(problem, gamma, ("direct", "ec:identity", "ec:hessian"), iters)
        fl = {s: M.empirical_floor(tr, 0.1, "mingradsq") for s, tr in runs.items()}
        start = runs["direct"].column("gradsq")[0]
    out.append(Check(name, "robust min-grad floor ec:hessian / ec:identity",
                     fl["ec:hessian"] <= 1.05 * fl["ec:identity"], fl["ec:hessian"] / fl["ec:identity"], 1.05,
                     f"initial grad^2 {start:.4g}", t.seconds, fl))
    out.append(Check(name, "robust min-grad floor ec:identity / direct",
                     fl["ec:identity"] <= 1.05 * fl["direct"], fl["ec:identity"] / fl["direct"], 1.05,
                     "", t.seconds))
    out.append(Check(name, "robust runtime seconds", t.seconds < 120.0, t.seconds, 120.0, "", t.seconds))
    return out


def _fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _fd_hess(grad, x, h=1e-6):
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def random_erm(rng, loss, n_workers=None, m=None, d=None, lam=None):
    n_workers = n_workers or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 6))
    lam = float(rng.uniform(0.0, 0.5)) if lam is None else lam
    shards = []
    for _ in range(n_workers):
        mi = m or int(rng.integers(1, 8))
        Z = rng.standard_normal((mi, d))
        y = rng.choice([-1.0, 1.0], mi) if loss == "logistic" else rng.standard_normal(mi)
        shards.append((Z, y))
    return ErmProblem(shards, loss, lam)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def suite_oracles(draws=100_000):
    name = "oracles"
    rng = np.random.default_rng(99)
    g_err = h_err = 0.0
    with _Timer() as t:
        for j in range(100):
            loss = ("least-squares", "logistic", "robust")[j % 3]
            p = random_erm(rng, loss)
            x = rng.standard_normal(p.dim)
            g_err = max(g_err, _rel(p.grad(x), _fd_grad(p.value, x)))
            h_err = max(h_err, _rel(p.hessian(x), _fd_hess(p.grad, x)))
    out = [
        Check(name, "gradient vs central differences", g_err <= 1e-6, g_err, 1e-6, "100 problems", t.seconds),
        Check(name, "hessian vs differenced gradient", h_err <= 1e-5, h_err, 1e-5, "100 problems", t.seconds),
    ]

    with _Timer() as t:
        p = random_erm(np.random.default_rng(5), "logistic", n_workers=1, m=20, d=3, lam=0.1)
        x = np.array([0.3, -0.2, 0.5])
        oracle = OracleConfig(batch_size=1)
        samples = np.array([p.stochastic_grad(0, x, oracle, k) for k in range(draws)])
        se = samples.std(axis=0, ddof=1) / math.sqrt(draws)
        z = float(np.max(np.abs(samples.mean(axis=0) - p.grad(x)) / se))
    out.append(Check(name, "stochastic gradient bias in standard errors", z <= 3.0, z, 3.0,
                     f"{draws} draws", t.seconds))

    with _Timer() as t:
        problem = distributed_ls_instance()
        oracle = OracleConfig(batch_size=10)
        gamma = 0.5 / problem.constants().L
        exact = C.CompressorSpec("exact")
        traces = {}
        for s in ("direct", "ec:identity", "ec:scaled:0.5", "ec:hessian", "ec:diag", "ec:bfgs"):
            cfg = M.RunConfig(problem, exact, S.SchemeConfig.parse(s, gamma), 100, oracle=oracle,
                              seed=3, keep_history=True)
            traces[s] = M.run(cfg).xs
        ref = traces["direct"]
        same = all(np.array_equal(ref, xs) for xs in traces.values())
    out.append(Check(name, "exact compressor: all schemes bit-identical", same, None, None,
                     ", ".join(traces), t.seconds))
    return out


# each entry: line, expected record (label, features) or the error substring
LIBSVM_FIXTURES = [
    ("+1 1:0.5 3:-2", (1.0, ((1, 0.5), (3, -2.0)))),
    ("-1", (-1.0, ())),
    ("1 2:1 1:1", "non-increasing index"),
    ("0 1:1e-3 10:2.5E2  # trailing comment", (0.0, ((1, 1e-3), (10, 250.0)))),
    ("   ", None),
    ("# whole-line comment", None),
    ("1 0:1", "index must be positive"),
    ("1 1:nan", "non-finite value"),
    ("1 a:1", "malformed index"),
    ("1 1:", "malformed token"),
    ("x 1:1", "malformed label"),
    ("2.5\t4:-0.25\t7:1", (2.5, ((4, -0.25), (7, 1.0)))),
]


def check_libsvm_fixture(line, expected):
    """True when ``line`` parses to, or fails with, the expected outcome."""
    try:
        recs = D.parse_libsvm(line)
    except LibsvmParseError as exc:
        return isinstance(expected, str) and expected in str(exc) and str(exc).startswith("line 1:")
    if expected is None:
        return recs == []
    if isinstance(expected, str) or len(recs) != 1:
        return False
    return recs[0] == D.LibsvmRecord(expected[0], expected[1])


def suite_libsvm():
    name = "libsvm"
    with _Timer() as t:
        results = [check_libsvm_fixture(line, exp) for line, exp in LIBSVM_FIXTURES]
        text = "\n".join(line for line, exp in LIBSVM_FIXTURES if not isinstance(exp, str))
        recs = D.parse_libsvm(text)
        round_trip = D.parse_libsvm(D.format_libsvm(recs)) == recs
        rng = np.random.default_rng(1)
        many = [D.LibsvmRecord(float(rng.choice([-1, 1])),
                               tuple((i + 1, float(v)) for i, v in enumerate(rng.standard_normal(4))))
                for _ in range(23)]
        determ = True
        for policy in D.SHARD_POLICIES:
            a = D.shard(D.normalize_samples(many), 5, policy)
            b = D.shard(D.normalize_samples(many), 5, policy)
            sizes = [len(s) for s in a]
            flat = sorted((r for s in a for r in s), key=lambda r: D.normalize_samples(many).index(r))
            determ &= a == b and max(sizes) - min(sizes) <= 1 and flat == D.normalize_samples(many)
    return [
        Check(name, "fixture lines", all(results), sum(results), len(results),
              f"failed: {[i for i, ok in enumerate(results) if not ok]}", t.seconds),
        Check(name, "format/parse round trip", round_trip, None, None, "", t.seconds),
        Check(name, "normalize + shard determinism and partition", determ, None, None, "", t.seconds),
    ]


SUITES = {
    "quadratic-identity": suite_quadratic_identity,
    "quadratic-bounds": suite_quadratic_bounds,
    "lower-bound": suite_lower_bound,
    "floor-ratio": suite_floor_ratio,
    "accumulation": suite_accumulation,
    "distributed-deterministic": suite_distributed_deterministic,
    "stochastic-bounds": suite_stochastic_bounds,
    "experiment-shape": suite_experiment_shape,
    "oracles": suite_oracles,
    "libsvm": suite_libsvm,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn()]
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; expected one of {sorted(SUITES) + ['all']}")
    return SUITES[name]()
