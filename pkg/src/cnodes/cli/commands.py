"""Subcommand bodies.  Each takes ``(cfg, rundir)`` and returns an exit code."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from cnodes.cli.config import from_dict, to_dict
from cnodes.errors import ConfigError, NumericalError
from cnodes.solver import OdeProblem, SolverConfig, integrate

log = logging.getLogger("cnodes")


def _replicates(cfg, worker):
    """``worker(cfg_dict, seed)`` for every replicate seed, in worker processes if asked."""
    seeds = [cfg.seed + i for i in range(cfg.replicates)]
    payload = to_dict(cfg)
    if cfg.parallel > 1 and len(seeds) > 1:
        log.warning("parallel replicates: float summation order may perturb last digits")
        with ProcessPoolExecutor(max_workers=min(cfg.parallel, len(seeds))) as pool:
            return list(pool.map(worker, [payload] * len(seeds), seeds))
    return [worker(payload, s) for s in seeds]


def _with_seed(payload, seed):
    cfg = from_dict(payload)
    return cfg.with_overrides(seed=seed)


# solve ----------------------------------------------------------------------

DYNAMICS = {
    "decay": (lambda s, y: -y, [1.0]),
    "logistic": (lambda s, y: y * (1.0 - y), [0.5]),
    "oscillator": (lambda s, y: np.array([y[1], -y[0]]), [1.0, 0.0]),
}


def cmd_solve(cfg, rd):
    name = cfg.get("task", "dynamics", "decay")
    t = cfg.get("task", "t", 1.0)
    f, y0 = DYNAMICS[name]
    solver = cfg.solver_config(SolverConfig(rtol=1e-7, atol=1e-9))
    y, stats = integrate(OdeProblem(f, (0.0, t), np.array(y0)), solver)
    print(" ".join(f"{v:.6f}" for v in y))
    rd.add_stats("forward", stats)
    for i, v in enumerate(y):
        rd.metric(f"y{i}", float(v))
    rd.metric("nfe", stats.nfe)
    rd.csv("solution.csv", ["dynamics", "t", "component", "value"], [(name, t, i, v) for i, v in enumerate(y)])
    return 0


# gradcheck ------------------------------------------------------------------

def cmd_gradcheck(cfg, rd):
    from cnodes.diffcore.gradcheck import gradcheck_all

    instances = cfg.get("task", "size", 100)
    errs = gradcheck_all(instances=instances, seed=cfg.seed)
    width = max(len(k) for k in errs)
    print(f"{'primitive':<{width}}  max_rel_err")
    for name, err in errs.items():
        print(f"{name:<{width}}  {err:.3e}")
        rd.metric(f"max_rel_err_{name}", err)
    worst = max(errs.values())
    rd.metric("max_rel_err", worst)
    rd.csv("gradcheck.csv", ["primitive", "max_rel_err"], list(errs.items()))
    ok = worst < 1e-5
    print("all primitives within 1e-5" if ok else "gradient check FAILED")
    return 0 if ok else 2


# demo-burgers ---------------------------------------------------------------

PROFILES = {
    "linear": lambda x: 1.0 - x,
    "identity": lambda x: x,
    "sine": lambda x: -math.sin(math.pi * x),
}


def cmd_demo_burgers(cfg, rd):
    from cnodes.tasks.burgers import (
        BurgersDemo,
        breaking_time,
        burgers_characteristics,
        first_crossing,
        moc_integrate,
        trajectory_rows,
    )

    name = cfg.get("task", "profile", "linear")
    size = cfg.get("task", "size", 9)
    demo = BurgersDemo(PROFILES[name], tuple(np.linspace(-1.0, 1.0, size)), cfg.get("task", "t", 1.0))
    chars = burgers_characteristics(demo)
    xT, uT = moc_integrate(demo, solver=cfg.solver_config(SolverConfig(rtol=1e-12, atol=1e-12)))
    closed = np.array([c.x[-1] for c in chars])
    rd.csv("characteristics.csv", ["curve", "x0", "u", "s", "x"], trajectory_rows(chars))
    rd.metric("moc_max_error", float(np.max(np.abs(xT - closed))))
    fc = first_crossing(chars)
    bt = breaking_time(demo.f, demo.x0)
    rd.metric("first_crossing_s", fc if fc is not None else "none")
    rd.metric("breaking_time", bt if bt is not None else "none")
    return 0


# demo-intersect ------------------------------------------------------------

def _intersect_trajectories(solver, points=41):
    from cnodes.model.constructions import intersecting_model

    model = intersecting_model()
    f = model.dynamics()
    rows, finals = [], {}
    grid = np.linspace(0.0, 1.0, points)
    for u0 in (0.0, 1.0):
        y = np.array([[0.0, 0.0, u0]])
        cond = np.array([[u0]])
        rows.append((u0, 0.0, *y[0]))
        for a, b in zip(grid[:-1], grid[1:]):
            y, _ = integrate(OdeProblem(lambda s, v: f(s, v, (np.zeros(0), cond)), (a, b), y), solver)
            rows.append((u0, b, *y[0]))
        finals[u0] = float(y[0, -1])
    return rows, finals


def _intersect_worker(payload, seed):
    from cnodes.tasks.toy import TOY_TRAIN, fit_two_point

    cfg = _with_seed(payload, seed)
    tc = cfg.train_config(TOY_TRAIN, cfg.solver_config(TOY_TRAIN.solver))
    hidden = cfg.get("model", "hidden", (16,))[0]
    out = {}
    for kind in ("cnode", "node"):
        kw = {"hidden": hidden}
        if kind == "cnode":
            kw.update(k=cfg.get("model", "k", 2), balance_mode=cfg.get("model", "balance_mode", "u_only"))
        _, _, hist, err = fit_two_point(kind, tc, **kw)
        out[kind] = (err, hist[-1]["nfe_forward"], hist[-1]["nfe_adjoint"])
    return seed, out


def cmd_demo_intersect(cfg, rd):
    solver = cfg.solver_config(SolverConfig("euler", h=1 / 40))
    rows, finals = _intersect_trajectories(solver)
    rd.csv("trajectories.csv", ["u0", "s", "x", "t", "u"], rows)
    rd.metric("u_T_from_0", finals[0.0])
    rd.metric("u_T_from_1", finals[1.0])
    print(f"u0=0 -> {finals[0.0]:.6f}; u0=1 -> {finals[1.0]:.6f}")
    if cfg.get("task", "trained", True):
        for seed, out in _replicates(cfg, _intersect_worker):
            for kind, (err, nf, na) in out.items():
                rd.metric(f"{kind}_mse_seed{seed}", err)
                rd.metric(f"{kind}_nfe_forward_seed{seed}", nf)
                rd.metric(f"{kind}_nfe_adjoint_seed{seed}", na)
    return 0


# pde-fit ------------------------------------------------------------------

def _pde_worker(payload, seed):
    from cnodes.tasks.data import gen_pde_dataset
    from cnodes.tasks.pde import PdeFitConfig, node_pde_baseline, pde_fit

    cfg = _with_seed(payload, seed)
    base = PdeFitConfig()
    pc = PdeFitConfig(train=cfg.train_config(base.train, cfg.solver_config(base.train.solver)))
    task = gen_pde_dataset(cfg.get("task", "n_train", 200), cfg.get("task", "n_test", 200), seed)
    return seed, task, pde_fit(task, config=pc), node_pde_baseline(task, config=pc)


def _history_rows(hist, keys=("epoch", "loss", "metric", "nfe_forward", "nfe_adjoint")):
    return [tuple(h[k] for k in keys) for h in hist]


def cmd_pde_fit(cfg, rd):
    from cnodes.tasks.data import pde_rows
    from cnodes.tasks.pde import PdeNets

    if cfg.get("model", "k", 2) != 2:
        raise ConfigError("pde-fit characteristics live in the (x, t) plane; model.k must be 2")
    results = _replicates(cfg, _pde_worker)
    for i, (seed, task, cn, nd) in enumerate(results):
        if i == 0:
            rd.csv("train.csv", ["x", "t", "u"], pde_rows(task.train_xt, task.train_u))
            rd.csv("test.csv", ["x", "t", "u"], pde_rows(task.test_xt, task.test_u))
            rd.csv("history_cnode.csv", ["epoch", "loss", "metric", "nfe_forward", "nfe_adjoint"],
                   _history_rows(cn.history))
            rd.csv("history_node.csv", ["epoch", "loss", "metric", "nfe_forward", "nfe_adjoint"],
                   _history_rows(nd.history))
            rd.save(cn.params, repr(PdeNets()))
        for kind, res in (("cnode", cn), ("node", nd)):
            rd.metric(f"{kind}_test_deviation_pct_seed{seed}", res.test_deviation)
            rd.metric(f"{kind}_train_deviation_pct_seed{seed}", res.train_deviation)
            rd.metric(f"{kind}_params", res.n_params)
            rd.add_stats(f"{kind}_forward", res.nfe.get("forward", {}))
            rd.add_stats(f"{kind}_adjoint", res.nfe.get("adjoint", {}))
        rd.metric(f"cnode_fixed_point_max_iterations_seed{seed}", cn.max_iterations)
        rd.metric(f"cnode_flagged_seed{seed}", cn.flagged)
        print(f"seed {seed}: C-NODE {cn.test_deviation:.2f}%  NODE {nd.test_deviation:.2f}%")
    return 0


# timeseries ---------------------------------------------------------------

def _ts_worker(payload, seed):
    from cnodes.tasks.data import gen_timeseries
    from cnodes.tasks.timeseries import TimeSeriesConfig, timeseries_eval

    cfg = _with_seed(payload, seed)
    base = TimeSeriesConfig()
    hidden = cfg.get("model", "hidden", None)
    tsc = TimeSeriesConfig(
        k=cfg.get("model", "k", base.k),
        a_hidden=hidden or base.a_hidden,
        jac_hidden=hidden or base.jac_hidden,
        train=cfg.train_config(base.train, cfg.solver_config(base.train.solver)),
    )
    task = gen_timeseries(cfg.get("task", "n_train", 200), cfg.get("task", "n_test", 200),
                          cfg.get("task", "noise", 0.1), seed)
    return seed, {kind: timeseries_eval(kind, task, tsc) for kind in ("node", "cnode")}


def cmd_timeseries(cfg, rd):
    rows = []
    for seed, res in _replicates(cfg, _ts_worker):
        for kind, r in res.items():
            rd.metric(f"{kind}_params", r.n_params)
            rd.metric(f"{kind}_final_train_mse_seed{seed}", r.history[-1]["loss"] if r.history else float("nan"))
            if r.history:
                rd.metric(f"{kind}_nfe_forward_seed{seed}", r.history[-1]["nfe_forward"])
                rd.metric(f"{kind}_nfe_adjoint_seed{seed}", r.history[-1]["nfe_adjoint"])
            for (lo, hi), dev in r.deviations.items():
                rows.append((seed, kind, lo, hi, dev))
                rd.metric(f"{kind}_deviation_pct_{lo}_{hi}_seed{seed}", dev)
        line = "  ".join(f"[{lo},{hi}] {res['node'].deviations[(lo, hi)]:.1f}/{res['cnode'].deviations[(lo, hi)]:.1f}"
                         for lo, hi in res["node"].deviations)
        print(f"seed {seed} NODE/C-NODE %: {line}")
    rd.csv("windows.csv", ["seed", "model", "window_lo", "window_hi", "deviation_pct"], rows)
    return 0


# toy-classify ------------------------------------------------------------

def _toy_worker(payload, seed):
    from cnodes.model.train import TrainConfig
    from cnodes.tasks.toy import fit_annuli

    cfg = _with_seed(payload, seed)
    base = TrainConfig(epochs=30, batch_size=50, loss="cross_entropy", solver=SolverConfig(rtol=1e-4, atol=1e-6))
    tc = cfg.train_config(base, cfg.solver_config(base.solver))
    hidden = cfg.get("model", "hidden", (16,))[0]
    out = {}
    for kind in ("cnode", "node"):
        _, _, hist, task = fit_annuli(kind, cfg.get("task", "size", 400), seed, tc, hidden, cfg.get("model", "k", 2))
        out[kind] = hist
    return seed, task, out


def cmd_toy_classify(cfg, rd):
    from cnodes.tasks.data import toy_rows

    for i, (seed, task, out) in enumerate(_replicates(cfg, _toy_worker)):
        if i == 0:
            rd.csv("data.csv", ["v1", "v2", "label"], toy_rows(task))
        for kind, hist in out.items():
            last = hist[-1]
            rd.metric(f"{kind}_accuracy_seed{seed}", last["metric"])
            rd.metric(f"{kind}_loss_seed{seed}", last["loss"])
            rd.metric(f"{kind}_nfe_forward_seed{seed}", last["nfe_forward"])
            rd.metric(f"{kind}_nfe_adjoint_seed{seed}", last["nfe_adjoint"])
            if i == 0:
                rd.csv(f"history_{kind}.csv", ["epoch", "loss", "accuracy", "nfe_forward", "nfe_adjoint"],
                       _history_rows(hist))
        print(f"seed {seed}: accuracy C-NODE {out['cnode'][-1]['metric']:.3f}  NODE {out['node'][-1]['metric']:.3f}")
    return 0


# cnf2d --------------------------------------------------------------------

def cnf_model(k=2, hidden=32, balance_mode="full"):
    from cnodes.diffcore.mlp import MlpSpec
    from cnodes.model.field import CharacteristicField
    from cnodes.model.model import CnodeModel

    j_in = 2 if balance_mode == "u_only" else 2 + k
    fld = CharacteristicField(k, 2, MlpSpec((k, hidden, k)), MlpSpec((j_in, hidden, hidden, 2 * k)),
                              balance_mode, a_inputs=("x",))
    return CnodeModel(fld)


def cmd_cnf2d(cfg, rd):
    from cnodes.density import TraceEstimator, bits_per_dim, gaussian_nll, log_prob, pull_back, sample, train_cnf
    from cnodes.diffcore.optim import AdamConfig
    from cnodes.model.train import TrainConfig
    from cnodes.tasks.data import gen_toy2d

    task = gen_toy2d("gaussian_mixture_density", size=cfg.get("task", "size", 512), seed=cfg.seed)
    hidden = cfg.get("model", "hidden", (32,))[0]
    model = cnf_model(cfg.get("model", "k", 2), hidden, cfg.get("model", "balance_mode", "full"))
    params = model.init_params(cfg.seed)
    base = TrainConfig(epochs=20, batch_size=128, adam=AdamConfig(lr=1e-2), solver=SolverConfig(rtol=1e-4, atol=1e-6))
    tc = cfg.train_config(base, cfg.solver_config(base.solver))
    est = TraceEstimator(cfg.get("task", "trace", "hutchinson"), cfg.get("task", "probes", 1), seed=cfg.seed)
    params, hist = train_cnf(model, params, task.inputs, tc, est)
    rd.csv("nll_history.csv", ["epoch", "mean_nll_nats", "nfe_forward", "nfe_adjoint"],
           [(h["epoch"], h["mean_nll_nats"], h["nfe_forward"], h["nfe_adjoint"]) for h in hist])
    eval_solver = SolverConfig(rtol=1e-6, atol=1e-8)
    lp = log_prob(model, params, task.inputs, eval_solver)
    if not np.all(np.isfinite(lp)):
        raise NumericalError("non-finite log-likelihood after training")
    nll = float(-np.mean(lp))
    rd.metric("nll_nats", nll)
    rd.metric("bits_per_dim", bits_per_dim(nll, 2))
    rd.metric("single_gaussian_nll_nats", gaussian_nll(task.inputs))
    draws = sample(model, params, 200, eval_solver, seed=cfg.seed)
    rd.csv("samples.csv", ["v1", "v2"], [tuple(r) for r in draws])
    tight = SolverConfig(rtol=1e-10, atol=1e-12)
    w = np.random.default_rng(cfg.seed).standard_normal((200, 2))
    back = pull_back(model, params, sample(model, params, 200, tight, seed=cfg.seed), tight)
    rd.metric("invertibility_max_error", float(np.max(np.abs(back - w))))
    if hist:
        rd.metric("nfe_forward", hist[-1]["nfe_forward"])
        rd.metric("nfe_adjoint", hist[-1]["nfe_adjoint"])
    rd.save(params, model.describe())
    print(f"NLL {nll:.4f} nats (single Gaussian {gaussian_nll(task.inputs):.4f})")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "gradcheck": cmd_gradcheck,
    "demo-burgers": cmd_demo_burgers,
    "demo-intersect": cmd_demo_intersect,
    "pde-fit": cmd_pde_fit,
    "timeseries": cmd_timeseries,
    "toy-classify": cmd_toy_classify,
    "cnf2d": cmd_cnf2d,
}
