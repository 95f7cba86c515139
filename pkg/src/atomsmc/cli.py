"""Command-line harness.

Subcommands: sample, sample-path, tune, smc, diagnose, tours,
bench-factory, reproduce.  Every stochastic subcommand requires --seed;
outputs are JSON Lines (per-record streams), CSV (summary tables) or a
single JSON document (reports), each opening with a self-describing
header carrying the config hash and seed.  Records are reproducible
byte-for-byte given argv, except for wall_time fields.

Exit codes: 0 success, 2 configuration error, 3 particle death,
4 budget exceeded, 5 diagnostic failure.
"""

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__
from .atomext import extend_model, perfect_sample_path, tune_psi
from .diagnostics import DiagnosticOutcome, estimate_p_lower, run_beta_diagnostic
from .errors import (
    BudgetExceededError,
    ConfigurationError,
    DiagnosticFailureError,
    ParticleDeathError,
)
from .factory import CoinSource, FactoryConfig, flip_eps_over_p_coin
from .models import (
    AbsorbingMediumModel,
    FiniteChainKernel,
    LinearGaussianModel,
    PmmhSettings,
    SensorHmmModel,
    absorbing_A_bound,
    build_atomized_pmmh,
    kalman_filter,
    sensor_A_bound,
)
from .regen import SampleCost, perfect_sample_imputation, perfect_sample_multigamma
from .smc import estimate_log_nc, estimate_pi_f, run_smc
from .streams import stream, substream
from .tours import max_tour_stats, run_parallel_tours, stitch_tours


def _config_hash(args):
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _header(args, subcommand):
    return {
        "header": True,
        "subcommand": subcommand,
        "config_hash": _config_hash(args),
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }


def _open_out(args):
    return open(args.out, "w") if args.out else sys.stdout


def _emit(fh, record):
    fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# model configuration


def load_model_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    if "model" not in cfg:
        raise ConfigurationError(f"model config {path} missing 'model' key")
    return cfg


def _resolve_lg_observations(cfg):
    obs = cfg.get("observations")
    if isinstance(obs, dict) and "simulate" in obs:
        sim = obs["simulate"]
        model = LinearGaussianModel.simulate(
            a_coef=cfg.get("a_coef", 0.9),
            q_var=cfg.get("q_var", 1.0),
            c_coef=cfg.get("c_coef", 1.0),
            r_var=cfg.get("r_var", 1.0),
            n=sim["n"],
            seed=sim["seed"],
            m0=cfg.get("m0", 0.0),
            v0=cfg.get("v0", 1.0),
        )
        return model.observations
    if obs is None:
        raise ConfigurationError("linear_gaussian config needs observations")
    return [float(y) for y in obs]


def build_fk_model(cfg):
    """A FeynmanKacModel from a model config dict (path-measure models)."""
    kind = cfg["model"]
    if kind == "linear_gaussian":
        obs = _resolve_lg_observations(cfg)
        return LinearGaussianModel(
            a_coef=cfg.get("a_coef", 0.9),
            q_var=cfg.get("q_var", 1.0),
            c_coef=cfg.get("c_coef", 1.0),
            r_var=cfg.get("r_var", 1.0),
            observations=obs,
            m0=cfg.get("m0", 0.0),
            v0=cfg.get("v0", 1.0),
        ).to_fk()
    if kind == "absorbing":
        return AbsorbingMediumModel(
            lo=cfg.get("lo", 0.0),
            hi=cfg.get("hi", 1.0),
            sigma2=cfg.get("sigma2", 0.25),
            n=cfg.get("n", 10),
        ).to_fk()
    if kind == "sensor":
        obs = cfg.get("observations")
        if isinstance(obs, dict) and "simulate" in obs:
            sim = obs["simulate"]
            return SensorHmmModel.simulate(
                sigma2=cfg.get("sigma2", 5.0),
                n=sim["n"],
                seed=sim["seed"],
                required_max_gap=sim.get("required_max_gap"),
            ).to_fk()
        return SensorHmmModel(sigma2=cfg.get("sigma2", 5.0), observations=obs).to_fk()
    raise ConfigurationError(f"model {kind!r} does not define a Feynman-Kac path measure")


def build_kernel(cfg, rng):
    """An AtomicKernel from a model config dict (kernel-bearing models)."""
    kind = cfg["model"]
    if kind == "finite_chain":
        return FiniteChainKernel(cfg["transition"], atom_index=cfg.get("atom", 0))
    if kind == "pmmh":
        obs = _resolve_lg_observations(cfg)
        settings = PmmhSettings(
            observations=obs,
            n_particles=cfg.get("n_particles", 256),
            theta_star=tuple(cfg.get("theta_star", (0.9, 1.0, 1.0, 1.0))),
            proposal_sd=cfg.get("proposal_sd", 0.1),
            reentry_sd=cfg.get("reentry_sd", 0.5),
            prior_sd=cfg.get("prior_sd", 1.0),
            atom_w=cfg.get("atom_w"),
        )
        return build_atomized_pmmh(settings, rng)
    raise ConfigurationError(f"model {kind!r} does not define an atomic kernel")


def _serialize_state(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if hasattr(x, "theta"):  # PMMH state
        return {"theta": None if x.theta is None else np.asarray(x.theta).tolist(), "w": x.w}
    return str(x)


def _cost_dict(cost):
    return {
        "kernel_draws": cost.kernel_draws,
        "subcoin_flips": cost.subcoin_flips,
        "raw_flips": cost.raw_flips,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_bench_factory(args):
    rng = stream(args.seed)
    coin_p = args.p
    cfg = FactoryConfig(beta=args.beta, eps=args.eps)
    outputs = np.empty(args.reps)
    cost = SampleCost()
    for i in range(args.reps):
        coin = CoinSource.from_prob(coin_p)
        outputs[i] = flip_eps_over_p_coin(coin, cfg, rng, cost=cost)
    mean_out = float(outputs.mean())
    se = float(outputs.std(ddof=1) / np.sqrt(args.reps))
    mean_sub = cost.subcoin_flips / args.reps
    mean_raw = cost.raw_flips / max(cost.subcoin_flips, 1)
    with _open_out(args) as fh:
        fh.write(f"# config_hash={_config_hash(args)} seed={args.seed} version={__version__}\n")
        fh.write("beta,eps,p,reps,mean_output,mean_subcoin_flips,mean_raw_flips,se\n")
        fh.write(
            f"{args.beta},{args.eps},{coin_p},{args.reps},"
            f"{mean_out:.6f},{mean_sub:.6f},{mean_raw:.6f},{se:.6f}\n"
        )
    return 0


def cmd_sample(args):
    cfg_model = load_model_config(args.model)
    rng = stream(args.seed)
    kernel = build_kernel(cfg_model, rng)
    factory_cfg = FactoryConfig(beta=args.beta, eps=args.eps)
    sampler = perfect_sample_imputation if args.algo == "imputation" else perfect_sample_multigamma
    with _open_out(args) as fh:
        _emit(fh, _header(args, "sample"))
        for _ in range(args.n_samples):
            t0 = time.perf_counter()
            report = sampler(kernel, factory_cfg, rng)
            _emit(
                fh,
                {
                    "sample": _serialize_state(report.sample),
                    "algorithm": report.algorithm,
                    "cost": _cost_dict(report.cost),
                    "wall_time_ms": round(1000 * (time.perf_counter() - t0), 3),
                },
            )
    return 0


def cmd_sample_path(args):
    cfg_model = load_model_config(args.model)
    base = build_fk_model(cfg_model)
    with open(args.psi_file) as fh:
        psi = json.load(fh)
    rng = stream(args.seed)
    factory_cfg = FactoryConfig(beta=args.beta, eps=args.eps)
    with _open_out(args) as fh:
        _emit(fh, _header(args, "sample-path"))
        for _ in range(args.n_paths):
            t0 = time.perf_counter()
            cost = SampleCost()
            path = perfect_sample_path(
                base, args.particles, args.b, psi, factory_cfg, rng,
                algorithm=args.algo, cost=cost,
            )
            _emit(
                fh,
                {
                    "path": np.asarray(path).tolist(),
                    "cost": _cost_dict(cost),
                    "wall_time_ms": round(1000 * (time.perf_counter() - t0), 3),
                },
            )
    return 0


def cmd_tune(args):
    cfg_model = load_model_config(args.model)
    base = build_fk_model(cfg_model)
    rng = stream(args.seed)
    report = tune_psi(base, args.nprime, args.reps, rng, b=args.b)
    doc = _header(args, "tune")
    doc.update(
        {
            "psi": report.psi.tolist(),
            "atom_mass_estimates": report.atom_mass_estimates.tolist(),
            "beta_recommendation": report.beta_recommendation,
            "evidence": report.evidence,
        }
    )
    with _open_out(args) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_smc(args):
    cfg_model = load_model_config(args.model)
    model = build_fk_model(cfg_model)
    rng = stream(args.seed)
    with _open_out(args) as fh:
        _emit(fh, _header(args, "smc"))
        for _ in range(args.reps):
            v = run_smc(model, args.particles, rng)
            _emit(
                fh,
                {
                    "log_nc": estimate_log_nc(v),
                    "terminal_mean": estimate_pi_f(v, lambda path: float(np.asarray(path)[-1])),
                },
            )
    return 0


def cmd_diagnose(args):
    cfg_model = load_model_config(args.model)
    rng = stream(args.seed)
    kernel = build_kernel(cfg_model, rng)
    if args.states_from == "pilot":
        states = []
        x = kernel.atom
        for _ in range(args.pilot_steps):
            x = kernel.sample(x, rng)
            states.append(x)
        # deduplicate hashable states, preserving order
        try:
            states = list(dict.fromkeys(states))
        except TypeError:
            pass
    else:
        with open(args.states_file) as fh:
            states = json.load(fh)
    any_failed = False
    with _open_out(args) as fh:
        _emit(fh, _header(args, "diagnose"))
        for x in states:
            outcome = run_beta_diagnostic(kernel.p_coin(x), args.beta, args.budget, rng)
            any_failed = any_failed or outcome.verdict != "passed"
            _emit(
                fh,
                {
                    "state": _serialize_state(x),
                    "stopped_at": outcome.stopped_at,
                    "flips_used": outcome.flips_used,
                    "verdict": outcome.verdict,
                },
            )
        lower = estimate_p_lower(kernel, states, args.flips_per_state, rng)
        _emit(fh, {"summary": True, "p_lower_bound": lower, "n_states": len(states)})
    if any_failed:
        raise DiagnosticFailureError("at least one state exhausted its diagnostic budget")
    return 0


def cmd_tours(args):
    cfg_model = load_model_config(args.model)
    rng = stream(args.seed)
    kernel = build_kernel(cfg_model, rng)
    collection = run_parallel_tours(kernel, args.n_tours, args.workers, args.seed)
    stats = max_tour_stats(collection)
    with _open_out(args) as fh:
        _emit(fh, _header(args, "tours"))
        for i, tour in enumerate(collection.tours):
            if tour is None:
                _emit(fh, {"tour": i, "failed": True})
            else:
                _emit(fh, {"tour": i, "length": tour.length, "cost": _cost_dict(tour.cost)})
        summary = {"summary": True, "n_failed": collection.n_failed, **stats}
        if cfg_model["model"] == "finite_chain":
            K = len(cfg_model["transition"])
            summary["occupancy"] = [
                stitch_tours(collection, lambda s, j=j: float(s == j), drop_failed=True)
                for j in range(K)
            ]
        if cfg_model["model"] == "pmmh":
            summary["atom_fraction"] = stitch_tours(
                collection, lambda s: float(s.theta is None), drop_failed=True
            )
        _emit(fh, summary)
    return 0


def cmd_reproduce(args):
    rng = stream(args.seed)
    rows = []
    if args.experiment == "bounds":
        a_abs = absorbing_A_bound(AbsorbingMediumModel(sigma2=0.25, n=100))
        rows.append(("absorbing A bound", f"{a_abs:.4f}", "PASS" if a_abs < 15.5 else "FAIL"))
        sensor = SensorHmmModel.simulate(sigma2=5.0, n=50, seed=7, required_max_gap=3)
        a_sens = sensor_A_bound(sensor)
        rows.append(("sensor A bound (gap 3)", f"{a_sens:.4f}", "PASS" if round(a_sens) == 38 else "FAIL"))
    elif args.experiment == "factory":
        cfg = FactoryConfig(beta=0.4, eps=0.2)
        cost = SampleCost()
        reps = 20000
        hits = sum(
            flip_eps_over_p_coin(CoinSource.from_prob(0.5), cfg, rng, cost=cost) for _ in range(reps)
        )
        mean_raw = cost.raw_flips / max(cost.subcoin_flips, 1)
        rows.append(("eps/p frequency (target 0.4)", f"{hits / reps:.4f}", "PASS" if abs(hits / reps - 0.4) < 0.02 else "FAIL"))
        rows.append(("raw flips per subcoin", f"{mean_raw:.2f}", "PASS" if mean_raw < 1000 else "FAIL"))
    elif args.experiment == "lg-tuning":
        model = LinearGaussianModel.simulate(0.9, 1.0, 1.0, 1.0, n=10, seed=11)
        report = tune_psi(model.to_fk(), 10000, 5, rng)
        incs = np.exp([s.log_increment for s in kalman_filter(model)])
        rel = float(np.max(np.abs(report.psi / incs - 1.0)))
        rows.append(("max psi relative error", f"{rel:.4f}", "PASS" if rel < 0.05 else "FAIL"))
        rows.append(("beta recommendation", f"{report.beta_recommendation:.3f}", "PASS"))
    else:
        raise ConfigurationError(f"unknown experiment {args.experiment!r}")
    with _open_out(args) as fh:
        _emit(fh, _header(args, "reproduce"))
        for name, value, verdict in rows:
            _emit(fh, {"check": name, "value": value, "verdict": verdict})
    if any(r[2] == "FAIL" for r in rows):
        raise DiagnosticFailureError("a reproduction check failed")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser():
    parser = argparse.ArgumentParser(prog="atomsmc")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, fn):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", default=None)
        return p

    p = add("bench-factory", cmd_bench_factory)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--reps", type=int, default=10**5)

    p = add("sample", cmd_sample)
    p.add_argument("--model", required=True)
    p.add_argument("--algo", choices=["imputation", "multigamma"], default="imputation")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--n-samples", type=int, default=100)

    p = add("sample-path", cmd_sample_path)
    p.add_argument("--model", required=True)
    p.add_argument("--particles", type=int, required=True)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--psi-file", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--algo", choices=["imputation", "multigamma"], default="imputation")
    p.add_argument("--n-paths", type=int, default=10)

    p = add("tune", cmd_tune)
    p.add_argument("--model", required=True)
    p.add_argument("--nprime", type=int, required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--b", type=float, default=0.5)

    p = add("smc", cmd_smc)
    p.add_argument("--model", required=True)
    p.add_argument("--particles", type=int, required=True)
    p.add_argument("--reps", type=int, default=10)

    p = add("diagnose", cmd_diagnose)
    p.add_argument("--model", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--states-from", choices=["pilot", "file"], default="pilot")
    p.add_argument("--states-file", default=None)
    p.add_argument("--pilot-steps", type=int, default=100)
    p.add_argument("--flips-per-state", type=int, default=1000)

    p = add("tours", cmd_tours)
    p.add_argument("--model", required=True)
    p.add_argument("--n-tours", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)

    p = add("reproduce", cmd_reproduce)
    p.add_argument("--experiment", required=True, choices=["bounds", "factory", "lg-tuning"])
    p.add_argument("--scale", default="desk", choices=["desk"])

    return parser


def dispatch(argv):
    """Run one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args) or 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ParticleDeathError as exc:
        print(f"particle death: {exc}", file=sys.stderr)
        return 3
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 4
    except DiagnosticFailureError as exc:
        print(f"diagnostic failure: {exc}", file=sys.stderr)
        return 5


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
