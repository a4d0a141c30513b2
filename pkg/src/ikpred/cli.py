"""Command-line pipeline: simulate -> identify -> optimize -> predict -> bench.

One JSON configuration file per run with a section per stage; a few
flags (--seed, --out, input paths) override file values. The effective
configuration is echoed into the output directory so runs can be
reproduced. Exit codes: 0 success, 2 configuration/validation error,
3 runtime numerical error. Error lines are prefixed "error:".
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark, model, optimizer, predictor, simulate, sysid

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CONFIG_ERRORS = (
    ValueError,
    KeyError,
    TypeError,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
)
NUMERIC_ERRORS = (np.linalg.LinAlgError, sysid.EmDivergenceError, FloatingPointError)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must contain a JSON object")
    return data


def _stage(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return dict(section)


def _resolve_seed(args, config: dict, section: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(section.get("rng_seed", config.get("seed", 0)))


def _out_dir(args, config: dict) -> Path:
    out = Path(args.out if args.out is not None else config.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, command: str, effective: dict) -> None:
    with open(out / "run_config.json", "w") as fh:
        json.dump({"command": command, **effective}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ga_config(section: dict, seed: int) -> optimizer.GaConfig:
    return optimizer.GaConfig(
        population_size=int(section.get("population_size", 200)),
        generations=int(section.get("generations", 500)),
        crossover_rate=float(section.get("crossover_rate", 0.9)),
        mutation_rate=section.get("mutation_rate"),
        elitism_count=int(section.get("elitism_count", 2)),
        rng_seed=seed,
        seed_with_regular=bool(section.get("seed_with_regular", True)),
    )


def cmd_simulate(args, config: dict) -> int:
    section = _stage(config, "simulate")
    seed = _resolve_seed(args, config, section)
    out = _out_dir(args, config)
    ms = simulate.MassSpringConfig(
        mass_kg=float(section.get("mass_kg", 0.0015)),
        stiffness_N_per_m=float(section.get("stiffness_N_per_m", 0.000825)),
        delta_s=float(section.get("delta_s", 0.01)),
        steps_T=int(section.get("steps_T", 6000)),
        q_psd=float(section.get("q_psd", 0.05)),
        r_var=float(section.get("r_var", 0.05)),
        rng_seed=seed,
        x0_mm=tuple(section.get("x0_mm", (1.0, 0.0))),
    )
    traj, ms_model = simulate.simulate_mass_spring(ms)
    simulate.write_trajectory_csv(traj, out / "trajectory.csv")
    model.save_model(ms_model, out / "model.json")
    _echo_config(out, "simulate", {"seed": seed, "simulate": section})
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} rows, dt={traj.dt:g}) and {out / 'model.json'}")
    return 0


def cmd_identify(args, config: dict) -> int:
    section = _stage(config, "identify")
    seed = _resolve_seed(args, config, section)
    out = _out_dir(args, config)
    traj_path = args.traj or section.get("trajectory")
    if not traj_path:
        raise ValueError("identify needs a trajectory CSV (--traj or identify.trajectory)")
    traj = simulate.load_trajectory_csv(traj_path)

    observations = traj.noisy if traj.noisy is not None else traj.truth
    sigma2 = section.get("inject_sigma2")
    if sigma2 is not None:
        observations = simulate.inject_noise(traj, float(sigma2), seed).noisy
    train_steps = int(section.get("train_steps", len(traj)))
    observations = observations[:train_steps]

    n = section.get("state_dim_n")
    chosen_scores = None
    if n is None:
        n, chosen_scores = sysid.select_state_dim(
            observations,
            candidates=tuple(section.get("state_dim_candidates", (2, 3, 4, 5, 6))),
            rng_seed=seed,
        )
    em = sysid.EmConfig(
        state_dim_n=int(n),
        max_iters=int(section.get("max_iters", 100)),
        loglik_rel_tol=float(section.get("loglik_rel_tol", 1e-6)),
        rng_seed=seed,
    )
    fitted, diag = sysid.fit(observations, em)
    model.save_model(fitted, out / "model.json")
    diagnostics = {
        "state_dim_n": diag.state_dim_n,
        "iterations": diag.iterations,
        "converged": diag.converged,
        "loglik_history": diag.loglik_history,
        "innovation_regularizations": diag.regularization_count,
    }
    if chosen_scores is not None:
        diagnostics["state_dim_scores"] = {str(k): v for k, v in chosen_scores.items()}
    with open(out / "identify_diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "identify", {"seed": seed, "identify": {**section, "state_dim_n": int(n)}})
    print(f"fitted n={n} model in {diag.iterations} EM iterations -> {out / 'model.json'}")
    return 0


def cmd_optimize(args, config: dict) -> int:
    section = _stage(config, "optimize")
    seed = _resolve_seed(args, config, section)
    out = _out_dir(args, config)
    model_path = args.model or section.get("model")
    if not model_path:
        raise ValueError("optimize needs a model JSON (--model or optimize.model)")
    ssm = model.load_model(model_path)
    horizon_T = int(section["horizon_T"])
    budget_N = int(section["budget_N"])
    warmup = model.WarmupConfig(int(section.get("warmup_t0", 0)))
    ga = _ga_config(_stage(section, "ga"), seed)
    result = optimizer.genetic_search(ssm, horizon_T, budget_N, warmup, ga)
    regular = model.regular_schedule(horizon_T, budget_N)
    regular_objective = predictor.objective(ssm, regular, warmup)

    model.save_schedule(result.best_schedule, out / "schedule.json")
    with open(out / "optimization.json", "w") as fh:
        json.dump(
            {
                "best_objective": result.best_objective,
                "regular_objective": regular_objective,
                "history": list(result.history),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    _echo_config(out, "optimize", {"seed": seed, "optimize": section})
    print(
        f"best objective {result.best_objective:.6g} vs regular {regular_objective:.6g} "
        f"-> {out / 'schedule.json'}"
    )
    return 0


def cmd_predict(args, config: dict) -> int:
    section = _stage(config, "predict")
    out = _out_dir(args, config)
    model_path = args.model or section.get("model")
    schedule_path = args.schedule or section.get("schedule")
    traj_path = args.traj or section.get("trajectory")
    if not (model_path and schedule_path and traj_path):
        raise ValueError("predict needs model, schedule and trajectory inputs")
    ssm = model.load_model(model_path)
    schedule = model.load_schedule(schedule_path)
    traj = simulate.load_trajectory_csv(traj_path)
    if len(traj) < schedule.horizon_T:
        raise ValueError(
            f"trajectory has {len(traj)} rows but the schedule horizon is {schedule.horizon_T}"
        )
    source = traj.noisy if traj.noisy is not None else traj.truth
    measurements = [(t, source[t]) for t in schedule.times]
    belief = predictor.run_predictor(ssm, schedule, measurements)
    predictor.write_belief_csv(belief, schedule, ssm, out / "prediction.csv")
    _echo_config(out, "predict", {"predict": section})
    print(f"wrote {out / 'prediction.csv'} ({belief.horizon_T + 1} rows)")
    return 0


def cmd_bench(args, config: dict) -> int:
    section = _stage(config, "bench")
    seed = _resolve_seed(args, config, section)
    out = _out_dir(args, config)
    traj_path = args.traj or section.get("trajectory")
    if traj_path:
        traj = simulate.load_trajectory_csv(traj_path)
    else:
        steps = int(section.get("surrogate_steps", 0)) or (
            int(section.get("train_steps", 600)) + int(section.get("horizon_T", 800))
        )
        traj = simulate.respiratory_surrogate(steps)
    ga = _ga_config(_stage(section, "ga"), 0)
    bench_config = benchmark.BenchConfig(
        sigma2_grid=tuple(section.get("sigma2_grid", (1.0, 4.0, 25.0, 100.0))),
        budget_fraction_grid=tuple(section.get("budget_fraction_grid", (0.1, 0.2, 0.3, 0.4, 0.5))),
        horizon_T=int(section.get("horizon_T", 800)),
        train_steps=int(section.get("train_steps", 600)),
        warmup_t0=int(section.get("warmup_t0", 300)),
        replications=int(section.get("replications", 20)),
        rng_seed=seed,
        state_dim_n=int(section.get("state_dim_n", 4)),
        em_max_iters=int(section.get("em_max_iters", 40)),
        em_loglik_rel_tol=float(section.get("em_loglik_rel_tol", 1e-5)),
        ga=ga,
        workers=section.get("workers"),
    )
    report = benchmark.run_benchmark(bench_config, traj)
    benchmark.write_report_csv(report, out / "bench_results.csv")
    table = benchmark.format_report_table(report)
    with open(out / "bench_table.txt", "w") as fh:
        fh.write(table)
    _echo_config(out, "bench", {"seed": seed, "bench": section})
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ikpred",
        description="Optimal intermittent Kalman prediction under a measurement budget.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("identify", cmd_identify),
        ("optimize", cmd_optimize),
        ("predict", cmd_predict),
        ("bench", cmd_bench),
    ):
        p = sub.add_parser(name)
        p.set_defaults(handler=fn)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the RNG seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--traj", help="trajectory CSV path")
        p.add_argument("--model", help="model JSON path")
        p.add_argument("--schedule", help="schedule JSON path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.handler(args, config)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
