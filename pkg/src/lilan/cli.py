"""Command-line entry point.

Subcommands: gen, train, eval, predict, bench, study.  Options come
from a JSON config file (--config) with flags taking precedence; every
run writes run_manifest.json with the resolved configuration so it can
be reproduced exactly.  LILAN_LOG=debug|info|warning controls logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, datasets, evaluation, model as model_mod, problems, training
from .exceptions import (
    ConfigError,
    DatasetFormatError,
    DivergenceError,
    LilanError,
    SolverFailureError,
    StepBudgetError,
)
from .integrators import ImplicitSolverConfig
from .transforms import fit_transforms

log = logging.getLogger("lilan")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_UNKNOWN_NAME = 4
EXIT_SOLVER = 5
EXIT_DIVERGED = 6
EXIT_FORMAT = 7
EXIT_OTHER = 1


def _setup_logging():
    level = os.environ.get("LILAN_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _float_list(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lilan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lilan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (or file for single-file outputs)")
        p.add_argument("--threads", type=int, help="worker cap for data generation")

    p = sub.add_parser("gen", help="generate a trajectory dataset")
    common(p)
    p.add_argument("--problem")
    p.add_argument("--grid", type=int, help="tensor-grid points per parameter dimension")
    p.add_argument("--samples", type=int, help="number of sampled trajectories")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--name", help="dataset file stem (default: problem name)")

    p = sub.add_parser("train", help="train a surrogate on a dataset")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--val-dataset")
    p.add_argument("--variant", choices=model_mod.VARIANTS)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--loss", choices=training.LOSS_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--skip-steps", type=int, help="coarsen the training time grid before training")
    p.add_argument("--samples", type=int, help="subsample the training set to this many rows")
    p.add_argument("--no-tau", action="store_true", help="replace the warp with rescaled time")
    p.add_argument("--val-every", type=int)

    p = sub.add_parser("eval", help="evaluate a trained model on a dataset")
    common(p)
    p.add_argument("--model")
    p.add_argument("--dataset")

    p = sub.add_parser("predict", help="predict states at given times")
    common(p)
    p.add_argument("--model")
    p.add_argument("--x0", help="comma-separated initial condition (default: problem's fixed one)")
    p.add_argument("--p", help="comma-separated parameters")
    p.add_argument("--t", help="comma-separated times (seconds)", required=False)

    p = sub.add_parser("bench", help="speed benchmark: solver vs surrogate")
    common(p)
    p.add_argument("--model")
    p.add_argument("--problem")
    p.add_argument("--n-ics", type=int)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--float32", action="store_true")

    p = sub.add_parser("study", help="run a sweep study (one training per row)")
    common(p)
    p.add_argument("--kind", choices=evaluation.STUDY_KINDS)
    p.add_argument("--problem")
    p.add_argument("--grid", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--variant", choices=model_mod.VARIANTS)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--loss", choices=training.LOSS_KINDS)
    p.add_argument("--settings", help="comma-separated swept values")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Config-file values overridden by any flag given on the command line."""
    resolved = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file {args.config} not found")
        with open(args.config) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {args.config}: invalid JSON ({exc})") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        resolved.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None or value is False:
            continue
        resolved[key] = value
    resolved.setdefault("seed", 0)
    resolved["command"] = args.command
    return resolved


def _outdir(cfg) -> str:
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(cfg, outdir):
    manifest = {"package": f"lilan {__version__}", "resolved_config": cfg}
    with open(os.path.join(outdir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _solver_from(cfg) -> ImplicitSolverConfig:
    solver = ImplicitSolverConfig()
    if cfg.get("rtol"):
        solver.rtol = float(cfg["rtol"])
    if cfg.get("atol"):
        solver.atol = float(cfg["atol"])
    return solver


def _problem_from(cfg):
    name = cfg.get("problem")
    if not name:
        raise ConfigError("--problem is required")
    kwargs = cfg.get("problem_kwargs", {})
    try:
        return problems.get_problem(name, **kwargs)
    except KeyError as exc:
        raise KeyError(str(exc)) from exc


def _load_dataset(path):
    if path is None:
        raise ConfigError("--dataset is required")
    stem = path[:-5] if path.endswith(".json") else path[:-4] if path.endswith(".bin") else path
    if not os.path.exists(stem + ".json"):
        raise FileNotFoundError(f"dataset {path} not found")
    return datasets.load(path)


def _problem_for_dataset(ds):
    kwargs = {}
    constants = ds.manifest.get("constants", {})
    if ds.problem_name == "allen_cahn":
        kwargs = {"epsilon": constants["epsilon"], "n": constants["grid_points"]}
    elif ds.problem_name == "cahn_hilliard":
        kwargs = {"alpha": constants["alpha"], "gamma": constants["gamma"],
                  "n": constants["grid_points"]}
    return problems.get_problem(ds.problem_name, **kwargs)


def cmd_gen(cfg) -> int:
    problem = _problem_from(cfg)
    outdir = _outdir(cfg)
    solver = _solver_from(cfg)
    ds = datasets.generate(
        problem,
        n_samples=cfg.get("samples"),
        seed=cfg["seed"],
        solver=solver,
        grid_per_dim=cfg.get("grid"),
        threads=cfg.get("threads", 1),
    )
    stem = cfg.get("name") or problem.name
    datasets.save(ds, os.path.join(outdir, stem))
    _write_manifest(cfg, outdir)
    print(f"wrote {ds.n_samples} trajectories to {os.path.join(outdir, stem)}.bin")
    return EXIT_OK


def cmd_train(cfg) -> int:
    ds = _load_dataset(cfg.get("dataset"))
    if cfg.get("samples"):
        ds = datasets.subsample(ds, int(cfg["samples"]), mode="stride")
    if cfg.get("skip_steps"):
        ds = datasets.coarsen_time(ds, int(cfg["skip_steps"]))
    val = _load_dataset(cfg["val_dataset"]) if cfg.get("val_dataset") else None
    problem = _problem_for_dataset(ds)
    outdir = _outdir(cfg)

    spec = fit_transforms(ds)
    use_tau = not cfg.get("no_tau", False)
    net = model_mod.build_model(
        problem,
        seed=cfg["seed"],
        variant=cfg.get("variant"),
        latent_dim=cfg.get("latent_dim"),
        use_tau=use_tau,
        transforms=spec,
    )
    loss = cfg.get("loss") or ("exp_product" if ds.problem_kind == "ode" else "rel_l2")
    tc = training.TrainConfig(
        loss=loss,
        lr=float(cfg.get("lr", 1e-3)),
        epochs=int(cfg.get("epochs", 1000)),
        batch_size=int(cfg.get("batch", 0)),
        seed=cfg["seed"],
        val_every=int(cfg.get("val_every", 10)),
        history_path=os.path.join(outdir, "history.csv"),
    )
    result = training.train(net, ds, val, tc)
    model_mod.save_model(result.best_model, os.path.join(outdir, "model"))
    _write_manifest(cfg, outdir)
    final = result.history[-1]["train_loss"] if result.history else float("nan")
    print(f"trained {tc.epochs} epochs; final train loss {final:.6g}; model in {outdir}/model")
    return EXIT_OK


def cmd_eval(cfg) -> int:
    surrogate = _load_model(cfg)
    ds = _load_dataset(cfg.get("dataset"))
    outdir = _outdir(cfg)
    report = evaluation.evaluate_model(surrogate, ds)
    evaluation.write_eval_csvs(report, outdir)
    _write_manifest(cfg, outdir)
    print(f"r2 {report.r2:.6g} over {report.n_samples} samples; CSVs in {outdir}")
    return EXIT_OK


def _load_model(cfg):
    path = cfg.get("model")
    if not path:
        raise ConfigError("--model is required")
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise FileNotFoundError(f"model directory {path} not found")
    return model_mod.load_model(path)


def cmd_predict(cfg) -> int:
    surrogate = _load_model(cfg)
    if not cfg.get("t"):
        raise ConfigError("--t with at least one time is required")
    if not cfg.get("x0"):
        raise ConfigError("--x0 is required (the model needs the initial condition)")
    times = _float_list(str(cfg["t"]))
    x0 = _float_list(str(cfg["x0"]))
    p = _float_list(str(cfg["p"])) if cfg.get("p") else np.zeros(surrogate.n_p)
    pred = model_mod.predict_batch(surrogate, x0[None, :], p[None, :], times)[0]

    outdir = _outdir(cfg)
    path = os.path.join(outdir, "prediction.csv")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["time"] + [f"x{k}" for k in range(surrogate.n_x)]) + "\n")
        for t, row in zip(times, pred):
            fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
    _write_manifest(cfg, outdir)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(cfg) -> int:
    surrogate = _load_model(cfg)
    problem = _problem_from(cfg)
    outdir = _outdir(cfg)
    report = evaluation.speed_benchmark(
        surrogate,
        problem,
        n_ics=int(cfg.get("n_ics", 100)),
        solver=_solver_from(cfg),
        seed=cfg["seed"],
        float32=bool(cfg.get("float32", False)),
    )
    evaluation.write_speed_csv(report, os.path.join(outdir, "speed.csv"))
    _write_manifest(cfg, outdir)
    print(
        f"solver {report.solver_seconds:.3f}s vs surrogate {report.surrogate_seconds:.3f}s "
        f"-> {report.ratio:.1f}x ({report.solver_failures} solver failures)"
    )
    return EXIT_OK


def cmd_study(cfg) -> int:
    kind = cfg.get("kind")
    if kind not in evaluation.STUDY_KINDS:
        raise ConfigError(f"--kind must be one of {evaluation.STUDY_KINDS}")
    outdir = _outdir(cfg)
    settings = cfg.get("settings")
    if isinstance(settings, str):
        settings = [int(v) for v in settings.replace(",", " ").split()]
    sc = evaluation.StudyConfig(
        problem=cfg.get("problem", "robertson"),
        problem_kwargs=cfg.get("problem_kwargs", {}),
        seed=cfg["seed"],
        grid_per_dim=cfg.get("grid", 5),
        n_train=cfg.get("samples"),
        n_test=int(cfg.get("n_test", 64)),
        epochs=int(cfg.get("epochs", 2000)),
        lr=float(cfg.get("lr", 2e-3)),
        batch_size=int(cfg.get("batch", 0)),
        loss=cfg.get("loss"),
        variant=cfg.get("variant"),
        latent_dim=cfg.get("latent_dim"),
        settings=settings,
    )
    path = os.path.join(outdir, f"study_{kind}.csv")
    rows = evaluation.run_study(kind, sc, path)
    _write_manifest(cfg, outdir)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "study": cmd_study,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error:missing-file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except KeyError as exc:
        print(f"error:unknown-name: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_NAME
    except (SolverFailureError, StepBudgetError) as exc:
        print(f"error:solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DivergenceError as exc:
        print(f"error:divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DatasetFormatError as exc:
        print(f"error:format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except LilanError as exc:
        print(f"error:lilan: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
