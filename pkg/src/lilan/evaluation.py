"""Error metrics, the solver-vs-surrogate speed benchmark, and studies.

Metrics are computed on physical states (after inverse transforms); the
losses used in training live in the transformed domain.  The initial
time index is excluded by default since its stored row is the initial
condition itself.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import TrajectoryDataset, coarsen_time, generate, subsample
from .exceptions import DivergenceError, ShapeError, SolverFailureError, StepBudgetError
from .integrators import ImplicitSolverConfig, etdrk4_solve, solve_stiff
from .model import build_model, predict_batch
from .training import TrainConfig, train
from .transforms import fit_transforms


def _norm_rows(arr):
    return np.linalg.norm(arr, axis=-1)


def metric_r1(pred, target, j: int) -> float:
    """Sample-mean relative Euclidean error at time index j."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    norms = _norm_rows(target[:, j, :])
    if np.any(norms == 0.0):
        raise ShapeError(f"zero-norm target row at time index {j}")
    return float((_norm_rows(pred[:, j, :] - target[:, j, :]) / norms).mean())


def r1_curve(pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    norms = _norm_rows(target)
    if np.any(norms == 0.0):
        raise ShapeError("zero-norm target row")
    return (_norm_rows(pred - target) / norms).mean(axis=0)


def metric_r2(pred, target) -> float:
    """Time average of the per-time relative error curve."""
    return float(r1_curve(pred, target).mean())


@dataclass
class EvalReport:
    times: np.ndarray
    r1: np.ndarray
    r2: float
    n_samples: int
    model_manifest: dict = field(default_factory=dict)
    dataset_manifest: dict = field(default_factory=dict)
    wall_seconds: float = 0.0


def evaluate_model(model, ds: TrajectoryDataset, include_initial: bool = False) -> EvalReport:
    """R1 curve and R2 of model predictions over a test dataset."""
    t0 = time.perf_counter()
    idx = slice(None) if include_initial else slice(1, None)
    times = ds.times[idx]
    pred = predict_batch(model, ds.x0, ds.params, times)
    target = ds.states[:, idx, :]
    curve = r1_curve(pred, target)
    return EvalReport(
        times=times,
        r1=curve,
        r2=float(curve.mean()),
        n_samples=ds.n_samples,
        dataset_manifest=dict(ds.manifest),
        wall_seconds=time.perf_counter() - t0,
    )


def write_eval_csvs(report: EvalReport, outdir) -> None:
    import os

    os.makedirs(str(outdir), exist_ok=True)
    with open(os.path.join(str(outdir), "r1_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "r1"])
        for t, r in zip(report.times, report.r1):
            writer.writerow([repr(float(t)), repr(float(r))])
    with open(os.path.join(str(outdir), "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["r2", repr(report.r2)])
        writer.writerow(["n_samples", report.n_samples])


# ---------------------------------------------------------------------------
# Speed benchmark
# ---------------------------------------------------------------------------


@dataclass
class SpeedReport:
    solver_seconds: float
    surrogate_seconds: float
    ratio: float
    n_ics: int
    solver_failures: int = 0


def speed_benchmark(
    model,
    problem,
    n_ics: int,
    solver: ImplicitSolverConfig | None = None,
    seed: int = 0,
    float32: bool = False,
) -> SpeedReport:
    """Wall-clock comparison: full trajectories per initial condition.

    Both paths produce states on the problem's time grid for fresh
    inputs; the surrogate path includes transform application.  Solver
    failures are counted and skipped, the run continues.
    """
    if n_ics == 0:
        return SpeedReport(0.0, 0.0, float("nan"), 0)
    times = np.asarray(problem.time_grid, dtype=float)

    if problem.kind == "ode":
        from .problems import robertson_random_params

        params = [robertson_random_params(np.random.default_rng([seed, i])) for i in range(n_ics)]
        ics = [problem.fixed_x0] * n_ics
    else:
        params = [np.zeros(0)] * n_ics
        ics = [problem.sample_ic(np.random.default_rng([seed, i])) for i in range(n_ics)]

    failures = 0
    if problem.kind == "ode":
        cfg = solver or ImplicitSolverConfig()
        shifted = times - times[0]
        t0 = time.perf_counter()
        for x0, p in zip(ics, params):
            try:
                solve_stiff(
                    lambda x: problem.rhs(x, p), lambda x: problem.jacobian(x, p), x0, shifted, cfg
                )
            except (SolverFailureError, StepBudgetError):
                failures += 1
        solver_seconds = time.perf_counter() - t0
    else:
        sub = problem.substeps
        dt = (times[1] - times[0]) / sub
        op = problem.make_operator()
        t0 = time.perf_counter()
        for u0 in ics:
            etdrk4_solve(op, problem.to_unique(u0), dt, times)
        solver_seconds = time.perf_counter() - t0

    surrogate = model
    if float32:
        surrogate = model.copy()
        for group in ("state_encoders", "slope_encoders", "time_warps", "decoders"):
            setattr(surrogate, group, [n.astype(np.float32) for n in getattr(surrogate, group)])

    t0 = time.perf_counter()
    for x0, p in zip(ics, params):
        predict_batch(surrogate, x0[None, :], p[None, :], times)
    surrogate_seconds = time.perf_counter() - t0

    ratio = solver_seconds / surrogate_seconds if surrogate_seconds > 0 else float("inf")
    return SpeedReport(solver_seconds, surrogate_seconds, ratio, n_ics, failures)


def write_speed_csv(report: SpeedReport, path) -> None:
    with open(str(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        writer.writerow(["solver_seconds", f"{report.solver_seconds:.6f}"])
        writer.writerow(["surrogate_seconds", f"{report.surrogate_seconds:.6f}"])
        writer.writerow(["ratio", f"{report.ratio:.3f}"])
        writer.writerow(["n_ics", report.n_ics])
        writer.writerow(["solver_failures", report.solver_failures])


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

STUDY_KINDS = ("sample_reduction", "time_coarsening", "tau_ablation", "latent_expansion")


@dataclass
class StudyConfig:
    problem: str = "robertson"
    problem_kwargs: dict = field(default_factory=dict)
    seed: int = 0
    grid_per_dim: int | None = 5  # robertson training pool (grid**3 samples)
    n_train: int | None = None  # PDE pool size
    n_test: int = 64
    epochs: int = 2000
    lr: float = 2e-3
    batch_size: int = 0
    loss: str | None = None  # default by problem kind
    variant: str | None = None
    latent_dim: int | None = None
    settings: list | None = None  # per-kind override of the swept values
    solver: ImplicitSolverConfig | None = None


def row_seed(base_seed: int, row_index: int) -> int:
    """Stable per-row seed derived from the base seed and row position."""
    return int(np.random.SeedSequence([base_seed, row_index]).generate_state(1)[0])


def _study_data(cfg: StudyConfig):
    from .problems import get_problem

    problem = get_problem(cfg.problem, **cfg.problem_kwargs)
    if problem.kind == "ode":
        pool = generate(problem, seed=cfg.seed, solver=cfg.solver, grid_per_dim=cfg.grid_per_dim)
        test = generate(problem, n_samples=cfg.n_test, seed=row_seed(cfg.seed, 991), solver=cfg.solver)
    else:
        pool = generate(problem, n_samples=cfg.n_train or 100, seed=cfg.seed)
        test = generate(problem, n_samples=cfg.n_test, seed=row_seed(cfg.seed, 991))
    return problem, pool, test


def _train_and_score(problem, train_ds, test_ds, cfg: StudyConfig, seed, use_tau=True, latent=None):
    loss = cfg.loss or ("exp_product" if problem.kind == "ode" else "rel_l2")
    spec = fit_transforms(train_ds)
    model = build_model(
        problem,
        seed=seed,
        variant=cfg.variant,
        latent_dim=latent if latent is not None else cfg.latent_dim,
        use_tau=use_tau,
        transforms=spec,
    )
    tc = TrainConfig(loss=loss, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed)
    result = train(model, train_ds, None, tc)
    report = evaluate_model(result.model, test_ds)
    return result, report


def run_study(kind: str, cfg: StudyConfig, out_path=None):
    """One row per swept setting; training failures are recorded in-row."""
    if kind not in STUDY_KINDS:
        raise ValueError(f"unknown study kind {kind!r}; choose from {STUDY_KINDS}")
    problem, pool, test = _study_data(cfg)

    rows = []

    def run_row(index, setting, train_ds, use_tau=True, latent=None, label=""):
        seed = row_seed(cfg.seed, index)
        row = {
            "kind": kind,
            "setting": setting,
            "label": label or ("lilan" if use_tau else "no_tau"),
            "seed": seed,
            "n_train": train_ds.n_samples,
            "n_times": train_ds.n_times,
            "r2": float("nan"),
            "status": "ok",
        }
        try:
            _, report = _train_and_score(problem, train_ds, test, cfg, seed, use_tau, latent)
            row["r2"] = report.r2
        except DivergenceError as exc:
            row["status"] = f"diverged: {exc}"
        rows.append(row)

    if kind == "sample_reduction":
        sizes = cfg.settings
        if sizes is None:
            sizes, s = [], pool.n_samples
            while s >= 8:
                sizes.append(s)
                s //= 2
            sizes = sorted(sizes)
        for i, size in enumerate(sizes):
            if size == 8 and pool.manifest.get("param_box") is not None:
                ds = subsample(pool, 8, mode="grid_corners")
            else:
                ds = subsample(pool, size, mode="stride")
            run_row(i, size, ds)
    elif kind == "time_coarsening":
        skips = cfg.settings if cfg.settings is not None else [0, 1, 3, 5, 7, 11]
        for i, skip in enumerate(skips):
            run_row(i, skip, coarsen_time(pool, skip))
    elif kind == "tau_ablation":
        skips = cfg.settings if cfg.settings is not None else [0, 1, 3, 5, 7, 11]
        for i, skip in enumerate(skips):
            ds = coarsen_time(pool, skip)
            run_row(2 * i, skip, ds, use_tau=True)
            run_row(2 * i + 1, skip, ds, use_tau=False)
    elif kind == "latent_expansion":
        ratios = cfg.settings if cfg.settings is not None else [1, 2, 4]
        for i, ratio in enumerate(ratios):
            run_row(i, ratio, pool, latent=int(ratio) * problem.n_x, label=f"m={ratio}*n_x")

    if out_path is not None:
        write_study_csv(rows, out_path)
    return rows


def write_study_csv(rows, path) -> None:
    fields = ["kind", "setting", "label", "seed", "n_train", "n_times", "r2", "status"]
    with open(str(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["r2"] = repr(out["r2"])
            writer.writerow(out)
