"""Trajectory dataset generation, reduction utilities, and file storage.

A dataset is N trajectories sharing one time grid.  The first stored row
of every trajectory is the initial condition itself (for the stiff ODE
problems the grid starts at the first output time, which stands in for
t = 0 of the autonomous system).  Files are a JSON manifest plus a
little-endian float64 binary payload, written to be byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    DatasetFormatError,
    DatasetVersionError,
    ShapeError,
    SolverFailureError,
    StepBudgetError,
)
from .integrators import ImplicitSolverConfig, etdrk4_solve, solve_stiff
from .problems import ProblemSpec
from .transforms import fit_transforms  # noqa: F401  (re-exported)

PAYLOAD_MAGIC = b"LILD"
DATASET_VERSION = 1


@dataclass
class TrajectoryDataset:
    problem_name: str
    problem_kind: str  # "ode" | "pde"
    times: np.ndarray  # (T,)
    x0: np.ndarray  # (N, n_x)
    params: np.ndarray  # (N, n_p)
    states: np.ndarray  # (N, T, n_x)
    manifest: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def n_times(self) -> int:
        return self.states.shape[1]

    @property
    def n_x(self) -> int:
        return self.states.shape[2]

    def validate(self) -> None:
        n, t, n_x = self.states.shape
        if self.times.shape != (t,):
            raise ShapeError("times length does not match states")
        if self.x0.shape != (n, n_x):
            raise ShapeError("x0 block does not match states")
        if self.params.shape[0] != n:
            raise ShapeError("params rows do not match states")
        if np.any(np.diff(self.times) <= 0):
            raise ShapeError("times must be strictly increasing")
        if not np.array_equal(self.states[:, 0, :], self.x0):
            raise ShapeError("states[:, 0] must equal the initial conditions")


def generate(
    problem: ProblemSpec,
    n_samples: int | None = None,
    seed: int = 0,
    solver: ImplicitSolverConfig | None = None,
    grid_per_dim: int | None = None,
    params: np.ndarray | None = None,
    substeps: int | None = None,
    threads: int = 1,
) -> TrajectoryDataset:
    """Integrate the reference solver over sampled inputs.

    For the Robertson problem the parameter set comes from (exactly one
    of) a tensor grid (`grid_per_dim`), an explicit `params` array, or
    `n_samples` uniform draws from the training box.  PDE problems draw
    `n_samples` random initial conditions.  Deterministic in `seed`
    regardless of `threads` (samples are independent and written by
    index).
    """
    times = np.asarray(problem.time_grid, dtype=float)
    if problem.kind == "ode":
        solver = solver or ImplicitSolverConfig()
        if params is not None:
            params = np.atleast_2d(np.asarray(params, dtype=float))
        elif grid_per_dim is not None:
            from .problems import robertson_sampler

            params = robertson_sampler(grid_per_dim)
        elif n_samples is not None:
            from .problems import robertson_random_params

            params = np.stack(
                [robertson_random_params(np.random.default_rng([seed, i])) for i in range(n_samples)]
            )
        else:
            raise ValueError("need one of grid_per_dim, params, or n_samples")
        n = params.shape[0]
        x0 = np.tile(problem.fixed_x0, (n, 1))
        states = np.empty((n, times.size, problem.n_x))
        shifted = times - times[0]  # autonomous system: first grid time is t=0

        def solve_one(i):
            p = params[i]
            try:
                states[i] = solve_stiff(
                    lambda x: problem.rhs(x, p),
                    lambda x: problem.jacobian(x, p),
                    x0[i],
                    shifted,
                    solver,
                )
            except (SolverFailureError, StepBudgetError) as exc:
                raise type(exc)(f"sample {i}: {exc}") from exc

        if threads and threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(solve_one, range(n)))
        else:
            for i in range(n):
                solve_one(i)
        manifest = {
            "problem": problem.name,
            "kind": "ode",
            "seed": seed,
            "n_samples": int(n),
            "grid_per_dim": grid_per_dim,
            "solver": {
                "method": "tr-bdf2",
                "rtol": solver.rtol,
                "atol": solver.atol,
                "newton_tol": solver.newton_tol,
                "max_steps": solver.max_steps,
            },
            "param_box": None if problem.param_box is None else problem.param_box.tolist(),
            "state_floor": 1e-30,
            "constants": problem.constants,
        }
    elif problem.kind == "pde":
        if n_samples is None:
            raise ValueError("PDE generation needs n_samples")
        sub = substeps or problem.substeps
        dt = (times[1] - times[0]) / sub
        op = problem.make_operator()
        n = n_samples
        x0 = np.empty((n, problem.n_x))
        states = np.empty((n, times.size, problem.n_x))
        for i in range(n):
            rng = np.random.default_rng([seed, i])
            u0 = problem.sample_ic(rng)
            x0[i] = u0
            traj = etdrk4_solve(op, problem.to_unique(u0), dt, times)
            states[i] = problem.from_unique(traj)
        states[:, 0, :] = x0
        manifest = {
            "problem": problem.name,
            "kind": "pde",
            "seed": seed,
            "n_samples": int(n),
            "substeps": sub,
            "dt": dt,
            "solver": {"method": "etdrk4"},
            "constants": problem.constants,
        }
        params = np.zeros((n, 0))
    else:
        raise ValueError(f"unknown problem kind {problem.kind!r}")

    ds = TrajectoryDataset(
        problem_name=problem.name,
        problem_kind=problem.kind,
        times=times,
        x0=x0,
        params=params,
        states=states,
        manifest=manifest,
    )
    ds.validate()
    return ds


def coarsen_time(ds: TrajectoryDataset, skip: int) -> TrajectoryDataset:
    """Keep every (skip+1)-th time index, always including the last.

    skip = 0 is the identity.
    """
    if skip < 0:
        raise ValueError("skip must be >= 0")
    if skip == 0:
        return ds
    t = ds.n_times
    idx = list(range(0, t, skip + 1))
    if idx[-1] != t - 1:
        idx.append(t - 1)
    idx = np.asarray(idx)
    manifest = dict(ds.manifest)
    manifest["coarsen_skip"] = skip
    manifest["retained_times"] = int(idx.size)
    return TrajectoryDataset(
        ds.problem_name,
        ds.problem_kind,
        ds.times[idx].copy(),
        ds.x0.copy(),
        ds.params.copy(),
        ds.states[:, idx, :].copy(),
        manifest,
    )


def subsample(ds: TrajectoryDataset, n: int, mode: str = "stride", seed: int = 0) -> TrajectoryDataset:
    """Deterministically select n of the N trajectories."""
    total = ds.n_samples
    if not 1 <= n <= total:
        raise ShapeError(f"cannot select {n} of {total} samples")
    if mode == "grid_corners":
        box = ds.manifest.get("param_box")
        if box is None:
            raise ShapeError("dataset has no parameter box; corners undefined")
        box = np.asarray(box)
        corners = np.stack(
            [m.ravel() for m in np.meshgrid(*[b for b in box], indexing="ij")], axis=1
        )
        idx = []
        for corner in corners:
            match = np.where(np.all(ds.params == corner, axis=1))[0]
            if match.size == 0:
                raise ShapeError("dataset does not contain all parameter-box corners")
            idx.append(match[0])
        idx = np.asarray(sorted(idx))
        if n != idx.size:
            raise ShapeError(f"grid_corners selects {idx.size} samples, not {n}")
    elif mode == "stride":
        step = total // n
        idx = np.arange(0, total, step)[:n]
    elif mode == "random":
        idx = np.sort(np.random.default_rng(seed).choice(total, size=n, replace=False))
    else:
        raise ValueError(f"unknown subsample mode {mode!r}")
    manifest = dict(ds.manifest)
    manifest["subsample"] = {"mode": mode, "n": int(n), "seed": seed}
    manifest["n_samples"] = int(n)
    return TrajectoryDataset(
        ds.problem_name,
        ds.problem_kind,
        ds.times.copy(),
        ds.x0[idx].copy(),
        ds.params[idx].copy(),
        ds.states[idx].copy(),
        manifest,
    )


def save(ds: TrajectoryDataset, path) -> None:
    """Write <path>.json manifest and <path>.bin payload (lossless f64)."""
    base = _strip_ext(str(path))
    ds.validate()
    n, t, n_x = ds.states.shape
    n_p = ds.params.shape[1]
    meta = {
        "format_version": DATASET_VERSION,
        "problem": ds.problem_name,
        "kind": ds.problem_kind,
        "shapes": {"n_samples": n, "n_times": t, "n_x": n_x, "n_p": n_p},
        "payload_order": ["times", "x0", "params", "states"],
        "dtype": "<f8",
        "manifest": ds.manifest,
    }
    with open(base + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)
    with open(base + ".bin", "wb") as fh:
        fh.write(PAYLOAD_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        for arr in (ds.times, ds.x0, ds.params, ds.states):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> TrajectoryDataset:
    base = _strip_ext(str(path))
    try:
        with open(base + ".json") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{base}.json: corrupt manifest") from exc
    if meta.get("format_version") != DATASET_VERSION:
        raise DatasetVersionError(
            f"{base}: unsupported dataset version {meta.get('format_version')}"
        )
    shapes = meta["shapes"]
    n, t, n_x, n_p = (shapes[k] for k in ("n_samples", "n_times", "n_x", "n_p"))
    with open(base + ".bin", "rb") as fh:
        blob = fh.read()
    if blob[:4] != PAYLOAD_MAGIC:
        raise DatasetFormatError(f"{base}.bin: bad payload magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != DATASET_VERSION:
        raise DatasetVersionError(f"{base}.bin: unsupported payload version {version}")
    expected = 8 * (t + n * n_x + n * n_p + n * t * n_x)
    if len(blob) - 8 != expected:
        raise DatasetFormatError(
            f"{base}.bin: payload has {len(blob) - 8} bytes, expected {expected}"
        )
    offset = 8

    def take(count, shape):
        nonlocal offset
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        return arr.reshape(shape).copy()

    times = take(t, (t,))
    x0 = take(n * n_x, (n, n_x))
    params = take(n * n_p, (n, n_p))
    states = take(n * t * n_x, (n, t, n_x))
    ds = TrajectoryDataset(meta["problem"], meta["kind"], times, x0, params, states, meta["manifest"])
    try:
        ds.validate()
    except ShapeError as exc:
        raise DatasetFormatError(f"{base}: inconsistent payload: {exc}") from exc
    return ds


def export_csv(ds: TrajectoryDataset, path, sample: int = 0, components=None) -> None:
    """One trajectory as CSV: time column plus selected state components."""
    if not 0 <= sample < ds.n_samples:
        raise ShapeError(f"sample {sample} out of range")
    comps = list(range(ds.n_x)) if components is None else list(components)
    with open(str(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"x{c}" for c in comps])
        for j in range(ds.n_times):
            writer.writerow([repr(float(ds.times[j]))] + [repr(float(ds.states[sample, j, c])) for c in comps])


def _strip_ext(path: str) -> str:
    for ext in (".json", ".bin"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path
