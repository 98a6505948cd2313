"""The three built-in benchmark problems.

Robertson chemical kinetics (stiff 3-species ODE with varying reaction
rates), and the Allen-Cahn and Cahn-Hilliard phase-field PDEs
semi-discretized on periodic grids by circulant finite differences.
Grids with a duplicated periodic endpoint store all points; the
operator acts on the unique points only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .integrators import SemilinearOperator, circulant_eigenvalues

ROBERTSON_CANONICAL_P = np.array([4e-2, 3e7, 1e4])
ROBERTSON_PARAM_BOX = np.array([[0.2e-2, 0.6e-2], [1.5e7, 3.5e7], [5e3, 1.5e4]])
ROBERTSON_X0 = np.array([1.0, 0.0, 0.0])


@dataclass
class ProblemSpec:
    name: str
    kind: str  # "ode" | "pde"
    n_x: int
    n_p: int
    encoder_layout: str  # "p_only" | "x0_p"
    conservation_mode: str
    time_grid: np.ndarray
    arch: dict
    constants: dict = field(default_factory=dict)
    # ODE problems
    rhs: object = None  # rhs(x, p) -> dx/dt
    jacobian: object = None  # jacobian(x, p) -> (n_x, n_x)
    fixed_x0: np.ndarray | None = None
    param_box: np.ndarray | None = None
    # PDE problems
    space_grid: np.ndarray | None = None
    make_operator: object = None  # () -> SemilinearOperator on the unique grid
    sample_ic: object = None  # (rng) -> full-grid state
    substeps: int = 4

    @property
    def periodic_duplicate(self) -> bool:
        return self.kind == "pde"

    def to_unique(self, u: np.ndarray) -> np.ndarray:
        return u[..., :-1] if self.periodic_duplicate else u

    def from_unique(self, v: np.ndarray) -> np.ndarray:
        if not self.periodic_duplicate:
            return v
        return np.concatenate([v, v[..., :1]], axis=-1)


# ---------------------------------------------------------------------------
# Robertson
# ---------------------------------------------------------------------------


def robertson_rhs(x, p):
    x = np.asarray(x, dtype=float)
    p1, p2, p3 = p
    r1 = p1 * x[0]
    r2 = p2 * x[1] ** 2
    r3 = p3 * x[1] * x[2]
    return np.array([-r1 + r3, r1 - r3 - r2, r2])


def robertson_jacobian(x, p):
    x = np.asarray(x, dtype=float)
    p1, p2, p3 = p
    return np.array(
        [
            [-p1, p3 * x[2], p3 * x[1]],
            [p1, -p3 * x[2] - 2.0 * p2 * x[1], -p3 * x[1]],
            [0.0, 2.0 * p2 * x[1], 0.0],
        ]
    )


def robertson_time_grid() -> np.ndarray:
    """50 log-spaced output times from 1e-5 s to 1e5 s."""
    return np.logspace(-5.0, 5.0, 50)


def robertson_sampler(grid_points_per_dim: int) -> np.ndarray:
    """Full tensor grid of reaction-rate triples over the training box."""
    if grid_points_per_dim < 2:
        raise ValueError("grid needs at least 2 points per dimension")
    axes = [np.linspace(lo, hi, grid_points_per_dim) for lo, hi in ROBERTSON_PARAM_BOX]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def robertson_random_params(rng) -> np.ndarray:
    lo, hi = ROBERTSON_PARAM_BOX[:, 0], ROBERTSON_PARAM_BOX[:, 1]
    return lo + rng.random(3) * (hi - lo)


def robertson_problem() -> ProblemSpec:
    arch = {
        "variant": "independent",
        "latent_per_block": 5,
        "encoder_hidden": [20],
        "slope_hidden": [20],
        "tau_hidden": [20],
        "decoder_hidden": [20, 20],
        "no_tau_encoder_hidden": [23],
        "no_tau_decoder_hidden": [23, 23],
    }
    return ProblemSpec(
        name="robertson",
        kind="ode",
        n_x=3,
        n_p=3,
        encoder_layout="p_only",
        conservation_mode="softmax_scaled",
        time_grid=robertson_time_grid(),
        arch=arch,
        constants={"canonical_p": ROBERTSON_CANONICAL_P.tolist()},
        rhs=robertson_rhs,
        jacobian=robertson_jacobian,
        fixed_x0=ROBERTSON_X0.copy(),
        param_box=ROBERTSON_PARAM_BOX.copy(),
    )


# ---------------------------------------------------------------------------
# Allen-Cahn
# ---------------------------------------------------------------------------


def ac_sample_ic(rng, x: np.ndarray) -> np.ndarray:
    """Sum of three sinusoid pairs with fresh amplitude/frequency/phase."""
    u = np.zeros_like(x)
    for _ in range(3):
        amp = rng.uniform(0.0, 1.0 / 6.0)
        freq = int(rng.integers(1, 4))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        u += amp * np.sin(freq * x + phase) + amp * np.cos(freq * x + phase)
    return u


def allen_cahn_problem(epsilon: float = 0.01, n: int = 201, substeps: int = 4) -> ProblemSpec:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.linspace(0.0, 2.0 * np.pi, n)
    n_u = n - 1
    length = 2.0 * np.pi

    def make_operator():
        lap = circulant_eigenvalues([1.0, -2.0, 1.0], n_u, length)
        # fold the +u reaction term into the linear part for stability
        return SemilinearOperator(epsilon * lap + 1.0, lambda u: -(u**3))

    arch = {
        "variant": "full",
        "latent_dim": 20,
        "encoder_hidden": [100],
        "slope_hidden": [100],
        "tau_hidden": [100],
        "decoder_hidden": [100, 100],
        "no_tau_encoder_hidden": [155],
        "no_tau_decoder_hidden": [155, 155],
    }
    return ProblemSpec(
        name="allen_cahn",
        kind="pde",
        n_x=n,
        n_p=0,
        encoder_layout="x0_p",
        conservation_mode="none",
        time_grid=np.linspace(0.0, 10.0, 101),
        arch=arch,
        constants={"epsilon": epsilon, "grid_points": n, "linear_split": "eps*lap + 1"},
        space_grid=x,
        make_operator=make_operator,
        sample_ic=lambda rng: ac_sample_ic(rng, x),
        substeps=substeps,
    )


# ---------------------------------------------------------------------------
# Cahn-Hilliard
# ---------------------------------------------------------------------------


def ch_sample_ic(rng, x: np.ndarray) -> np.ndarray:
    amp = rng.uniform(0.1, 0.6)
    freq = int(rng.integers(1, 4))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    arg = freq * np.pi * (x + 1.0) + phase
    return amp * np.sin(arg) + amp * np.cos(arg)


def cahn_hilliard_problem(
    alpha: float = 0.01, gamma: float = 1e-3, n: int = 201, substeps: int = 4
) -> ProblemSpec:
    if alpha <= 0 or gamma <= 0:
        raise ValueError("alpha and gamma must be positive")
    x = np.linspace(-1.0, 1.0, n)
    n_u = n - 1
    length = 2.0

    def make_operator():
        lap = circulant_eigenvalues([1.0, -2.0, 1.0], n_u, length)
        biharm = circulant_eigenvalues([1.0, -4.0, 6.0, -4.0, 1.0], n_u, length)
        lam = alpha * (-lap - gamma * biharm)

        def nonlinear(u):
            return alpha * np.real(np.fft.ifft(lap * np.fft.fft(u**3)))

        return SemilinearOperator(lam, nonlinear)

    arch = {
        "variant": "full",
        "latent_dim": 20,
        "encoder_hidden": [100],
        "slope_hidden": [100],
        "tau_hidden": [100],
        "decoder_hidden": [100, 100],
        "no_tau_encoder_hidden": [155],
        "no_tau_decoder_hidden": [155, 155],
    }
    return ProblemSpec(
        name="cahn_hilliard",
        kind="pde",
        n_x=n,
        n_p=0,
        encoder_layout="x0_p",
        conservation_mode="none",
        time_grid=np.linspace(0.0, 20.0, 401),
        arch=arch,
        constants={"alpha": alpha, "gamma": gamma, "grid_points": n},
        space_grid=x,
        make_operator=make_operator,
        sample_ic=lambda rng: ch_sample_ic(rng, x),
        substeps=substeps,
    )


_BUILDERS = {
    "robertson": robertson_problem,
    "allen_cahn": allen_cahn_problem,
    "cahn_hilliard": cahn_hilliard_problem,
}


def problem_names():
    return sorted(_BUILDERS)


def get_problem(name: str, **overrides) -> ProblemSpec:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {problem_names()}") from None
    return builder(**overrides)
