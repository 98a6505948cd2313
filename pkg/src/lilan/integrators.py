"""Reference integrators used to manufacture training data.

Two solvers live here: an adaptive TR-BDF2 method (one-step, L-stable,
embedded 3rd-order error estimate, simplified Newton inside) for stiff
ODE systems, and the classical ETDRK4 exponential integrator for
semilinear PDEs whose linear part is diagonal in the discrete Fourier
basis.  Both are deterministic pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import GridError, ShapeError, SolverFailureError, StepBudgetError

_SQRT2 = np.sqrt(2.0)
_TR_GAMMA = 2.0 - _SQRT2
_TR_D = _TR_GAMMA / 2.0
# BDF2-stage combination coefficients and embedded-error weights
_C_GAMMA = (_SQRT2 + 1.0) / 2.0
_C_Y = (_SQRT2 - 1.0) / 2.0
_ERR_W1 = (_SQRT2 - 1.0) / 3.0
_ERR_W2 = -1.0 / 3.0
_ERR_W3 = (2.0 - _SQRT2) / 3.0


@dataclass
class ImplicitSolverConfig:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_steps: int = 500_000
    newton_tol: float = 1e-5  # relative to the (atol + rtol*|y|) scale
    newton_max_iters: int = 12

    def tightened(self, factor: float) -> "ImplicitSolverConfig":
        return ImplicitSolverConfig(
            rtol=self.rtol / factor,
            atol=self.atol / factor,
            max_steps=self.max_steps,
            newton_tol=self.newton_tol,
            newton_max_iters=self.newton_max_iters,
        )


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def _newton_stage(u_guess, rhs_const, f, inv_m, hd, scale, cfg):
    """Solve u - hd*f(u) = rhs_const with a frozen-Jacobian Newton loop.

    Returns (u, f(u), converged).  One polish iteration runs after the
    displacement test passes so the stage residual (which controls
    conservation drift) sits well below the step-error scale.
    """
    u = u_guess
    converged = False
    for _ in range(cfg.newton_max_iters):
        fu = f(u)
        r = u - hd * fu - rhs_const
        du = inv_m @ r
        u = u - du
        if _rms(du / scale) < cfg.newton_tol:
            converged = True
            break
    if not converged:
        return u, None, False
    fu = f(u)
    r = u - hd * fu - rhs_const
    u = u - inv_m @ r
    return u, f(u), True


def solve_stiff(rhs, jacobian, x0, output_times, cfg: ImplicitSolverConfig | None = None):
    """Integrate an autonomous stiff system x' = rhs(x) from t = 0.

    Returns the states at exactly the requested times, shape
    (len(output_times), n).  Step sizes adapt to (rtol, atol) through the
    embedded TR-BDF2 error estimate and are clipped so every output time
    is hit exactly.
    """
    cfg = cfg or ImplicitSolverConfig()
    x0 = np.asarray(x0, dtype=float)
    times = np.asarray(output_times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ShapeError("output_times must be a non-empty 1-d array")
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ShapeError("output_times must be strictly increasing with first >= 0")
    n = x0.size
    out = np.empty((times.size, n))
    idx = 0
    if times[0] == 0.0:
        out[0] = x0
        idx = 1
        if idx == times.size:
            return out

    t = 0.0
    y = x0.copy()
    fy = rhs(y)
    eye = np.eye(n)

    # Hairer-style initial step guess, clipped to the first output gap
    scale0 = cfg.atol + cfg.rtol * np.abs(y)
    d0, d1 = _rms(y / scale0), _rms(fy / scale0)
    span = times[-1]
    h = 0.01 * d0 / d1 if d1 > 1e-15 * max(d0, 1.0) else 1e-6 * span
    h = min(max(h, 1e-12 * span), times[idx] - t)

    n_steps = 0
    newton_fails = 0
    while idx < times.size:
        if n_steps >= cfg.max_steps:
            raise StepBudgetError(f"exceeded max_steps={cfg.max_steps} at t={t:.3e}")
        n_steps += 1
        t_target = times[idx]
        clipped = t + h >= t_target
        if clipped:
            h = t_target - t

        hd = _TR_D * h
        jac = np.asarray(jacobian(y), dtype=float)
        try:
            inv_m = np.linalg.inv(eye - hd * jac)
        except np.linalg.LinAlgError:
            inv_m = None
        scale = cfg.atol + cfg.rtol * np.abs(y)

        ok = inv_m is not None
        if ok:
            rhs_tr = y + hd * fy
            u_g, f_g, ok = _newton_stage(y + _TR_GAMMA * h * fy, rhs_tr, rhs, inv_m, hd, scale, cfg)
        if ok:
            rhs_bdf = _C_GAMMA * u_g - _C_Y * y
            u1, f1, ok = _newton_stage(u_g, rhs_bdf, rhs, inv_m, hd, scale, cfg)
        if not ok:
            newton_fails += 1
            if newton_fails > 60 or h <= 1e-14 * max(t, span):
                raise SolverFailureError(f"Newton failed to converge near t={t:.3e}")
            h *= 0.25
            continue
        newton_fails = 0

        err = h * (_ERR_W1 * fy + _ERR_W2 * f_g + _ERR_W3 * f1)
        err = inv_m @ err  # filter keeps the estimate usable on stiff modes
        err_norm = _rms(err / (cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(u1))))

        if err_norm <= 1.0:
            t = t_target if clipped else t + h
            y = u1
            fy = f1
            if clipped and t == t_target:
                out[idx] = y
                idx += 1
            factor = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.85 * err_norm ** (-1.0 / 3.0)))
            h = h * factor
        else:
            h = h * min(1.0, max(0.2, 0.85 * err_norm ** (-1.0 / 3.0)))
    return out


@dataclass
class SemilinearOperator:
    """Diagonalized periodic linear part plus a physical-space nonlinearity.

    `eigenvalues[k]` is the symbol of the linear operator at DFT mode k
    (numpy fft ordering, length = grid size); `nonlinear(u)` maps a
    physical-space state to the nonlinear tendency, evaluated pointwise
    or via its own spectral work.
    """

    eigenvalues: np.ndarray
    nonlinear: object  # callable u -> N(u)


def circulant_eigenvalues(stencil, n: int, length: float) -> np.ndarray:
    """DFT eigenvalues of a symmetric finite-difference stencil.

    The stencil is the dimensionless centered row [c_-r, ..., c_0, ..., c_r];
    half-width r means a 2r-th derivative, so the result carries a

    1/h^(2r) factor with h = length / n.  Mode ordering follows numpy's fft.
    """
    stencil = np.asarray(stencil, dtype=float)
    if stencil.ndim != 1 or stencil.size % 2 == 0:
        raise ShapeError("stencil must be a 1-d odd-length array")
    r = stencil.size // 2
    if not np.allclose(stencil, stencil[::-1]):
        raise ShapeError("stencil must be symmetric")
    if stencil.size > n:
        raise ShapeError(f"stencil of width {stencil.size} wider than grid n={n}")
    h = length / n
    theta = 2.0 * np.pi * np.arange(n) / n
    lam = np.full(n, stencil[r])
    for j in range(1, r + 1):
        lam = lam + 2.0 * stencil[r + j] * np.cos(j * theta)
    return lam / h ** (2 * r)


@dataclass
class Etdrk4Coefficients:
    e_full: np.ndarray
    e_half: np.ndarray
    q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


def _phi_closed(z):
    ez = np.exp(z)
    q = (np.exp(z / 2.0) - 1.0) / z
    f1 = (-4.0 - z + ez * (4.0 - 3.0 * z + z**2)) / z**3
    f2 = (2.0 + z + ez * (-2.0 + z)) / z**3
    f3 = (-4.0 - 3.0 * z - z**2 + ez * (4.0 - z)) / z**3
    return q, f1, f2, f3


def phi_coefficients(
    eigenvalues, dt: float, contour_points: int = 32, small_threshold: float = 0.5
) -> Etdrk4Coefficients:
    """ETDRK4 coefficient vectors for a diagonal linear part.

    Near z = lambda*dt = 0 the closed forms cancel catastrophically, so
    those entries are evaluated as the mean over a unit circle of contour
    points centered on z (Kassam-Trefethen style); elsewhere the closed
    forms are used directly.
    """
    lam = np.atleast_1d(np.asarray(eigenvalues))
    z = lam * dt
    e_full = np.exp(z)
    e_half = np.exp(z / 2.0)

    small = np.abs(z) < small_threshold
    zc = np.where(small, 1.0, z).astype(complex)  # placeholder on the small branch
    q, f1, f2, f3 = _phi_closed(zc)

    if np.any(small):
        angles = 2.0 * np.pi * (np.arange(contour_points) + 0.5) / contour_points
        circle = np.exp(1j * angles)
        zs = z[small].astype(complex)[:, None] + circle[None, :]
        qs, f1s, f2s, f3s = _phi_closed(zs)
        q[small] = qs.mean(axis=1)
        f1[small] = f1s.mean(axis=1)
        f2[small] = f2s.mean(axis=1)
        f3[small] = f3s.mean(axis=1)

    if np.isrealobj(lam):
        q, f1, f2, f3 = q.real, f1.real, f2.real, f3.real
    return Etdrk4Coefficients(e_full, e_half, dt * q, dt * f1, dt * f2, dt * f3)


def etdrk4_solve(op: SemilinearOperator, u0, dt: float, output_times) -> np.ndarray:
    """March u' = L u + N(u) with ETDRK4 in the Fourier-diagonal basis.

    Output times must be integer multiples of dt.  The returned
    trajectory holds physical-space states, shape (len(output_times), n).
    """
    u0 = np.asarray(u0, dtype=float)
    n = u0.size
    lam = np.asarray(op.eigenvalues)
    if lam.size != n:
        raise ShapeError(f"eigenvalue vector length {lam.size} != grid size {n}")
    times = np.asarray(output_times, dtype=float)
    steps = np.rint(times / dt).astype(int)
    if np.any(np.abs(steps * dt - times) > 1e-9 * np.maximum(dt, np.abs(times))):
        raise GridError("output times must be integer multiples of dt")
    if np.any(np.diff(steps) < 0):
        raise ShapeError("output_times must be non-decreasing")

    coef = phi_coefficients(lam, dt)
    fft, ifft = np.fft.fft, np.fft.ifft

    def n_hat(v_hat):
        return fft(op.nonlinear(np.real(ifft(v_hat))))

    out = np.empty((times.size, n))
    v = fft(u0.astype(complex))
    k = 0
    for j, target in enumerate(steps):
        while k < target:
            nv = n_hat(v)
            a = coef.e_half * v + coef.q * nv
            na = n_hat(a)
            b = coef.e_half * v + coef.q * na
            nb = n_hat(b)
            c = coef.e_half * a + coef.q * (2.0 * nb - nv)
            nc = n_hat(c)
            v = coef.e_full * v + coef.f1 * nv + 2.0 * coef.f2 * (na + nb) + coef.f3 * nc
            k += 1
        out[j] = np.real(ifft(v))
    return out
