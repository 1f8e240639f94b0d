"""Adaptive Dormand-Prince 5(4) integration onto a uniform output grid."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .systems import NumericDomainError, SystemSpec, SystemId, rhs_kernel


class IntegrationError(RuntimeError):
    """The step budget ran out or the step size collapsed before reaching t_end."""

    def __init__(self, message: str, reached_time: float):
        super().__init__(f"{message} (reached t={reached_time:.6g})")
        self.reached_time = reached_time


@dataclass(frozen=True)
class IntegrationConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    max_steps: int = 1_000_000
    output_grid_size: int = 4096
    # None uses the system's preferred method; "auto" retries stiff failures with lsoda
    method: str | None = None

    def __post_init__(self):
        if self.method not in (None, "dopri5", "lsoda", "auto"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1 or self.output_grid_size < 2:
            raise ValueError("max_steps >= 1 and output_grid_size >= 2 required")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states disagree in length")
        if not np.all(np.isfinite(self.states)):
            raise NumericDomainError("trajectory contains non-finite states")


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# fifth-order minus fourth-order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)

OK, STEP_LIMIT, NON_FINITE, STEP_UNDERFLOW = 0, 1, 2, 3


@numba.njit(cache=True)
def _err_norm(err, y0, y1, rtol, atol):
    acc = 0.0
    for i in range(err.shape[0]):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        acc += (err[i] / sc) ** 2
    return np.sqrt(acc / err.shape[0])


@numba.njit(cache=True)
def _all_finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@numba.njit(cache=True)
def _initial_step(code, y0, f0, p, t_end, rtol, atol):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    y1 = y0 + h0 * f0
    f1 = np.empty(n)
    rhs_kernel(code, y1, p, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if not np.isfinite(d2):
        return h0 * 1e-3
    dmax = max(d1, d2)
    if dmax <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dmax) ** 0.2
    return min(100.0 * h0, h1, t_end)


@numba.njit(cache=True)
def dopri_grid(code, y0, p, t_end, rtol, atol, max_steps, n_out):
    """Integrate system ``code`` over [0, t_end] and sample on a uniform grid.

    Returns (status, reached time, grid states, accepted step count). Grid
    values between accepted steps come from cubic Hermite interpolation.
    """
    n = y0.shape[0]
    out = np.empty((n_out, n))
    grid_dt = t_end / (n_out - 1)
    out[0, :] = y0
    next_idx = 1

    y = y0.copy()
    f = np.empty(n)
    rhs_kernel(code, y, p, f)
    if not (_all_finite(f)):
        return NON_FINITE, 0.0, out, 0

    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    ytmp = np.empty(n)
    ynew = np.empty(n)
    err = np.empty(n)

    t = 0.0
    h = _initial_step(code, y, f, p, t_end, rtol, atol)
    steps = 0
    accepted = 0
    rejected_last = False
    while t < t_end:
        if steps >= max_steps:
            return STEP_LIMIT, t, out, accepted
        steps += 1
        if t + h > t_end:
            h = t_end - t
        if h <= 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
            return STEP_UNDERFLOW, t, out, accepted

        ytmp[:] = y + h * _A21 * f
        rhs_kernel(code, ytmp, p, k2)
        ytmp[:] = y + h * (_A31 * f + _A32 * k2)
        rhs_kernel(code, ytmp, p, k3)
        ytmp[:] = y + h * (_A41 * f + _A42 * k2 + _A43 * k3)
        rhs_kernel(code, ytmp, p, k4)
        ytmp[:] = y + h * (_A51 * f + _A52 * k2 + _A53 * k3 + _A54 * k4)
        rhs_kernel(code, ytmp, p, k5)
        ytmp[:] = y + h * (_A61 * f + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
        rhs_kernel(code, ytmp, p, k6)
        ynew[:] = y + h * (_B1 * f + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        rhs_kernel(code, ynew, p, k7)
        err[:] = h * (_E1 * f + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)

        if not (_all_finite(ynew) and _all_finite(k7)):
            # A blow-up inside the step may be a step-size artifact; shrink first.
            h *= 0.1
            rejected_last = True
            if h < 1e-12 * t_end:
                return NON_FINITE, t, out, accepted
            continue

        en = _err_norm(err, y, ynew, rtol, atol)
        if en <= 1.0:
            t_new = t + h
            # fill every grid point in (t, t_new]
            while next_idx < n_out and next_idx * grid_dt <= t_new + 1e-12 * t_end:
                tg = next_idx * grid_dt
                if next_idx == n_out - 1:
                    tg = t_end
                s = (tg - t) / h
                if s > 1.0:
                    s = 1.0
                s2 = s * s
                s3 = s2 * s
                h00 = 2.0 * s3 - 3.0 * s2 + 1.0
                h10 = s3 - 2.0 * s2 + s
                h01 = -2.0 * s3 + 3.0 * s2
                h11 = s3 - s2
                out[next_idx, :] = h00 * y + h10 * h * f + h01 * ynew + h11 * h * k7
                next_idx += 1
            t = t_new
            y[:] = ynew
            f[:] = k7
            accepted += 1
            if en == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, max(0.2, 0.9 * en ** -0.2))
            if rejected_last:
                fac = min(fac, 1.0)
            rejected_last = False
            h *= fac
        else:
            h *= max(0.2, 0.9 * en ** -0.2)
            rejected_last = True
    while next_idx < n_out:
        out[next_idx, :] = y
        next_idx += 1
    return OK, t, out, accepted


def _integrate_dopri(spec, y0, p, t_end, cfg, n_out):
    with np.errstate(all="ignore"):
        status, t_reached, states, _ = dopri_grid(
            spec.code, y0, p, float(t_end), cfg.rel_tol, cfg.abs_tol,
            int(cfg.max_steps), int(n_out),
        )
    if status == STEP_LIMIT:
        raise IntegrationError(f"step budget of {cfg.max_steps} exhausted", t_reached)
    if status == STEP_UNDERFLOW:
        raise IntegrationError("step size underflow", t_reached)
    if status == NON_FINITE or not np.all(np.isfinite(states)):
        raise NumericDomainError(f"state became non-finite near t={t_reached:.6g}")
    return states


def _integrate_lsoda(spec, y0, p, t_end, cfg, times):
    code = spec.code
    n = spec.state_dim

    def fun(_t, u):
        out = np.empty(n)
        rhs_kernel(code, u, p, out)
        return out

    with np.errstate(all="ignore"):
        sol = solve_ivp(
            fun, (0.0, float(t_end)), y0, method="LSODA", t_eval=times,
            rtol=cfg.rel_tol, atol=cfg.abs_tol,
        )
    reached = float(sol.t[-1]) if sol.t.size else 0.0
    if sol.status != 0 or sol.y.shape[1] != len(times):
        raise IntegrationError(f"LSODA failed: {sol.message}", reached)
    states = np.ascontiguousarray(sol.y.T)
    if not np.all(np.isfinite(states)):
        raise NumericDomainError(f"state became non-finite before t={reached:.6g}")
    return states


def integrate(
    spec: SystemSpec,
    coeffs,
    cfg: IntegrationConfig | None = None,
    t_end: float | None = None,
    output_grid_size: int | None = None,
) -> Trajectory:
    """Solve the system ODE over [0, T] and return it on a uniform grid.

    ``t_end`` and ``output_grid_size`` override the system horizon and the
    configured grid; they exist for horizon extension during labeling.
    """
    cfg = cfg or IntegrationConfig()
    p = np.ascontiguousarray(coeffs, dtype=float)
    if p.shape != (spec.coeff_dim,):
        raise ValueError(f"expected {spec.coeff_dim} coefficients, got shape {p.shape}")
    if spec.system_id is SystemId.MPF and p[5] == 0.0:
        raise ZeroDivisionError("MPF ratio G = 1 + l5/l6 is undefined for l6 = 0")
    t_end = float(spec.t_end if t_end is None else t_end)
    n_out = int(output_grid_size or cfg.output_grid_size)
    y0 = np.asarray(spec.initial_state, dtype=float)
    times = np.linspace(0.0, t_end, n_out)
    method = cfg.method or spec.preferred_method
    if method == "lsoda":
        states = _integrate_lsoda(spec, y0, p, t_end, cfg, times)
    elif method == "dopri5":
        states = _integrate_dopri(spec, y0, p, t_end, cfg, n_out)
    else:
        try:
            states = _integrate_dopri(spec, y0, p, t_end, cfg, n_out)
        except IntegrationError:
            states = _integrate_lsoda(spec, y0, p, t_end, cfg, times)
    return Trajectory(times=times, states=states)
