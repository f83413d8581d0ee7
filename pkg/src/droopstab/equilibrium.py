"""Steady-state solver for the grid model.

At any equilibrium the angle equation pins all frequencies to the grid
nominal, so Newton runs on the reduced unknowns (delta, V, I_D, I_Q) with
omega eliminated.  Convergence is judged on the row-scaled residual (each
filter row times its time constant, each current row times L/omega_b): that
is the per-unit steady-state mismatch, and unlike the raw vector field its
achievable floor does not blow up as the timescale separation grows.  The
raw field norm is reported alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import (GridSpec, OperatingPoint, extended_incidence,
                   extended_voltages, filter_constants, line_impedances,
                   setpoints, vector_field)
from .linearize import jacobian


@dataclass
class EquilibriumResult:
    point: OperatingPoint
    residual_norm: float          # inf-norm of the scaled steady-state mismatch
    iterations: int
    converged: bool
    field_norm: float = float("nan")   # inf-norm of the raw vector field
    message: str = ""
    residual_history: list[float] = field(default_factory=list)


def flat_start(spec: GridSpec) -> OperatingPoint:
    """Zero angles, nominal frequency, setpoint voltages, consistent line currents.

    The currents come from one linear solve of the steady-state line
    equations at those voltages; the current-current block is always
    invertible for positive line resistance.
    """
    n, m = spec.n, spec.m
    omega_b = spec.bases.omega_b
    _, v_d, _, _ = setpoints(spec)
    point = OperatingPoint(
        delta=np.zeros(n),
        omega=np.full(n, omega_b),
        voltage=v_d.copy(),
        i_d=np.zeros(m),
        i_q=np.zeros(m),
    )
    r, x, _ = line_impedances(spec)
    c_t = extended_incidence(spec)
    vbar_d, vbar_q = extended_voltages(spec, point)
    a_yy = np.block([[np.diag(-r), np.diag(x)], [np.diag(-x), np.diag(-r)]])
    y = np.linalg.solve(a_yy, -np.concatenate([c_t @ vbar_d, c_t @ vbar_q]))
    point.i_d = y[:m]
    point.i_q = y[m:]
    return point


def _row_scale(spec: GridSpec) -> np.ndarray:
    t_p, t_q = filter_constants(spec)
    _, _, l = line_impedances(spec)
    e2 = l / spec.bases.omega_b
    return np.concatenate([t_p, t_q, e2, e2])


def _residual(spec: GridSpec, u: np.ndarray, n: int, m: int,
              scale: np.ndarray) -> tuple[np.ndarray, np.ndarray, OperatingPoint]:
    point = OperatingPoint(
        delta=u[:n].copy(),
        omega=np.full(n, spec.bases.omega_b),
        voltage=u[n:2 * n].copy(),
        i_d=u[2 * n:2 * n + m].copy(),
        i_q=u[2 * n + m:].copy(),
    )
    f = vector_field(spec, point)[n:]   # angle rows vanish identically with omega pinned
    return scale * f, f, point


def find_equilibrium(spec: GridSpec, guess: OperatingPoint | None = None,
                     tol: float = 1e-10, max_iter: int = 50) -> EquilibriumResult:
    """Damped Newton iteration for a vanishing vector field.

    tol bounds the inf-norm of the scaled mismatch.  Returns converged=False
    (never raises) on singular iteration matrices, stalls, or iteration
    exhaustion; the message carries the diagnosis.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = spec.n, spec.m
    if guess is None:
        guess = flat_start(spec)
    u = np.concatenate([guess.delta, guess.voltage, guess.i_d, guess.i_q])
    keep_cols = np.r_[np.arange(0, n), np.arange(2 * n, 3 * n + 2 * m)]
    scale = _row_scale(spec)

    res, f, point = _residual(spec, u, n, m, scale)
    norm = float(np.abs(res).max())
    merit = float(np.linalg.norm(res))   # damping works on the smooth 2-norm
    history = [norm]

    def result(it, converged, message=""):
        return EquilibriumResult(point, norm, it, converged,
                                 field_norm=float(np.abs(f).max()),
                                 message=message, residual_history=history)

    for it in range(max_iter):
        if norm <= tol:
            return result(it, True)
        jac = scale[:, None] * jacobian(spec, point)[n:, :][:, keep_cols]
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            return result(it, False,
                          f"singular Newton matrix (cond~{np.linalg.cond(jac):.2e})")
        # step halving until the residual drops enough to make progress
        t = 1.0
        for _ in range(30):
            res_new, f_new, point_new = _residual(spec, u + t * step, n, m, scale)
            merit_new = float(np.linalg.norm(res_new))
            if np.isfinite(merit_new) and merit_new <= (1.0 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            return result(it, False, "Newton stalled: no descent after 30 halvings")
        u = u + t * step
        res, f, point, merit = res_new, f_new, point_new, merit_new
        norm = float(np.abs(res).max())
        history.append(norm)

    return result(max_iter, norm <= tol,
                  "" if norm <= tol else f"max_iter={max_iter} exceeded")


# ---------------------------------------------------------------------------
# operating point files (same JSON family as the grid spec)

def point_to_dict(point: OperatingPoint) -> dict:
    return {
        "delta": point.delta.tolist(),
        "omega": point.omega.tolist(),
        "voltage": point.voltage.tolist(),
        "i_d": point.i_d.tolist(),
        "i_q": point.i_q.tolist(),
    }


def point_from_dict(d: dict) -> OperatingPoint:
    return OperatingPoint(**{k: np.asarray(d[k], dtype=float)
                             for k in ("delta", "omega", "voltage", "i_d", "i_q")})


def save_point(point: OperatingPoint, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(point_to_dict(point), f, indent=2)
        f.write("\n")


def load_point(path) -> OperatingPoint:
    with open(path, "r", encoding="utf-8") as f:
        return point_from_dict(json.load(f))
