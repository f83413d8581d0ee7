"""Time-domain integration of the nonlinear and linearized grid dynamics.

Explicit adaptive 5(4) integration.  The full grid is stiff (line currents
are orders of magnitude faster than the droop filters), which an explicit
method pays for in step count; horizons at desk scale are short enough that
this stays cheap, and the step-floor policy makes the cost visible instead
of hiding it: steps are clamped at a floor, a stiffness warning is recorded,
and the run aborts with a partial trajectory if the floor persists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, OperatingPoint, packed_field, spec_hash

logger = logging.getLogger(__name__)

# Dormand-Prince 5(4) tableau; the last stage row doubles as the 5th-order weights
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])


@dataclass
class StepPolicy:
    rtol: float = 1e-8
    atol: float = 1e-10
    h_min: float = 1e-9          # step floor (s); hitting it flags stiffness
    max_floor_steps: int = 10_000  # consecutive floor steps before aborting


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray           # one row per accepted step
    metadata: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _integrate(f, w0: np.ndarray, horizon: float, ctrl: StepPolicy, metadata: dict) -> Trajectory:
    w = np.asarray(w0, dtype=float).copy()
    t = 0.0
    times = [t]
    states = [w.copy()]
    warnings: list[str] = []
    aborted = False

    f0 = f(w)
    scale = ctrl.atol + ctrl.rtol * np.abs(w)
    d0 = float(np.sqrt(np.mean((w / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h = min(horizon, 0.01 * d0 / d1 if d1 > 1e-30 else 1e-6)
    h = max(h, ctrl.h_min)

    k = np.empty((7, w.size))
    floor_streak = 0
    stiff_warned = False
    while t < horizon:
        h = min(h, horizon - t)
        at_floor = h <= ctrl.h_min and t + ctrl.h_min < horizon
        k[0] = f(w)
        for i in range(1, 7):
            k[i] = f(w + h * (_A[i] @ k[:i]))
        w_new = w + h * (_B5 @ k)
        err = h * ((_B5 - _B4) @ k)
        err_norm = float(np.linalg.norm(err))
        tol = ctrl.rtol * float(np.linalg.norm(w_new)) + ctrl.atol
        accept = err_norm <= tol or at_floor
        if accept:
            if not np.all(np.isfinite(w_new)):
                warnings.append("state became non-finite; aborting with partial trajectory")
                aborted = True
                break
            t += h
            w = w_new
            times.append(t)
            states.append(w.copy())
            floor_streak = floor_streak + 1 if at_floor else 0
            if at_floor and not stiff_warned:
                warnings.append(f"stiffness: step clamped at floor {ctrl.h_min:g} s")
                logger.warning("stiffness: step clamped at floor %g s", ctrl.h_min)
                stiff_warned = True
            if floor_streak > ctrl.max_floor_steps:
                warnings.append(f"step floor persisted for {floor_streak} steps; "
                                f"aborting with partial trajectory")
                aborted = True
                break
        factor = 0.9 * (tol / err_norm) ** 0.2 if err_norm > 0 else 5.0
        h = h * min(5.0, max(0.2, factor))
        h = max(h, ctrl.h_min)

    metadata = dict(metadata, rtol=ctrl.rtol, atol=ctrl.atol, warnings=warnings,
                    aborted=aborted)
    return Trajectory(np.array(times), np.array(states), metadata)


def simulate_nonlinear(spec: GridSpec, x0: OperatingPoint, horizon: float,
                       ctrl: StepPolicy | None = None) -> Trajectory:
    """Integrate the nonlinear grid dynamics from a state for a time horizon (s)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ctrl = ctrl or StepPolicy()
    meta = {"method": "explicit adaptive RK 5(4)", "model": "nonlinear",
            "spec_hash": spec_hash(spec)}
    return _integrate(packed_field(spec), x0.as_vector(), horizon, ctrl, meta)


def simulate_linear(a: np.ndarray, w0: np.ndarray, horizon: float,
                    ctrl: StepPolicy | None = None) -> Trajectory:
    """Integrate dw/dt = A w from an initial deviation."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ctrl = ctrl or StepPolicy()
    a = np.asarray(a, dtype=float)
    meta = {"method": "explicit adaptive RK 5(4)", "model": "linear"}
    return _integrate(lambda w: a @ w, np.asarray(w0, dtype=float), horizon, ctrl, meta)


def decay_rate(traj: Trajectory, window: float = 0.5,
               reference: np.ndarray | None = None) -> float:
    """Least-squares slope of log||state - reference|| over the trailing window.

    Negative for decaying trajectories; positive rates are returned as-is so
    callers can detect growth.
    """
    if not 0.0 < window <= 1.0:
        raise ValueError("window must be a fraction in (0, 1]")
    ref = np.zeros(traj.states.shape[1]) if reference is None else np.asarray(reference)
    norms = np.linalg.norm(traj.states - ref, axis=1)
    t0 = traj.times[-1] - window * (traj.times[-1] - traj.times[0])
    mask = (traj.times >= t0) & (norms > 1e-300)
    if mask.sum() < 2:
        raise ValueError("trajectory has too few usable points in the window")
    slope, _ = np.polyfit(traj.times[mask], np.log(norms[mask]), 1)
    return float(slope)


def trajectory_to_csv(traj: Trajectory, path, n: int, m: int) -> None:
    """Write a trajectory as CSV with one shortest-round-trip float per cell."""
    header = (["t"]
              + [f"delta_{i+1}" for i in range(n)]
              + [f"omega_{i+1}" for i in range(n)]
              + [f"v_{i+1}" for i in range(n)]
              + [f"id_{i+1}" for i in range(m)]
              + [f"iq_{i+1}" for i in range(m)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(",".join(repr(float(v)) for v in np.concatenate([[t], row])) + "\n")
