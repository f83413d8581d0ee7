"""Analytic Jacobian of the grid dynamics and its timescale block structure.

The Jacobian rows of (omega, V) are rescaled by the common filter time
constant and the line-current rows by each line's L/omega_b, so that the
extracted blocks carry no small multipliers.  That makes the angle rows
exactly [I 0], the filter rows start at -I, and the current-current block
equal to [[-R, X], [-X, -R]].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import (GridSpec, OperatingPoint, bus_currents, droop_gains,
                   extended_incidence, filter_constants, inverter_incidence,
                   line_impedances, load_matrices)


class HomogeneityError(ValueError):
    """Filter time constants differ beyond the accepted spread."""


@dataclass(frozen=True)
class PQDerivatives:
    """Partial derivatives of the inverter power injections at a state."""

    dp_ddelta: np.ndarray
    dp_dv: np.ndarray
    dp_did: np.ndarray
    dp_diq: np.ndarray
    dq_ddelta: np.ndarray
    dq_dv: np.ndarray
    dq_did: np.ndarray
    dq_diq: np.ndarray


@dataclass
class BlockSystem:
    """Jacobian blocks in the (angle | filter | line-current) partition.

    x = angle deviations (N), z = frequency and voltage deviations (2N),
    y = line current deviations (2M).  eps1 multiplies dz/dt, eps2_list
    holds the per-line constants L_i/omega_b; after conversion to the
    single-parameter form, eps2 is their geometric mean and d2 rebalances
    the current rows.
    """

    a_xz: np.ndarray
    a_zz: np.ndarray
    a_zx: np.ndarray
    a_zy: np.ndarray
    a_yz: np.ndarray
    a_yx: np.ndarray
    a_yy: np.ndarray
    eps1: float
    eps2_list: np.ndarray
    eps2: float | None = None
    d2: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.a_xz.shape[0]

    @property
    def m(self) -> int:
        return self.a_yy.shape[0] // 2


def pq_derivatives(spec: GridSpec, point: OperatingPoint) -> PQDerivatives:
    """All partials of (P, Q) with respect to (delta, V, I_D, I_Q)."""
    c = np.cos(point.delta)
    s = np.sin(point.delta)
    v = point.voltage
    c_i = inverter_incidence(spec)
    c_ld, c_lq = load_matrices(spec)
    ibus_d, ibus_q = bus_currents(spec, point)

    d_cv = np.diag(c * v)
    d_sv = np.diag(s * v)
    # stacked (V_D, V_Q) sensitivities
    dvdq_ddelta = np.vstack([np.diag(-s * v), np.diag(c * v)])
    dvdq_dv = np.vstack([np.diag(c), np.diag(s)])

    dibusd_ddelta = c_ld @ dvdq_ddelta
    dibusd_dv = c_ld @ dvdq_dv
    dibusq_ddelta = c_lq @ dvdq_ddelta
    dibusq_dv = c_lq @ dvdq_dv

    dp_ddelta = (np.diag(-s * v * ibus_d + c * v * ibus_q)
                 + d_cv @ dibusd_ddelta + d_sv @ dibusq_ddelta)
    dp_dv = (np.diag(c * ibus_d + s * ibus_q)
             + d_cv @ dibusd_dv + d_sv @ dibusq_dv)
    dq_ddelta = (np.diag(c * v * ibus_d + s * v * ibus_q)
                 + d_sv @ dibusd_ddelta - d_cv @ dibusq_ddelta)
    dq_dv = (np.diag(s * ibus_d - c * ibus_q)
             + d_sv @ dibusd_dv - d_cv @ dibusq_dv)
    return PQDerivatives(
        dp_ddelta=dp_ddelta, dp_dv=dp_dv,
        dp_did=d_cv @ c_i, dp_diq=d_sv @ c_i,
        dq_ddelta=dq_ddelta, dq_dv=dq_dv,
        dq_did=d_sv @ c_i, dq_diq=-d_cv @ c_i,
    )


def jacobian(spec: GridSpec, point: OperatingPoint) -> np.ndarray:
    """Analytic Jacobian of the vector field at a state, (3N+2M) square."""
    n, m = spec.n, spec.m
    omega_b = spec.bases.omega_b
    k_p, k_q = droop_gains(spec)
    t_p, t_q = filter_constants(spec)
    r, x, l = line_impedances(spec)
    c = np.cos(point.delta)
    s = np.sin(point.delta)
    v = point.voltage
    pq = pq_derivatives(spec, point)
    c_t_inv = extended_incidence(spec)[:, :n]    # feeder column dropped: constant source

    a = np.zeros((3 * n + 2 * m, 3 * n + 2 * m))
    sl_d = slice(0, n)
    sl_w = slice(n, 2 * n)
    sl_v = slice(2 * n, 3 * n)
    sl_id = slice(3 * n, 3 * n + m)
    sl_iq = slice(3 * n + m, 3 * n + 2 * m)

    a[sl_d, sl_w] = np.eye(n)

    gp = (k_p / t_p)[:, None]
    a[sl_w, sl_d] = -gp * pq.dp_ddelta
    a[sl_w, sl_w] = np.diag(-1.0 / t_p)
    a[sl_w, sl_v] = -gp * pq.dp_dv
    a[sl_w, sl_id] = -gp * pq.dp_did
    a[sl_w, sl_iq] = -gp * pq.dp_diq

    gq = (k_q / t_q)[:, None]
    a[sl_v, sl_d] = -gq * pq.dq_ddelta
    a[sl_v, sl_v] = np.diag(-1.0 / t_q) - gq * pq.dq_dv
    a[sl_v, sl_id] = -gq * pq.dq_did
    a[sl_v, sl_iq] = -gq * pq.dq_diq

    wl = (omega_b / l)[:, None]
    a[sl_id, sl_d] = wl * (c_t_inv @ np.diag(-s * v))
    a[sl_id, sl_v] = wl * (c_t_inv @ np.diag(c))
    a[sl_id, sl_id] = np.diag(-omega_b * r / l)
    a[sl_id, sl_iq] = np.diag(omega_b * x / l)

    a[sl_iq, sl_d] = wl * (c_t_inv @ np.diag(c * v))
    a[sl_iq, sl_v] = wl * (c_t_inv @ np.diag(s))
    a[sl_iq, sl_id] = np.diag(-omega_b * x / l)
    a[sl_iq, sl_iq] = np.diag(-omega_b * r / l)
    return a


def homogeneous_filter_constant(spec: GridSpec, rel_tol: float = 1e-9) -> float:
    """Common filter time constant; the whole timescale split assumes one.

    All t_p and t_q must agree to within rel_tol of their mean; the mean is
    returned.  A violation names the worst-offending inverter.
    """
    t_p, t_q = filter_constants(spec)
    t_all = np.concatenate([t_p, t_q])
    mean = float(t_all.mean())
    dev = np.abs(t_all - mean)
    worst = int(np.argmax(dev))
    if dev[worst] > rel_tol * mean:
        i = worst % spec.n
        kind = "T_p" if worst < spec.n else "T_q"
        raise HomogeneityError(
            f"filter time constants are not homogeneous: {kind} of inverter at bus "
            f"{spec.inverters[i].bus} deviates {dev[worst]:.3e} from mean {mean:.6g} "
            f"(rel_tol={rel_tol:g})")
    return mean


def extract_blocks(a: np.ndarray, spec: GridSpec, rel_tol: float = 1e-9) -> BlockSystem:
    """Slice the Jacobian into timescale blocks, absorbing the small multipliers.

    Raises HomogeneityError if the filter constants disagree beyond rel_tol.
    The angle rows must structurally have zero coupling to anything but the
    frequencies; that is asserted here as an internal consistency check.
    """
    n, m = spec.n, spec.m
    eps1 = homogeneous_filter_constant(spec, rel_tol)
    _, _, l = line_impedances(spec)
    eps2_list = l / spec.bases.omega_b

    sl_x = slice(0, n)
    sl_z = slice(n, 3 * n)
    sl_y = slice(3 * n, 3 * n + 2 * m)

    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a[sl_x, sl_x]).max(initial=0.0) > 1e-12 * scale or \
       np.abs(a[sl_x, sl_y]).max(initial=0.0) > 1e-12 * scale:
        raise AssertionError("angle rows couple beyond the frequencies; Jacobian is inconsistent")

    e2 = np.concatenate([eps2_list, eps2_list])[:, None]
    return BlockSystem(
        a_xz=a[sl_x, sl_z].copy(),
        a_zz=eps1 * a[sl_z, sl_z],
        a_zx=eps1 * a[sl_z, sl_x],
        a_zy=eps1 * a[sl_z, sl_y],
        a_yz=e2 * a[sl_y, sl_z],
        a_yx=e2 * a[sl_y, sl_x],
        a_yy=e2 * a[sl_y, sl_y],
        eps1=eps1,
        eps2_list=eps2_list,
    )


def to_standard_form(b: BlockSystem) -> BlockSystem:
    """Collapse per-line constants into one geometric-mean constant plus a rebalancing d2."""
    if np.any(b.eps2_list <= 0):
        raise ValueError("line time constants must be positive")
    eps2 = float(np.exp(np.mean(np.log(b.eps2_list))))
    d = eps2 / b.eps2_list
    return replace(b, eps2=eps2, d2=np.diag(np.concatenate([d, d])))


def assemble_full(b: BlockSystem) -> np.ndarray:
    """Reassemble the monolithic Jacobian from the blocks (test hook)."""
    n, m = b.n, b.m
    a = np.zeros((3 * n + 2 * m, 3 * n + 2 * m))
    e2 = np.concatenate([b.eps2_list, b.eps2_list])[:, None]
    a[:n, n:3 * n] = b.a_xz
    a[n:3 * n, :n] = b.a_zx / b.eps1
    a[n:3 * n, n:3 * n] = b.a_zz / b.eps1
    a[n:3 * n, 3 * n:] = b.a_zy / b.eps1
    a[3 * n:, :n] = b.a_yx / e2
    a[3 * n:, n:3 * n] = b.a_yz / e2
    a[3 * n:, 3 * n:] = b.a_yy / e2
    return a
