"""Quasi-steady-state reduction across the three grid timescales.

Eliminating the line currents (the fastest states) leaves a frequency/voltage
subsystem whose matrix, in (omega, V) ordering, is block upper triangular:
the frequency block is exactly -I and the lower-right N x N block carries all
the voltage-droop coupling.  That block is built two independent ways here --
extracted from the reduced matrix and assembled in closed form from network
sensitivities -- which cross-validates the whole linearization chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FEEDER_BUS, GridSpec, OperatingPoint, line_impedances
from .linearize import BlockSystem, pq_derivatives


class IllConditionedError(RuntimeError):
    """Reduction refused: downstream constants would be numerically meaningless."""


@dataclass
class ReducedModel:
    a0z: np.ndarray         # line-current manifold gain w.r.t. (omega, V)
    a0x: np.ndarray         # line-current manifold gain w.r.t. angles
    azz_tilde: np.ndarray   # reduced frequency/voltage matrix
    azx_tilde: np.ndarray   # reduced angle coupling
    gamma0: np.ndarray      # frequency/voltage manifold gain w.r.t. angles
    e_matrix: np.ndarray    # voltage-droop coupling block (extracted)
    a_slow: np.ndarray      # angle subsystem matrix
    ayy_tilde: np.ndarray   # rebalanced line-current matrix


def very_fast_manifold(b: BlockSystem) -> tuple[np.ndarray, np.ndarray]:
    """Current manifold gains: the currents the lines settle to for frozen (x, z)."""
    a0z = np.linalg.solve(b.a_yy, -b.a_yz)
    a0x = np.linalg.solve(b.a_yy, -b.a_yx)
    return a0z, a0x


def reduce_network(b: BlockSystem,
                   manifold: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Substitute the current manifold into the frequency/voltage rows."""
    a0z, a0x = manifold
    return b.a_zz + b.a_zy @ a0z, b.a_zx + b.a_zy @ a0x


def slow_matrix(azz_tilde: np.ndarray, azx_tilde: np.ndarray, a_xz: np.ndarray,
                cond_limit: float = 1e12) -> tuple[np.ndarray, np.ndarray]:
    """Angle subsystem matrix and the frequency/voltage manifold gain.

    Refuses near-singular reductions: a voltage droop gain that exactly
    cancels a diagonal coupling term makes the reduced matrix singular and
    every constant downstream meaningless.
    """
    cond = float(np.linalg.cond(azz_tilde))
    if not np.isfinite(cond) or cond > cond_limit:
        eigvals = np.linalg.eigvals(azz_tilde)
        nearest = eigvals[np.argmin(np.abs(eigvals))]
        raise IllConditionedError(
            f"reduced frequency/voltage matrix is near singular "
            f"(cond~{cond:.2e}, smallest mode {nearest:.3e}); refusing to build "
            f"the angle subsystem")
    gamma0 = -np.linalg.solve(azz_tilde, azx_tilde)
    a_slow = a_xz @ gamma0
    return a_slow, gamma0


def voltage_coupling_extracted(azz_tilde: np.ndarray, n: int,
                               tol: float = 1e-9) -> np.ndarray:
    """Lower-right N x N block of the reduced matrix in (omega, V) ordering.

    The frequency block must be -I and the lower-left block zero; a violation
    signals an inconsistent Jacobian, not bad data, hence the hard error.
    """
    scale = max(1.0, float(np.abs(azz_tilde).max()))
    top_left = azz_tilde[:n, :n]
    bottom_left = azz_tilde[n:, :n]
    if np.abs(top_left + np.eye(n)).max() > tol * scale:
        raise AssertionError("frequency block of the reduced matrix is not -I")
    if np.abs(bottom_left).max(initial=0.0) > tol * scale:
        raise AssertionError("voltage rows of the reduced matrix couple to frequency")
    return azz_tilde[n:, n:].copy()


def build_reduced_model(b: BlockSystem) -> ReducedModel:
    """Full reduction chain from a standard-form block system."""
    if b.d2 is None:
        raise ValueError("block system must be in standard form (d2 missing)")
    a0z, a0x = very_fast_manifold(b)
    azz_tilde, azx_tilde = reduce_network(b, (a0z, a0x))
    a_slow, gamma0 = slow_matrix(azz_tilde, azx_tilde, b.a_xz)
    e_matrix = voltage_coupling_extracted(azz_tilde, b.n)
    return ReducedModel(
        a0z=a0z, a0x=a0x,
        azz_tilde=azz_tilde, azx_tilde=azx_tilde,
        gamma0=gamma0, e_matrix=e_matrix, a_slow=a_slow,
        ayy_tilde=b.d2 @ b.a_yy,
    )


# ---------------------------------------------------------------------------
# closed-form voltage coupling

def nu_terms(spec: GridSpec, point: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """Voltage sensitivities of the reactive injections on the current manifold.

    nu[i] is minus the total derivative dQ_i/dV_i once the line currents have
    settled; nu_off[i, j] the cross term towards each adjacent inverter.  The
    reactive-power partials come from the analytic linearization so there is a
    single source of truth for derivatives.
    """
    n = spec.n
    pq = pq_derivatives(spec, point)
    c = np.cos(point.delta)
    s = np.sin(point.delta)
    idx = {inv.bus: i for i, inv in enumerate(spec.inverters)}

    nu = -np.diag(pq.dq_dv).copy()
    nu_off = np.zeros((n, n))
    for k, line in enumerate(spec.lines):
        r, x = line.r_pu, line.x_pu
        z2 = r * r + x * x
        ends = [(line.from_bus, -1.0), (line.to_bus, +1.0)]  # -1 at a line's beginning
        for bus_i, theta in ends:
            if bus_i == FEEDER_BUS:
                continue
            i = idx[bus_i]
            # theta is set by inverter i's own position for both terms below
            nu[i] += (pq.dq_did[i, k] * (r * c[i] + x * s[i]) / z2
                      - pq.dq_diq[i, k] * (x * c[i] - r * s[i]) / z2) * theta
            for bus_j, _ in ends:
                if bus_j == bus_i or bus_j == FEEDER_BUS:
                    continue
                j = idx[bus_j]
                nu_off[i, j] += (-pq.dq_did[i, k] * (r * c[j] + x * s[j]) / z2
                                 + pq.dq_diq[i, k] * (x * c[j] - r * s[j]) / z2) * theta
    return nu, nu_off


def voltage_coupling_closed_form(spec: GridSpec, point: OperatingPoint) -> np.ndarray:
    """Voltage-droop coupling block assembled from the nu sensitivities.

    Entry (i, i) is k_q,i * nu_i - 1; entry (i, j) is k_q,i * nu_ij for
    adjacent inverters and zero otherwise.
    """
    nu, nu_off = nu_terms(spec, point)
    k_q = np.array([inv.k_q for inv in spec.inverters])
    e = k_q[:, None] * nu_off
    np.fill_diagonal(e, k_q * nu - 1.0)
    return e


def timescale_overlap_ratio(b: BlockSystem) -> float:
    """max/min spread of the per-line time constants (reported, not enforced)."""
    return float(b.eps2_list.max() / b.eps2_list.min())
