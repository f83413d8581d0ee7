"""Lyapunov certificates and the composite timescale-separation bounds.

For each of the three subsystems (angle, frequency/voltage, line current) a
quadratic Lyapunov function is solved for; scalar decay and cross-coupling
constants then combine into two thresholds:

* eps1_star -- the largest power-filter time constant for which stability of
  the angle and frequency/voltage subsystems implies stability of their
  interconnection;
* eps3_star -- the largest line-to-filter timescale ratio for which that
  reduced system plus the line dynamics stay stable as a whole.

Sign conventions: decay constants (alpha) are minimum eigenvalues of the
chosen right-hand-side matrices; coupling gains (beta) are largest singular
values; interference terms (gamma) are clamped nonnegative, with the raw
value kept for reporting, since a helpful negative interference would loosen
the thresholds beyond what the quadratic bounds justify.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linearize import BlockSystem
from .timescale import ReducedModel

logger = logging.getLogger(__name__)

LYAPUNOV_RESIDUAL_LIMIT = 1e-8


class CertificateInfeasibleError(RuntimeError):
    """A certificate prerequisite fails (non-Hurwitz source or indefinite bound matrix)."""


def spectral_abscissa(a: np.ndarray) -> float:
    """Largest real part over the eigenvalues."""
    return float(np.linalg.eigvals(a).real.max())


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def lambda_min(a: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part (what quadratic forms see)."""
    return float(np.linalg.eigvalsh(sym(a)).min())


def sigma_max(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def lyapunov_residual(a: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return float(np.linalg.norm(a.T @ p + p @ a + q) / np.linalg.norm(q))


def solve_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve A^T P + P A = -Q for symmetric positive definite P.

    Vectorized linear-system method; at desk scale the dense Kronecker solve
    is simple and residual-checked.  Raises CertificateInfeasibleError when A
    is not Hurwitz (no positive definite solution exists then).
    """
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    n = a.shape[0]
    abscissa = spectral_abscissa(a)
    if abscissa >= 0.0:
        raise CertificateInfeasibleError(
            f"matrix is not Hurwitz (spectral abscissa {abscissa:.3e}); "
            f"no Lyapunov certificate exists")
    eye = np.eye(n)
    k = np.kron(eye, a.T) + np.kron(a.T, eye)
    p = np.linalg.solve(k, -q.flatten(order="F")).reshape((n, n), order="F")
    p = sym(p)
    residual = lyapunov_residual(a, p, q)
    if residual > LYAPUNOV_RESIDUAL_LIMIT:
        logger.warning("ill-conditioned Lyapunov solve: relative residual %.3e", residual)
    if float(np.linalg.eigvalsh(p).min()) <= 0.0:
        raise CertificateInfeasibleError("Lyapunov solution is not positive definite")
    return p


# ---------------------------------------------------------------------------
# scalar constants

def slow_constants(a_slow: np.ndarray, a_xz: np.ndarray, p_slow: np.ndarray,
                   q_slow: np.ndarray) -> tuple[float, float]:
    """Decay of the angle subsystem and its gain into frequency/voltage deviations."""
    alpha1 = float(np.linalg.eigvalsh(sym(q_slow)).min())
    beta1 = sigma_max((p_slow + p_slow.T) @ a_xz)
    return alpha1, beta1


def fast_constants(gamma0: np.ndarray, a_xz: np.ndarray, h_fast: np.ndarray,
                   q_fast: np.ndarray) -> tuple[float, float, float, float]:
    """Decay of the frequency/voltage subsystem plus manifold-drift interference.

    Returns (alpha2, gamma1, beta2, gamma1_raw); gamma1 is clamped at zero.
    """
    alpha2 = float(np.linalg.eigvalsh(sym(q_fast)).min())
    z = (h_fast + h_fast.T) @ gamma0 @ a_xz
    gamma1_raw = -lambda_min(z)
    beta2 = sigma_max(z @ gamma0)
    return alpha2, max(0.0, gamma1_raw), beta2, gamma1_raw


def slow_fast_threshold(alpha1: float, alpha2: float, gamma1: float,
                        beta1: float, beta2: float):
    """Composite weight d1, the filter-constant threshold, and the full d-curve.

    The returned curve gives the threshold for any weight d in (0, 1); the
    analytic weight beta1/(beta1+beta2) maximizes it.  With both coupling
    gains zero the weight defaults to 1/2 and the threshold degenerates to
    alpha1*alpha2/(alpha1*gamma1), infinite when gamma1 is also zero.
    """
    if alpha1 <= 0 or alpha2 <= 0:
        raise CertificateInfeasibleError("decay constants must be positive")

    def threshold_at(d: float) -> float:
        if not 0.0 < d < 1.0:
            raise ValueError("weight must lie strictly inside (0, 1)")
        coupling = ((1.0 - d) * beta1 + d * beta2) ** 2 / (4.0 * d * (1.0 - d))
        den = alpha1 * gamma1 + coupling
        return alpha1 * alpha2 / den if den > 0 else np.inf

    if beta1 + beta2 == 0.0:
        d1 = 0.5
    else:
        d1 = beta1 / (beta1 + beta2)
    den = alpha1 * gamma1 + beta1 * beta2
    eps1_star = alpha1 * alpha2 / den if den > 0 else np.inf
    return d1, eps1_star, threshold_at


def composite_decay_matrix(d1: float, eps1: float, alpha1: float, alpha2: float,
                           beta1: float, beta2: float, gamma1: float) -> np.ndarray:
    """2x2 decay matrix of the weighted slow/fast Lyapunov function.

    Positive definite exactly when eps1 lies below the d1-dependent threshold.
    """
    cross = -0.5 * ((1.0 - d1) * beta1 + d1 * beta2)
    return np.array([
        [(1.0 - d1) * alpha1, cross],
        [cross, d1 * (alpha2 / eps1 - gamma1)],
    ])


def composite_reduced_constants(q_v: np.ndarray, h_fast: np.ndarray, a_zy: np.ndarray,
                                d1: float, eps1: float) -> tuple[float, float]:
    """Decay of the reduced (angle + frequency/voltage) system and its gain
    into line-current deviations."""
    lam = float(np.linalg.eigvalsh(sym(q_v)).min())
    if lam <= 0.0:
        raise CertificateInfeasibleError(
            f"composite decay matrix is not positive definite (lambda_min={lam:.3e}); "
            f"the filter constant exceeds its threshold")
    alpha3 = eps1 * lam
    h_bar = d1 * h_fast
    beta3 = sigma_max((h_bar + h_bar.T) @ a_zy)
    return alpha3, beta3


@dataclass
class NetworkLayerConstants:
    alpha4: float
    beta4: float
    gamma2: float
    gamma2_raw: float
    theta_xix: np.ndarray
    theta_xieta: np.ndarray
    theta_xixi: np.ndarray


def network_layer_constants(b: BlockSystem, r: ReducedModel, p_xi: np.ndarray,
                            q_xi: np.ndarray, eps1: float) -> NetworkLayerConstants:
    """Decay of the line-current layer and its coupling back into the reduced system.

    The three theta matrices bound how the manifold drift of the reduced
    states feeds the current deviations; beta4 carries a sqrt(2) factor from
    bounding the stacked (x, eta) norm.
    """
    alpha4 = float(np.linalg.eigvalsh(sym(q_xi)).min())
    pp = p_xi + p_xi.T
    f0 = r.a0x + r.a0z @ r.gamma0
    theta_xix = pp @ (f0 @ (eps1 * b.a_xz) @ r.gamma0
                      + r.a0z @ (b.a_zz @ r.gamma0 + b.a_zx
                                 - eps1 * (r.gamma0 @ b.a_xz @ r.gamma0))
                      + r.a0z @ b.a_zy @ f0)
    theta_xieta = pp @ (f0 @ (eps1 * b.a_xz)
                        + r.a0z @ (b.a_zz - eps1 * (r.gamma0 @ b.a_xz) + b.a_zy @ r.a0z))
    theta_xixi = pp @ r.a0z @ b.a_zy
    beta4 = np.sqrt(2.0) * max(sigma_max(theta_xix), sigma_max(theta_xieta))
    gamma2_raw = -lambda_min(theta_xixi)
    return NetworkLayerConstants(alpha4=alpha4, beta4=beta4,
                                 gamma2=max(0.0, gamma2_raw), gamma2_raw=gamma2_raw,
                                 theta_xix=theta_xix, theta_xieta=theta_xieta,
                                 theta_xixi=theta_xixi)


def fast_veryfast_threshold(alpha3: float, alpha4: float, gamma2: float,
                            beta3: float, beta4: float, eps2: float,
                            eps1: float) -> tuple[float, float, float, bool]:
    """Weight d2, the timescale-ratio threshold, the actual ratio, and the verdict."""
    d2 = beta3 / (beta3 + beta4) if beta3 + beta4 > 0 else 0.5
    num = alpha3 * alpha4
    den = alpha3 * gamma2 + beta3 * beta4
    if num <= 0.0:
        eps3_star = 0.0
    elif den > 0.0:
        eps3_star = num / den
    else:
        eps3_star = np.inf
    eps3_actual = eps2 / eps1
    return d2, eps3_star, eps3_actual, bool(eps3_actual < eps3_star)


# ---------------------------------------------------------------------------
# certificate driver

@dataclass
class CertificateSet:
    p_slow: np.ndarray
    h_fast: np.ndarray
    p_xi: np.ndarray
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    gamma1: float
    gamma2: float
    gamma1_raw: float
    gamma2_raw: float
    d1: float
    d2: float
    eps1_star: float
    eps3_star: float
    eps1_actual: float
    eps1_eval: float
    eps2: float
    eps3_actual: float
    q_choices: dict
    residuals: dict
    verdict_reduced: bool
    verdict_full: bool
    eps1_policy: str
    warnings: list[str] = field(default_factory=list)


def compute_certificates(b: BlockSystem, r: ReducedModel,
                         q_slow: np.ndarray | None = None,
                         q_fast: np.ndarray | None = None,
                         q_xi: np.ndarray | None = None,
                         eps1_policy: str = "half-star") -> CertificateSet:
    """Run the whole certificate chain on a reduced standard-form system.

    eps1_policy selects the filter constant used inside the composite-layer
    matrices: "actual" takes the grid's own value (the honest certificate;
    infeasible once it exceeds the threshold), "half-star" takes half the
    computed threshold (always feasible; the workflow used for reporting).

    Raises CertificateInfeasibleError when the angle or frequency/voltage
    subsystem is not Hurwitz.  An infeasible composite layer (actual policy,
    filter constant past its threshold) degrades gracefully: the ratio
    threshold is zero and the full verdict false.
    """
    if eps1_policy not in ("half-star", "actual"):
        raise ValueError(f"unknown eps1 policy {eps1_policy!r}")
    if b.eps2 is None:
        raise ValueError("block system must be in standard form")
    n, m = b.n, b.m
    q_slow = np.eye(n) if q_slow is None else np.asarray(q_slow, dtype=float)
    q_fast = np.eye(2 * n) if q_fast is None else np.asarray(q_fast, dtype=float)
    q_xi = np.eye(2 * m) if q_xi is None else np.asarray(q_xi, dtype=float)

    p_slow = solve_lyapunov(r.a_slow, q_slow)
    h_fast = solve_lyapunov(r.azz_tilde, q_fast)
    p_xi = solve_lyapunov(r.ayy_tilde, q_xi)
    residuals = {
        "slow": lyapunov_residual(r.a_slow, p_slow, q_slow),
        "fast": lyapunov_residual(r.azz_tilde, h_fast, q_fast),
        "very_fast": lyapunov_residual(r.ayy_tilde, p_xi, q_xi),
    }

    alpha1, beta1 = slow_constants(r.a_slow, b.a_xz, p_slow, q_slow)
    alpha2, gamma1, beta2, gamma1_raw = fast_constants(r.gamma0, b.a_xz, h_fast, q_fast)
    d1, eps1_star, _ = slow_fast_threshold(alpha1, alpha2, gamma1, beta1, beta2)

    warnings: list[str] = []
    eps1_actual = b.eps1
    if eps1_policy == "half-star":
        if np.isfinite(eps1_star):
            eps1_eval = eps1_star / 2.0
        else:
            eps1_eval = eps1_actual
            warnings.append("filter-constant threshold is unbounded; "
                            "half-star policy fell back to the actual value")
    else:
        eps1_eval = eps1_actual

    verdict_reduced = bool(eps1_actual < eps1_star)

    q_v = composite_decay_matrix(d1, eps1_eval, alpha1, alpha2, beta1, beta2, gamma1)
    nl = network_layer_constants(b, r, p_xi, q_xi, eps1_eval)
    try:
        alpha3, beta3 = composite_reduced_constants(q_v, h_fast, b.a_zy, d1, eps1_eval)
    except CertificateInfeasibleError as exc:
        warnings.append(f"composite layer infeasible: {exc}")
        alpha3 = eps1_eval * float(np.linalg.eigvalsh(sym(q_v)).min())
        h_bar = d1 * h_fast
        beta3 = sigma_max((h_bar + h_bar.T) @ b.a_zy)
        d2, eps3_star, eps3_actual = 0.5, 0.0, b.eps2 / eps1_actual
        verdict_full = False
    else:
        d2, eps3_star, eps3_actual, ratio_ok = fast_veryfast_threshold(
            alpha3, nl.alpha4, nl.gamma2, beta3, nl.beta4, b.eps2, eps1_actual)
        verdict_full = verdict_reduced and ratio_ok

    return CertificateSet(
        p_slow=p_slow, h_fast=h_fast, p_xi=p_xi,
        alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, alpha4=nl.alpha4,
        beta1=beta1, beta2=beta2, beta3=beta3, beta4=nl.beta4,
        gamma1=gamma1, gamma2=nl.gamma2,
        gamma1_raw=gamma1_raw, gamma2_raw=nl.gamma2_raw,
        d1=d1, d2=d2,
        eps1_star=eps1_star, eps3_star=eps3_star,
        eps1_actual=eps1_actual, eps1_eval=eps1_eval,
        eps2=b.eps2, eps3_actual=eps3_actual,
        q_choices={"q_slow": q_slow, "q_fast": q_fast, "q_xi": q_xi, "q_v": q_v},
        residuals=residuals,
        verdict_reduced=verdict_reduced, verdict_full=verdict_full,
        eps1_policy=eps1_policy, warnings=warnings,
    )


# ---------------------------------------------------------------------------
# sampled verification of the certificate inequalities

def reduced_system_matrix(b: BlockSystem, r: ReducedModel,
                          eps1: float | None = None) -> np.ndarray:
    """Interconnected (angle, frequency/voltage-deviation) system in real time."""
    eps1 = b.eps1 if eps1 is None else eps1
    n = b.n
    top = np.hstack([b.a_xz @ r.gamma0, b.a_xz])
    bottom = np.hstack([-r.gamma0 @ (b.a_xz @ r.gamma0),
                        r.azz_tilde / eps1 - r.gamma0 @ b.a_xz])
    return np.vstack([top, bottom])


def _coupled_field(b: BlockSystem, r: ReducedModel, eps1: float,
                   x: np.ndarray, eta: np.ndarray, y: np.ndarray):
    """Angle and frequency/voltage drift in the filter timescale, current input y."""
    hx = eps1 * (b.a_xz @ (r.gamma0 @ x) + b.a_xz @ eta)
    heta = ((b.a_zx + b.a_zz @ r.gamma0) @ x
            - eps1 * (r.gamma0 @ (b.a_xz @ (r.gamma0 @ x)))
            + (b.a_zz - eps1 * (r.gamma0 @ b.a_xz)) @ eta
            + b.a_zy @ y)
    return hx, heta


def sampled_inequality_slacks(b: BlockSystem, r: ReducedModel, certs: CertificateSet,
                              seed: int = 42, samples: int = 1000) -> dict[str, float]:
    """Minimum slack of every certificate inequality over random states.

    Each entry is RHS - LHS minimized over the sample; all must be
    nonnegative up to roundoff for the certificates to be sound.
    """
    rng = np.random.default_rng(seed)
    n, m = b.n, b.m
    x = rng.standard_normal((n, samples))
    eta = rng.standard_normal((2 * n, samples))
    xi = rng.standard_normal((2 * m, samples))
    nx = np.linalg.norm(x, axis=0)
    neta = np.linalg.norm(eta, axis=0)
    nxi = np.linalg.norm(xi, axis=0)
    nxeta = np.sqrt(nx ** 2 + neta ** 2)

    p, h, p_xi = certs.p_slow, certs.h_fast, certs.p_xi
    pp, hh, pxp = p + p.T, h + h.T, p_xi + p_xi.T
    eps1 = certs.eps1_eval
    d1 = certs.d1
    q_v = certs.q_choices["q_v"]

    def rows(mat, vec):
        return np.einsum("is,is->s", vec, mat @ vec)

    slacks: dict[str, float] = {}

    # angle subsystem: decay and cross gain
    lhs = rows(pp @ r.a_slow, x)
    slacks["slow_decay"] = float((-certs.alpha1 * nx ** 2 - lhs).min())
    cross = np.einsum("is,is->s", x, (pp @ b.a_xz) @ eta)
    slacks["slow_cross"] = float((certs.beta1 * nx * neta - cross).min())

    # frequency/voltage subsystem: decay and manifold-drift interference
    lhs = rows(hh @ r.azz_tilde, eta)
    slacks["fast_decay"] = float((-certs.alpha2 * neta ** 2 - lhs).min())
    drift = hh @ r.gamma0 @ b.a_xz
    lhs = -np.einsum("is,is->s", eta, drift @ (eta + r.gamma0 @ x))
    rhs = certs.gamma1 * neta ** 2 + certs.beta2 * nx * neta
    slacks["fast_cross"] = float((rhs - lhs).min())

    # line-current layer: decay and feedback through the manifold drift
    lhs = rows(pxp @ r.ayy_tilde, xi)
    slacks["very_fast_decay"] = float((-certs.alpha4 * nxi ** 2 - lhs).min())
    nl = network_layer_constants(b, r, p_xi, certs.q_choices["q_xi"], eps1)
    lhs = -(np.einsum("is,is->s", xi, nl.theta_xix @ x)
            + np.einsum("is,is->s", xi, nl.theta_xieta @ eta)
            + np.einsum("is,is->s", xi, nl.theta_xixi @ xi))
    rhs = certs.beta4 * nxeta * nxi + certs.gamma2 * nxi ** 2
    slacks["very_fast_cross"] = float((rhs - lhs).min())

    # composite reduced system: decay on the current manifold, gain off it
    hx, heta = _coupled_field(b, r, eps1, x, eta, r.a0z @ eta + (r.a0x + r.a0z @ r.gamma0) @ x)
    dv = ((1 - d1) * np.einsum("is,is->s", x, pp @ hx)
          + d1 * np.einsum("is,is->s", eta, hh @ heta))
    slacks["composite_decay"] = float((-certs.alpha3 * nxeta ** 2 - dv).min())
    cross = d1 * np.einsum("is,is->s", eta, (hh @ b.a_zy) @ xi)
    slacks["composite_cross"] = float((certs.beta3 * nxeta * nxi - cross).min())

    # decay matrix of the weighted reduced Lyapunov function, real time
    a_red = reduced_system_matrix(b, r, eps1)
    xe = np.vstack([x, eta])
    dxe = a_red @ xe
    dv = ((1 - d1) * np.einsum("is,is->s", x, pp @ dxe[:n])
          + d1 * np.einsum("is,is->s", eta, hh @ dxe[n:]))
    rho = np.vstack([nx, neta])
    qf = np.einsum("is,is->s", rho, q_v @ rho)
    slacks["decay_matrix"] = float((-qf - dv).min())
    return slacks
