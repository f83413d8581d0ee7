"""Checkable stability conditions and the end-to-end analysis pipeline.

The decentralized voltage-gain bounds rest on the voltage coupling block
being Metzler: with every self-sensitivity negative, gains keeping the block
strictly diagonally dominant keep it Hurwitz, and each inverter can check its
own bound from neighbor data alone.

`analyze` chains equilibrium -> linearization -> reduction -> certificates ->
conditions, and always also computes the full-system eigenvalues as ground
truth; sufficient conditions failing while the full system is stable is
reported as conservatism, not instability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import certificates as cert
from .equilibrium import EquilibriumResult, find_equilibrium
from .grid import GridSpec, replace_gains, spec_hash
from .linearize import extract_blocks, jacobian, to_standard_form
from .timescale import (build_reduced_model, nu_terms, timescale_overlap_ratio,
                        voltage_coupling_closed_form)

logger = logging.getLogger(__name__)


class AnalysisError(RuntimeError):
    """Pipeline failure, labeled with the stage that produced it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class GainBoundError(ValueError):
    """Some inverter's voltage self-sensitivity is not negative."""


def hurwitz(a: np.ndarray, tol: float = 1e-9) -> tuple[bool, float]:
    """(flag, spectral abscissa); flag demands strict negativity beyond tol.

    Marginal spectra (|abscissa| <= tol) therefore report False.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    try:
        eigvals = np.linalg.eigvals(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigenvalue computation failed (cond~{np.linalg.cond(a):.2e}): {exc}") from exc
    abscissa = float(eigvals.real.max())
    return abscissa < -tol, abscissa


@dataclass(frozen=True)
class GainBound:
    inverter: int          # 0-based inverter index
    bus: int
    kind: str              # "unbounded-positive" | "upper-bounded"
    upper: float | None    # exclusive upper bound when kind == "upper-bounded"


def voltage_gain_bounds(nu: np.ndarray, nu_off: np.ndarray,
                        buses: list[int] | None = None) -> list[GainBound]:
    """Per-inverter voltage droop gain ranges that keep the coupling block Hurwitz.

    Requires every self-sensitivity nu[i] < 0.  When the neighbor couplings
    do not outweigh it, any positive gain works; otherwise the gain must stay
    below 1 / (sum|nu_ij| - |nu_i|).  The boundary case counts as unbounded:
    weak dominance plus the -1 self term keeps the block stable.
    """
    n = len(nu)
    buses = list(range(1, n + 1)) if buses is None else buses
    bad = np.where(nu >= 0)[0]
    if bad.size:
        raise GainBoundError(
            f"voltage self-sensitivity is nonnegative for inverter(s) at bus "
            f"{[buses[i] for i in bad]}; decentralized bounds do not apply")
    bounds = []
    for i in range(n):
        off = np.abs(nu_off[i]).sum() - abs(nu_off[i, i])
        if abs(nu[i]) >= off:
            bounds.append(GainBound(i, buses[i], "unbounded-positive", None))
        else:
            bounds.append(GainBound(i, buses[i], "upper-bounded", 1.0 / (off - abs(nu[i]))))
    return bounds


# ---------------------------------------------------------------------------
# end-to-end analysis

@dataclass
class AnalysisOptions:
    k_p: float | list[float] | None = None
    k_q: float | list[float] | None = None
    q_slow: np.ndarray | None = None
    q_fast: np.ndarray | None = None
    q_xi: np.ndarray | None = None
    eps1_policy: str = "half-star"
    seed: int = 42
    mc_samples: int = 1000
    hurwitz_tol: float = 1e-9
    homogeneity_rel_tol: float = 1e-9
    equilibrium_tol: float = 1e-10
    max_iter: int = 50


@dataclass
class StabilityReport:
    spec_hash: str
    n: int
    m: int
    options: AnalysisOptions
    equilibrium: EquilibriumResult
    eps1: float
    eps2: float
    eps3: float
    eps1_star: float | None
    eps3_star: float | None
    hurwitz_e: tuple[bool, float]
    hurwitz_slow: tuple[bool, float]
    hurwitz_full: tuple[bool, float]
    gain_bounds: list[GainBound] | None
    certificates: cert.CertificateSet | None
    mc_slacks: dict[str, float] | None
    e_consistency: float        # closed-form vs extracted coupling block, max abs diff
    verdict_reduced: bool
    verdict_full: bool
    certified: bool
    conditions_conservative: bool
    warnings: list[str] = field(default_factory=list)

    def exit_code(self) -> int:
        if self.certified:
            return 0
        return 2 if self.hurwitz_full[0] else 3

    def to_dict(self) -> dict:
        """JSON-ready view (deterministic key order, plain python scalars)."""
        def f(v):
            return None if v is None else float(v)

        c = self.certificates
        return {
            "spec_hash": self.spec_hash,
            "n_inverters": self.n,
            "n_lines": self.m,
            "seed": self.options.seed,
            "eps1_policy": self.options.eps1_policy,
            "equilibrium": {
                "converged": bool(self.equilibrium.converged),
                "residual_norm": f(self.equilibrium.residual_norm),
                "iterations": int(self.equilibrium.iterations),
            },
            "timescales": {"eps1": f(self.eps1), "eps2": f(self.eps2), "eps3": f(self.eps3)},
            "bounds": {"eps1_star": f(self.eps1_star), "eps3_star": f(self.eps3_star)},
            "hurwitz": {
                "e": {"flag": self.hurwitz_e[0], "abscissa": f(self.hurwitz_e[1])},
                "slow": {"flag": self.hurwitz_slow[0], "abscissa": f(self.hurwitz_slow[1])},
                "full": {"flag": self.hurwitz_full[0], "abscissa": f(self.hurwitz_full[1])},
            },
            "gain_bounds": None if self.gain_bounds is None else [
                {"inverter": gb.inverter, "bus": gb.bus, "kind": gb.kind,
                 "upper": f(gb.upper)} for gb in self.gain_bounds],
            "constants": None if c is None else {
                "alpha1": f(c.alpha1), "alpha2": f(c.alpha2),
                "alpha3": f(c.alpha3), "alpha4": f(c.alpha4),
                "beta1": f(c.beta1), "beta2": f(c.beta2),
                "beta3": f(c.beta3), "beta4": f(c.beta4),
                "gamma1": f(c.gamma1), "gamma2": f(c.gamma2),
                "gamma1_raw": f(c.gamma1_raw), "gamma2_raw": f(c.gamma2_raw),
                "d1": f(c.d1), "d2": f(c.d2),
                "eps1_eval": f(c.eps1_eval),
                "lyapunov_residuals": {k: f(v) for k, v in c.residuals.items()},
            },
            "mc_slacks": None if self.mc_slacks is None else
                {k: f(v) for k, v in sorted(self.mc_slacks.items())},
            "e_consistency": f(self.e_consistency),
            "verdicts": {
                "reduced": self.verdict_reduced,
                "full": self.verdict_full,
                "certified": self.certified,
                "conditions_conservative": self.conditions_conservative,
            },
            "warnings": list(self.warnings),
            "exit_code": self.exit_code(),
        }


def analyze(spec: GridSpec, options: AnalysisOptions | None = None) -> StabilityReport:
    """Run the full certification pipeline on a grid description."""
    opt = options or AnalysisOptions()
    if opt.k_p is not None or opt.k_q is not None:
        spec = replace_gains(spec, k_p=opt.k_p, k_q=opt.k_q)
    warnings: list[str] = []

    eq = find_equilibrium(spec, tol=opt.equilibrium_tol, max_iter=opt.max_iter)
    if not eq.converged:
        raise AnalysisError("equilibrium",
                            f"no equilibrium found: {eq.message or 'residual '}"
                            f"{eq.residual_norm:.3e} after {eq.iterations} iterations")

    try:
        a_full = jacobian(spec, eq.point)
        blocks = to_standard_form(extract_blocks(a_full, spec, opt.homogeneity_rel_tol))
    except Exception as exc:
        raise AnalysisError("linearize", str(exc)) from exc

    overlap = timescale_overlap_ratio(blocks)
    if overlap > 100.0:
        warnings.append(f"timescale overlap: line time constants spread by {overlap:.1f}x")

    try:
        reduced = build_reduced_model(blocks)
    except Exception as exc:
        raise AnalysisError("timescale", str(exc)) from exc

    e_closed = voltage_coupling_closed_form(spec, eq.point)
    e_consistency = float(np.abs(e_closed - reduced.e_matrix).max())
    if e_consistency > 1e-6 * max(1.0, float(np.abs(reduced.e_matrix).max())):
        raise AnalysisError("timescale",
                            f"closed-form and extracted voltage coupling disagree "
                            f"by {e_consistency:.3e}; linearization is inconsistent")

    hz_e = hurwitz(reduced.e_matrix, opt.hurwitz_tol)
    hz_slow = hurwitz(reduced.a_slow, opt.hurwitz_tol)
    hz_full = hurwitz(a_full, opt.hurwitz_tol)

    nu, nu_off = nu_terms(spec, eq.point)
    if np.any(nu_off - np.diag(np.diag(nu_off)) < -1e-9):
        warnings.append("voltage coupling block is not Metzler at this equilibrium; "
                        "decentralized gain bounds may not certify stability")
    try:
        gain_bounds = voltage_gain_bounds(nu, nu_off, [i.bus for i in spec.inverters])
    except GainBoundError as exc:
        gain_bounds = None
        warnings.append(f"{exc}; falling back to the direct eigenvalue check of the "
                        f"voltage coupling block")

    certs = None
    mc_slacks = None
    if hz_e[0] and hz_slow[0]:
        try:
            certs = cert.compute_certificates(
                blocks, reduced, q_slow=opt.q_slow, q_fast=opt.q_fast, q_xi=opt.q_xi,
                eps1_policy=opt.eps1_policy)
        except cert.CertificateInfeasibleError as exc:
            raise AnalysisError("certificates", str(exc)) from exc
        warnings.extend(certs.warnings)
        if opt.mc_samples > 0:
            mc_slacks = cert.sampled_inequality_slacks(
                blocks, reduced, certs, seed=opt.seed, samples=opt.mc_samples)
            worst = min(mc_slacks.values())
            if worst < -1e-10:
                warnings.append(f"sampled certificate inequality violated "
                                f"(worst slack {worst:.3e})")
    else:
        warnings.append("subsystem matrices are not Hurwitz; certificates skipped")

    verdict_reduced = bool(certs.verdict_reduced) if certs else False
    verdict_full = bool(certs.verdict_full) if certs else False
    certified = bool(hz_e[0] and hz_slow[0] and verdict_reduced and verdict_full)
    conservative = bool(not certified and hz_full[0])
    if conservative:
        warnings.append("conditions conservative: sufficient conditions fail but the "
                        "full system is stable")

    return StabilityReport(
        spec_hash=spec_hash(spec), n=spec.n, m=spec.m, options=opt,
        equilibrium=eq,
        eps1=blocks.eps1, eps2=blocks.eps2, eps3=blocks.eps2 / blocks.eps1,
        eps1_star=None if certs is None else certs.eps1_star,
        eps3_star=None if certs is None else certs.eps3_star,
        hurwitz_e=hz_e, hurwitz_slow=hz_slow, hurwitz_full=hz_full,
        gain_bounds=gain_bounds, certificates=certs, mc_slacks=mc_slacks,
        e_consistency=e_consistency,
        verdict_reduced=verdict_reduced, verdict_full=verdict_full,
        certified=certified, conditions_conservative=conservative,
        warnings=warnings,
    )
