"""Bundled 10-inverter distribution feeder example.

Reconstruction of a reduced IEEE 13-bus test feeder with one inverter per
bus.  The substation bus (650) is the ideal feeder; the switch pair
(671, 692) and the transformer pair (633, 634) are each merged into one bus,
leaving 10 inverter buses.  Line impedances come from the published feeder
configuration data, per-length values reduced to positive sequence and
converted to per unit on the 381.58 V / 10 kVA base; published spot loads are
scaled to microgrid size (1%) preserving their proportions.  Every choice is
documented in the dataset notes shipped alongside.

The originating study modified the feeder in unpublished ways; taking the
published impedances at face value yields an angle subsystem ~2.5x faster
than reported and a grid that is unstable at the studied droop gains.  A
single global length scale (below) reconciles the reconstruction with the
reported dominant eigenvalues to within a few percent; see the dataset notes.
"""

from __future__ import annotations

import math

from .grid import Bases, Feeder, GridSpec, Inverter, Line, Load

V_BASE = 381.58          # V
S_BASE = 10_000.0        # VA
OMEGA_BASE = 2.0 * math.pi * 60.0
Z_BASE = V_BASE ** 2 / S_BASE
FILTER_T = 0.0318        # s
LENGTH_SCALE = 2.5       # global line-length calibration, see module docstring

# positive-sequence impedance per configuration (ohm/mile)
_CONFIG = {
    601: (0.1860, 0.5968),
    602: (0.5921, 0.7603),
    603: (1.1200, 0.8929),
    604: (1.1200, 0.8929),
    605: (1.3292, 1.3475),
    606: (0.4874, 0.4151),
    607: (1.3425, 0.5124),
}

# bus labels 1..10 map to feeder nodes (see dataset notes):
# 1=632, 2=633(+634), 3=645, 4=646, 5=671(+692), 6=675, 7=680, 8=684, 9=611, 10=652
BUS_NAMES = {1: "632", 2: "633", 3: "645", 4: "646", 5: "671",
             6: "675", 7: "680", 8: "684", 9: "611", 10: "652"}

# (from_bus, to_bus, length_ft, config); bus 0 is the substation/feeder
_LINES = [
    (0, 1, 2000, 601),   # 650 - 632
    (1, 2, 500, 602),    # 632 - 633
    (1, 3, 500, 603),    # 632 - 645
    (3, 4, 300, 603),    # 645 - 646
    (1, 5, 2000, 601),   # 632 - 671
    (5, 6, 500, 606),    # 671(692) - 675
    (5, 7, 1000, 601),   # 671 - 680
    (5, 8, 300, 604),    # 671 - 684
    (8, 9, 300, 605),    # 684 - 611
    (8, 10, 800, 607),   # 684 - 652
]

# spot loads in pu on S_BASE after the 1% scaling (P, Q); the 632-671
# distributed load is split half to each end, 634/692 loads ride on the
# merged buses
_LOADS = {
    1: (0.100, 0.058),
    2: (0.400, 0.290),
    3: (0.170, 0.125),
    4: (0.230, 0.132),
    5: (1.425, 0.869),
    6: (0.843, 0.462),
    9: (0.170, 0.080),
    10: (0.128, 0.086),
}

_FT_PER_MILE = 5280.0


def build_ieee13(k_q: float = 0.05, k_p: float = 0.6) -> GridSpec:
    """Reconstructed 10-inverter feeder with homogeneous droop gains."""
    if k_q <= 0 or k_p <= 0:
        raise ValueError("droop gains must be positive")
    lines = []
    for from_bus, to_bus, length_ft, config in _LINES:
        r_mi, x_mi = _CONFIG[config]
        miles = LENGTH_SCALE * length_ft / _FT_PER_MILE
        r_pu = r_mi * miles / Z_BASE
        x_pu = x_mi * miles / Z_BASE
        lines.append(Line(from_bus=from_bus, to_bus=to_bus,
                          r_pu=r_pu, x_pu=x_pu, l_pu=x_pu))
    loads = []
    for bus, (p, q) in sorted(_LOADS.items()):
        s2 = p * p + q * q
        loads.append(Load(bus=bus, r_l_pu=p / s2, x_l_pu=q / s2))
    inverters = tuple(
        Inverter(bus=bus, k_p=k_p, k_q=k_q, t_p=FILTER_T, t_q=FILTER_T,
                 omega_d=OMEGA_BASE, v_d=1.0, p_d=0.3, q_d=0.1)
        for bus in range(1, 11))
    return GridSpec(
        bases=Bases(v_b=V_BASE, s_b=S_BASE, omega_b=OMEGA_BASE),
        feeder=Feeder(v_gd=1.0, v_gq=0.0),
        inverters=inverters,
        lines=tuple(lines),
        loads=tuple(loads),
    )
