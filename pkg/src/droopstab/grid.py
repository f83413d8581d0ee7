"""Network model of a droop-controlled inverter distribution grid.

Conventions used throughout the package:

* State ordering is (delta, omega, V, I_D, I_Q); angles in radians,
  frequencies in rad/s, voltages and currents in per unit.
* Bus 0 is the feeder, modeled as an ideal voltage source (v_gd, v_gq
  constant).  All other buses carry exactly one inverter.
* A line's ``from_bus`` is its beginning, ``to_bus`` its end; current is
  counted positive when flowing from beginning to end.
* Loads are constant impedances and may sit only on inverter buses.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

FEEDER_BUS = 0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class GridSpecError(ValueError):
    """Structurally invalid grid description."""


@dataclass(frozen=True)
class Bases:
    v_b: float     # base voltage (V)
    s_b: float     # base power (VA)
    omega_b: float  # nominal angular frequency (rad/s)


@dataclass(frozen=True)
class Feeder:
    v_gd: float  # feeder voltage, D component (pu)
    v_gq: float  # feeder voltage, Q component (pu)


@dataclass(frozen=True)
class Inverter:
    bus: int
    k_p: float      # frequency droop gain (rad/s per pu power)
    k_q: float      # voltage droop gain (pu/pu)
    t_p: float      # real-power filter time constant (s)
    t_q: float      # reactive-power filter time constant (s)
    omega_d: float  # frequency setpoint (rad/s)
    v_d: float      # voltage setpoint (pu)
    p_d: float      # real power setpoint (pu)
    q_d: float      # reactive power setpoint (pu)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    l_pu: float


@dataclass(frozen=True)
class Load:
    bus: int
    r_l_pu: float
    x_l_pu: float


@dataclass(frozen=True)
class GridSpec:
    bases: Bases
    feeder: Feeder
    inverters: tuple[Inverter, ...]
    lines: tuple[Line, ...]
    loads: tuple[Load, ...]

    def __post_init__(self):
        validate(self)

    @property
    def n(self) -> int:
        return len(self.inverters)

    @property
    def m(self) -> int:
        return len(self.lines)

    def bus_index(self, bus: int) -> int:
        """0-based inverter index for a bus label."""
        try:
            return _bus_map(self)[bus]
        except KeyError:
            raise GridSpecError(f"bus {bus} has no inverter") from None


def _bus_map(spec: GridSpec) -> dict[int, int]:
    return {inv.bus: i for i, inv in enumerate(spec.inverters)}


def validate(spec: GridSpec) -> None:
    if len(spec.inverters) < 1:
        raise GridSpecError("at least one inverter is required")
    if len(spec.lines) < 1:
        raise GridSpecError("at least one line is required")
    buses = [inv.bus for inv in spec.inverters]
    if len(set(buses)) != len(buses):
        raise GridSpecError("duplicate inverter bus labels")
    if FEEDER_BUS in buses:
        raise GridSpecError(f"bus {FEEDER_BUS} is reserved for the feeder")
    if any(b <= 0 for b in buses):
        raise GridSpecError("inverter bus labels must be positive integers")
    known = set(buses) | {FEEDER_BUS}
    for k, line in enumerate(spec.lines):
        if line.from_bus not in known or line.to_bus not in known:
            raise GridSpecError(f"line {k} references unknown bus")
        if line.from_bus == line.to_bus:
            raise GridSpecError(f"line {k} is a self loop")
        if line.r_pu <= 0 or line.x_pu <= 0 or line.l_pu <= 0:
            raise GridSpecError(f"line {k} must have positive R, X, L")
    for load in spec.loads:
        if load.bus not in set(buses):
            raise GridSpecError(f"load on bus {load.bus}: loads may sit only on inverter buses")
        if load.r_l_pu < 0:
            raise GridSpecError(f"load on bus {load.bus} has negative resistance")
        if load.r_l_pu ** 2 + load.x_l_pu ** 2 <= 0.0:
            raise GridSpecError(f"load on bus {load.bus} has zero impedance")
    for inv in spec.inverters:
        if inv.t_p <= 0 or inv.t_q <= 0:
            raise GridSpecError(f"inverter at bus {inv.bus} needs positive filter constants")
        if inv.k_p < 0 or inv.k_q < 0:
            raise GridSpecError(f"inverter at bus {inv.bus} has negative droop gain")
        if inv.v_d <= 0:
            raise GridSpecError(f"inverter at bus {inv.bus} needs a positive voltage setpoint")
    b = spec.bases
    if b.v_b <= 0 or b.s_b <= 0 or b.omega_b <= 0:
        raise GridSpecError("bases must be positive")
    # connectivity of inverter buses plus the feeder through the line graph
    parent = {bus: bus for bus in known}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for line in spec.lines:
        parent[find(line.from_bus)] = find(line.to_bus)
    roots = {find(bus) for bus in known}
    if len(roots) != 1:
        raise GridSpecError("line graph does not connect all inverter buses and the feeder")


@dataclass
class OperatingPoint:
    """Full grid state: angles, frequencies, voltage amplitudes, line currents."""

    delta: np.ndarray
    omega: np.ndarray
    voltage: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega, self.voltage, self.i_d, self.i_q])

    @classmethod
    def from_vector(cls, w: np.ndarray, n: int, m: int) -> "OperatingPoint":
        w = np.asarray(w, dtype=float)
        if w.shape != (3 * n + 2 * m,):
            raise ValueError(f"state vector must have length {3 * n + 2 * m}, got {w.shape}")
        return cls(
            delta=w[:n].copy(),
            omega=w[n:2 * n].copy(),
            voltage=w[2 * n:3 * n].copy(),
            i_d=w[3 * n:3 * n + m].copy(),
            i_q=w[3 * n + m:].copy(),
        )

    def copy(self) -> "OperatingPoint":
        return OperatingPoint(*(v.copy() for v in
                                (self.delta, self.omega, self.voltage, self.i_d, self.i_q)))


# ---------------------------------------------------------------------------
# per-spec array views (cached; specs are immutable, arrays returned read-only)

@lru_cache(maxsize=256)
def droop_gains(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return (_frozen(np.array([i.k_p for i in spec.inverters])),
            _frozen(np.array([i.k_q for i in spec.inverters])))


@lru_cache(maxsize=256)
def filter_constants(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return (_frozen(np.array([i.t_p for i in spec.inverters])),
            _frozen(np.array([i.t_q for i in spec.inverters])))


@lru_cache(maxsize=256)
def setpoints(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (_frozen(np.array([i.omega_d for i in spec.inverters])),
            _frozen(np.array([i.v_d for i in spec.inverters])),
            _frozen(np.array([i.p_d for i in spec.inverters])),
            _frozen(np.array([i.q_d for i in spec.inverters])))


@lru_cache(maxsize=256)
def line_impedances(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (_frozen(np.array([l.r_pu for l in spec.lines])),
            _frozen(np.array([l.x_pu for l in spec.lines])),
            _frozen(np.array([l.l_pu for l in spec.lines])))


def replace_gains(spec: GridSpec, k_p=None, k_q=None) -> GridSpec:
    """New spec with droop gains overridden (scalar or one value per inverter)."""
    def expand(v):
        if v is None:
            return None
        arr = np.atleast_1d(np.asarray(v, dtype=float))
        if arr.size == 1:
            arr = np.full(spec.n, arr[0])
        if arr.size != spec.n:
            raise GridSpecError(f"expected 1 or {spec.n} gains, got {arr.size}")
        return arr

    kp, kq = expand(k_p), expand(k_q)
    invs = []
    for i, inv in enumerate(spec.inverters):
        invs.append(replace(inv,
                            k_p=float(kp[i]) if kp is not None else inv.k_p,
                            k_q=float(kq[i]) if kq is not None else inv.k_q))
    return replace(spec, inverters=tuple(invs))


# ---------------------------------------------------------------------------
# network matrices

@lru_cache(maxsize=256)
def inverter_incidence(spec: GridSpec) -> np.ndarray:
    """N x M incidence: +1 where the inverter begins a line, -1 where it ends it.

    Feeder endpoints contribute no row; a column for a feeder-tied line has a
    single nonzero entry.
    """
    idx = _bus_map(spec)
    c = np.zeros((spec.n, spec.m))
    for j, line in enumerate(spec.lines):
        if line.from_bus != FEEDER_BUS:
            c[idx[line.from_bus], j] = 1.0
        if line.to_bus != FEEDER_BUS:
            c[idx[line.to_bus], j] = -1.0
    return _frozen(c)


@lru_cache(maxsize=256)
def extended_incidence(spec: GridSpec) -> np.ndarray:
    """M x (N+1) incidence over inverter buses plus the feeder (last column)."""
    idx = _bus_map(spec)
    c = np.zeros((spec.m, spec.n + 1))

    def col(bus):
        return spec.n if bus == FEEDER_BUS else idx[bus]

    for j, line in enumerate(spec.lines):
        c[j, col(line.from_bus)] = 1.0
        c[j, col(line.to_bus)] = -1.0
    return _frozen(c)


@lru_cache(maxsize=256)
def load_matrices(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Load admittance maps (N x 2N each) from stacked (V_D, V_Q) to bus load current.

    Parallel loads on one bus sum.  Rows of load-free buses are zero.
    """
    idx = _bus_map(spec)
    n = spec.n
    c_ld = np.zeros((n, 2 * n))
    c_lq = np.zeros((n, 2 * n))
    for load in spec.loads:
        z2 = load.r_l_pu ** 2 + load.x_l_pu ** 2
        if z2 <= 0.0:
            raise GridSpecError(f"load on bus {load.bus} has zero impedance")
        i = idx[load.bus]
        g, b = load.r_l_pu / z2, load.x_l_pu / z2
        c_ld[i, i] += g
        c_ld[i, i + n] += b
        c_lq[i, i] += -b
        c_lq[i, i + n] += g
    return _frozen(c_ld), _frozen(c_lq)


# ---------------------------------------------------------------------------
# injections and vector field

def _trig_state(point: OperatingPoint):
    c = np.cos(point.delta)
    s = np.sin(point.delta)
    v = point.voltage
    vdq = np.concatenate([c * v, s * v])
    return c, s, v, vdq


def bus_currents(spec: GridSpec, point: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """D/Q components of the total current each inverter injects (lines + local load)."""
    c_i = inverter_incidence(spec)
    c_ld, c_lq = load_matrices(spec)
    _, _, _, vdq = _trig_state(point)
    return c_i @ point.i_d + c_ld @ vdq, c_i @ point.i_q + c_lq @ vdq


def power_injections(spec: GridSpec, point: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """Real and reactive power delivered by each inverter at its terminal."""
    c, s, v, _ = _trig_state(point)
    ibus_d, ibus_q = bus_currents(spec, point)
    p = c * v * ibus_d + s * v * ibus_q
    q = s * v * ibus_d - c * v * ibus_q
    return p, q


def extended_voltages(spec: GridSpec, point: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """D/Q bus voltages over inverter buses plus feeder (length N+1)."""
    c, s, v, _ = _trig_state(point)
    vbar_d = np.append(c * v, spec.feeder.v_gd)
    vbar_q = np.append(s * v, spec.feeder.v_gq)
    return vbar_d, vbar_q


@lru_cache(maxsize=256)
def packed_field(spec: GridSpec):
    """Closure evaluating the vector field on a packed state (hot path)."""
    n, m = spec.n, spec.m
    omega_b = spec.bases.omega_b
    k_p, k_q = droop_gains(spec)
    t_p, t_q = filter_constants(spec)
    omega_d, v_d, p_d, q_d = setpoints(spec)
    r, x, l = line_impedances(spec)
    c_i = inverter_incidence(spec)
    c_t = extended_incidence(spec)
    c_ld, c_lq = load_matrices(spec)
    wl = omega_b / l
    v_gd, v_gq = spec.feeder.v_gd, spec.feeder.v_gq

    def field(w: np.ndarray) -> np.ndarray:
        delta = w[:n]
        omega = w[n:2 * n]
        v = w[2 * n:3 * n]
        i_d = w[3 * n:3 * n + m]
        i_q = w[3 * n + m:]
        vd = np.cos(delta) * v
        vq = np.sin(delta) * v
        vdq = np.concatenate([vd, vq])
        ibus_d = c_i @ i_d + c_ld @ vdq
        ibus_q = c_i @ i_q + c_lq @ vdq
        p = vd * ibus_d + vq * ibus_q
        q = vq * ibus_d - vd * ibus_q
        return np.concatenate([
            omega - omega_b,
            (-omega + omega_d - k_p * (p - p_d)) / t_p,
            (-v + v_d - k_q * (q - q_d)) / t_q,
            wl * (-r * i_d + x * i_q + c_t @ np.append(vd, v_gd)),
            wl * (-r * i_q - x * i_d + c_t @ np.append(vq, v_gq)),
        ])

    return field


def vector_field(spec: GridSpec, point: OperatingPoint) -> np.ndarray:
    """Time derivative of the full state, packed in the global ordering."""
    return packed_field(spec)(point.as_vector())


# ---------------------------------------------------------------------------
# grid spec file I/O (JSON syntax, unknown keys rejected)

_BASES_KEYS = {"V_b", "S_b", "omega_b"}
_FEEDER_KEYS = {"V_gD", "V_gQ"}
_INVERTER_KEYS = {"bus", "k_p", "k_q", "T_p", "T_q", "omega_d", "V_d", "P_d", "Q_d"}
_LINE_KEYS = {"from_bus", "to_bus", "R_pu", "X_pu", "L_pu"}
_LOAD_KEYS = {"bus", "R_L_pu", "X_L_pu"}
_TOP_KEYS = {"bases", "feeder", "inverters", "lines", "loads"}


def _check_keys(d: dict, allowed: set[str], where: str):
    unknown = set(d) - allowed
    if unknown:
        raise GridSpecError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = allowed - set(d)
    if missing:
        raise GridSpecError(f"missing keys in {where}: {sorted(missing)}")


def grid_from_dict(d: dict) -> GridSpec:
    if not isinstance(d, dict):
        raise GridSpecError("grid spec document must be a JSON object")
    _check_keys(d, _TOP_KEYS, "grid spec")
    _check_keys(d["bases"], _BASES_KEYS, "bases")
    _check_keys(d["feeder"], _FEEDER_KEYS, "feeder")
    for i, inv in enumerate(d["inverters"]):
        _check_keys(inv, _INVERTER_KEYS, f"inverters[{i}]")
    for i, line in enumerate(d["lines"]):
        _check_keys(line, _LINE_KEYS, f"lines[{i}]")
    for i, load in enumerate(d["loads"]):
        _check_keys(load, _LOAD_KEYS, f"loads[{i}]")
    return GridSpec(
        bases=Bases(v_b=float(d["bases"]["V_b"]), s_b=float(d["bases"]["S_b"]),
                    omega_b=float(d["bases"]["omega_b"])),
        feeder=Feeder(v_gd=float(d["feeder"]["V_gD"]), v_gq=float(d["feeder"]["V_gQ"])),
        inverters=tuple(Inverter(bus=int(i["bus"]), k_p=float(i["k_p"]), k_q=float(i["k_q"]),
                                 t_p=float(i["T_p"]), t_q=float(i["T_q"]),
                                 omega_d=float(i["omega_d"]), v_d=float(i["V_d"]),
                                 p_d=float(i["P_d"]), q_d=float(i["Q_d"]))
                        for i in d["inverters"]),
        lines=tuple(Line(from_bus=int(l["from_bus"]), to_bus=int(l["to_bus"]),
                         r_pu=float(l["R_pu"]), x_pu=float(l["X_pu"]), l_pu=float(l["L_pu"]))
                    for l in d["lines"]),
        loads=tuple(Load(bus=int(l["bus"]), r_l_pu=float(l["R_L_pu"]), x_l_pu=float(l["X_L_pu"]))
                    for l in d["loads"]),
    )


def grid_to_dict(spec: GridSpec) -> dict:
    return {
        "bases": {"V_b": spec.bases.v_b, "S_b": spec.bases.s_b, "omega_b": spec.bases.omega_b},
        "feeder": {"V_gD": spec.feeder.v_gd, "V_gQ": spec.feeder.v_gq},
        "inverters": [{"bus": i.bus, "k_p": i.k_p, "k_q": i.k_q, "T_p": i.t_p, "T_q": i.t_q,
                       "omega_d": i.omega_d, "V_d": i.v_d, "P_d": i.p_d, "Q_d": i.q_d}
                      for i in spec.inverters],
        "lines": [{"from_bus": l.from_bus, "to_bus": l.to_bus,
                   "R_pu": l.r_pu, "X_pu": l.x_pu, "L_pu": l.l_pu} for l in spec.lines],
        "loads": [{"bus": l.bus, "R_L_pu": l.r_l_pu, "X_L_pu": l.x_l_pu} for l in spec.loads],
    }


def load_grid(path) -> GridSpec:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise GridSpecError(f"invalid grid spec file {path}: {exc}") from exc
    return grid_from_dict(doc)


def save_grid(spec: GridSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(grid_to_dict(spec), f, indent=2)
        f.write("\n")


def spec_hash(spec: GridSpec) -> str:
    """Stable content hash of the grid description."""
    blob = json.dumps(grid_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
