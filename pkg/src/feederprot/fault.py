"""Fault studies: DG source models, network solve, current disparities.

A bolted (or floored-impedance) three-phase fault is solved on the
single equivalent-phase per-unit circuit.  Rotating DG become voltage
sources behind a reactance; inverter DG become constant current
injections or switch off; the substation is its configured voltage
behind the source impedance.  The linear network is solved node-wise
and each source's complex contribution to the fault-point current is
extracted by superposition.

Device currents follow the directional accounting of radial feeders: a
fuse sees every source, a directional recloser only the substation and
DG tapped upstream of it.  Device currents are arithmetic sums of the
per-source contribution magnitudes, which makes the fuse-recloser and
recloser-recloser disparities exact sums of the per-DG contributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import (DGKind, DGUnit, Network, UnknownElementError)
from .power_flow import PowerFlowSolution, dg_terminal_voltages

SUBSTATION = "substation"


@dataclass(frozen=True)
class FaultLocation:
    kind: str  # "node" | "lateral"
    ref: int

    def __post_init__(self):
        if self.kind not in ("node", "lateral"):
            raise ValueError(f"fault location kind must be node or lateral")


def at_node(node: int) -> FaultLocation:
    return FaultLocation("node", node)


def at_lateral(lateral_id: int) -> FaultLocation:
    return FaultLocation("lateral", lateral_id)


@dataclass(frozen=True)
class TheveninEquivalent:
    emf: complex
    impedance: complex

    def __post_init__(self):
        if abs(self.impedance) <= 0:
            raise ValueError("rotating-machine impedance magnitude must be > 0")


class FaultModelKind(Enum):
    VOLTAGE_BEHIND_IMPEDANCE = "voltage_behind_impedance"
    CONSTANT_CURRENT = "constant_current"
    OFF = "off"


@dataclass(frozen=True)
class DGFaultModel:
    dg_id: int
    kind: FaultModelKind
    thevenin: TheveninEquivalent | None = None
    i_const: float = 0.0


@dataclass(frozen=True)
class FaultStudy:
    location: FaultLocation
    i_recloser: dict[str, float]
    i_fuse: dict[int, float]
    i_dg: dict[int, float]
    i_substation: float
    i_fault_total: float  # arithmetic sum of contribution magnitudes
    i_fault_complex: complex  # phasor fault-point current
    delta_fr: dict[str, float]
    delta_rr: dict[str, float]


def build_dg_fault_model(dg: DGUnit, v_terminal: float) -> DGFaultModel:
    """Fault representation of one DG unit from its pre-fault state.

    Synchronous and asynchronous machines become an emf behind their
    subtransient / locked-rotor reactance, reconstructed from the
    terminal voltage and pre-fault current.  Inverter units clamp to
    k_clamp times rated current, or switch off when the prospective
    subtransient current (terminal voltage over the coupling-reactance
    proxy) exceeds k_off times rated current.
    """
    if v_terminal <= 0:
        raise ValueError("terminal voltage must be positive")
    if dg.p_out == 0.0 and dg.q_out == 0.0:
        # a unit dispatched (or profiled) to zero is disconnected
        return DGFaultModel(dg.id, FaultModelKind.OFF)
    v = complex(v_terminal, 0.0)
    # generator convention: unit delivers (p + jq), I = conj(S/V)
    i_pre = complex(dg.p_out, -dg.q_out) / v_terminal

    if dg.kind is DGKind.SYNCHRONOUS:
        z = complex(0.0, dg.params.xd2)
        return DGFaultModel(dg.id, FaultModelKind.VOLTAGE_BEHIND_IMPEDANCE,
                            thevenin=TheveninEquivalent(v + z * i_pre, z))
    if dg.kind is DGKind.ASYNCHRONOUS:
        # pre-fault slip mapped affinely from loading; it nudges the
        # internal emf, the locked-rotor reactance sets the magnitude
        slip = dg.params.rated_slip * (dg.p_out / dg.rating_s)
        z = complex(0.0, dg.params.x_lr)
        emf = (1.0 + slip) * (v + z * i_pre)
        return DGFaultModel(dg.id, FaultModelKind.VOLTAGE_BEHIND_IMPEDANCE,
                            thevenin=TheveninEquivalent(emf, z))
    # inverter-based
    rated_i = dg.rating_s
    prospective = v_terminal / dg.params.coupling_x * rated_i
    if prospective > dg.params.k_off * rated_i:
        return DGFaultModel(dg.id, FaultModelKind.OFF)
    return DGFaultModel(dg.id, FaultModelKind.CONSTANT_CURRENT,
                        i_const=dg.params.k_clamp * rated_i)


def build_all_fault_models(network: Network,
                           sol: PowerFlowSolution) -> dict[int, DGFaultModel]:
    volts = dg_terminal_voltages(network, sol)
    return {u.id: build_dg_fault_model(u, volts[u.id])
            for u in network.dg_units}


def _fault_node(network: Network, location: FaultLocation) -> int:
    if location.kind == "node":
        if not 0 <= location.ref < network.n_nodes:
            raise UnknownElementError(f"node {location.ref} not on feeder")
        return location.ref
    return network.lateral(location.ref).tap_node


def _source_contributions(network: Network, models: dict[int, DGFaultModel],
                          fault_node: int,
                          fault_impedance: float) -> dict[object, complex]:
    """Complex fault-point current contribution per source, by superposition."""
    n = network.n_nodes
    y = np.zeros((n, n), dtype=complex)
    for sec in network.sections:
        adm = 1.0 / complex(sec.r, sec.x)
        i, j = sec.from_node, sec.to_node
        y[i, i] += adm
        y[j, j] += adm
        y[i, j] -= adm
        y[j, i] -= adm

    injections: list[tuple[object, int, complex]] = []
    z_src = network.source.impedance
    y[0, 0] += 1.0 / z_src
    injections.append((SUBSTATION, 0, network.source.voltage / z_src))
    for unit in network.dg_units:
        fm = models[unit.id]
        if fm.kind is FaultModelKind.VOLTAGE_BEHIND_IMPEDANCE:
            y[unit.tap_node, unit.tap_node] += 1.0 / fm.thevenin.impedance
            injections.append((unit.id, unit.tap_node,
                               fm.thevenin.emf / fm.thevenin.impedance))
        elif fm.kind is FaultModelKind.CONSTANT_CURRENT:
            # injected in quadrature with the pre-fault voltage, matching
            # the phase of a current driven through the coupling reactance
            injections.append((unit.id, unit.tap_node, -1j * fm.i_const))
        # OFF contributes nothing and adds no shunt

    rhs = np.zeros((n, len(injections)), dtype=complex)
    for col, (_, node, inj) in enumerate(injections):
        rhs[node, col] = inj

    out: dict[object, complex] = {}
    if fault_impedance > 0:
        y_f = y.copy()
        y_f[fault_node, fault_node] += 1.0 / fault_impedance
        volts = np.linalg.solve(y_f, rhs)
        for col, (sid, _, _) in enumerate(injections):
            out[sid] = volts[fault_node, col] / fault_impedance
    else:
        keep = [k for k in range(n) if k != fault_node]
        volts = np.linalg.solve(y[np.ix_(keep, keep)], rhs[keep, :])
        for col, (sid, node, inj) in enumerate(injections):
            fed = inj if node == fault_node else 0.0
            out[sid] = fed - y[fault_node, keep] @ volts[:, col]
    return out


def solve_fault(network: Network, sol: PowerFlowSolution,
                location: FaultLocation, fault_impedance: float = 0.0,
                models: dict[int, DGFaultModel] | None = None) -> FaultStudy:
    """Solve a three-phase fault and assemble per-device currents.

    Reclosers strictly downstream of the fault are directionally blocked
    and reported at zero current.  The fuse entry is populated for the
    faulted lateral when the location is a lateral.
    """
    if not sol.converged:
        raise ValueError("power flow solution did not converge")
    if models is None:
        models = build_all_fault_models(network, sol)
    f_node = _fault_node(network, location)
    contrib = _source_contributions(network, models, f_node, fault_impedance)

    mag = {sid: float(abs(c)) for sid, c in contrib.items()}
    i_sub = mag[SUBSTATION]
    i_dg = {u.id: mag.get(u.id, 0.0) for u in network.dg_units}  # off = 0
    total = i_sub + sum(i_dg.values())

    i_recloser: dict[str, float] = {}
    delta_fr: dict[str, float] = {}
    delta_rr: dict[str, float] = {}
    prev_node = 0
    for rec in network.reclosers:
        upstream = [u.id for u in network.dg_units if u.tap_node < rec.node]
        if rec.node <= f_node:
            i_recloser[rec.id] = i_sub + sum(i_dg[i] for i in upstream)
        else:
            i_recloser[rec.id] = 0.0
        delta_fr[rec.id] = sum(
            i_dg[u.id] for u in network.dg_units if u.tap_node >= rec.node)
        delta_rr[rec.id] = sum(
            i_dg[u.id] for u in network.dg_units
            if prev_node <= u.tap_node < rec.node)
        prev_node = rec.node

    i_fuse: dict[int, float] = {}
    if location.kind == "lateral":
        lat = network.lateral(location.ref)
        if lat.fuse is not None:
            i_fuse[lat.id] = total

    return FaultStudy(
        location=location,
        i_recloser=i_recloser,
        i_fuse=i_fuse,
        i_dg=i_dg,
        i_substation=i_sub,
        i_fault_total=total,
        i_fault_complex=sum(contrib.values()),
        delta_fr=delta_fr,
        delta_rr=delta_rr,
    )


def _recloser_zone(network: Network, recloser_id: str) -> range:
    rec = network.recloser(recloser_id)
    nxt = network.n_nodes - 1
    for other in network.reclosers:
        if other.node > rec.node:
            nxt = other.node - 1
            break
    return range(rec.node, nxt + 1)


def max_min_fault_currents(network: Network, sol: PowerFlowSolution,
                           device: str | int,
                           fault_impedance_floor: float = 0.0,
                           models: dict[int, DGFaultModel] | None = None,
                           ) -> tuple[float, float]:
    """(I_max, I_min) over the device's protection zone.

    A recloser id (str) sweeps bolted faults over its zone for the
    maximum and applies the fault-impedance floor at the zone's far end
    for the minimum.  A lateral id (int) does the same at the fused
    lateral's tap.
    """
    if models is None:
        models = build_all_fault_models(network, sol)
    if isinstance(device, str):
        rec = network.recloser(device)  # raises if unknown
        zone = _recloser_zone(network, device)
        i_max = max(
            solve_fault(network, sol, at_node(node), 0.0, models)
            .i_recloser[device]
            for node in zone)
        far = zone[-1]
        i_min = solve_fault(network, sol, at_node(far),
                            fault_impedance_floor, models).i_recloser[device]
        return i_max, i_min
    lat = network.lateral(device)
    loc = at_lateral(lat.id)
    i_max = solve_fault(network, sol, loc, 0.0, models).i_fault_total
    i_min = solve_fault(network, sol, loc, fault_impedance_floor,
                        models).i_fault_total
    return i_max, i_min
