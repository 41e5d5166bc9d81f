"""
Canonical case format: a self-describing JSON mirror of the Network fields.

Complex numbers are stored as ``[re, im]`` pairs, the phase shift in radians and
unlimited lines as ``"fmax": null``. Reading the output of ``write_canonical``
gives back an equal Network.
"""

import json
import logging
from typing import Any, Dict

from .netmodel import Branch, Bus, CaseFormatError, Generator, Network

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _pair(z: complex) -> list:
    return [float(z.real), float(z.imag)]


def _complex(value: Any, table: str, row: int) -> complex:
    try:
        re_part, im_part = value
        return complex(float(re_part), float(im_part))
    except (TypeError, ValueError) as e:
        raise CaseFormatError(f"expected [re, im] pair, got {value!r}", table, row) from e


def network_to_dict(net: Network) -> Dict[str, Any]:
    return {
        "format": "opf-canonical",
        "version": FORMAT_VERSION,
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [
            {"bus_id": b.bus_id, "demand": _pair(b.demand), "shunt": _pair(b.shunt), "vmin": b.vmin, "vmax": b.vmax}
            for b in net.buses
        ],
        "branches": [
            {
                "line_id": br.line_id,
                "from_bus": int(net.buses[br.from_bus].bus_id),
                "to_bus": int(net.buses[br.to_bus].bus_id),
                "y_series": _pair(br.y_series),
                "b_charging": br.b_charging,
                "tap": br.tap,
                "shift": br.shift,
                "fmax": br.fmax,
            }
            for br in net.branches
        ],
        "generators": [
            {
                "gen_id": g.gen_id,
                "bus": int(net.buses[g.bus].bus_id),
                "pmin": g.pmin, "pmax": g.pmax, "qmin": g.qmin, "qmax": g.qmax,
                "c0": g.c0, "c1": g.c1, "c2": g.c2,
            }
            for g in net.generators
        ],
    }


def write_canonical(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def read_canonical(text: str) -> Network:
    """Parse canonical JSON text; bus references use external bus ids."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError(f"invalid JSON: {e}") from e
    if not isinstance(data, dict) or data.get("format") != "opf-canonical":
        raise CaseFormatError("not an opf-canonical document")
    if "base_mva" not in data:
        raise CaseFormatError("missing field 'base_mva'")

    buses = []
    index: Dict[int, int] = {}
    for row, item in enumerate(data.get("buses", []), start=1):
        try:
            bus = Bus(
                bus_id=int(item["bus_id"]),
                demand=_complex(item["demand"], "buses", row),
                shunt=_complex(item["shunt"], "buses", row),
                vmin=float(item["vmin"]),
                vmax=float(item["vmax"]),
            )
        except KeyError as e:
            raise CaseFormatError(f"missing field {e}", "buses", row) from e
        if bus.bus_id in index:
            raise CaseFormatError(f"duplicate bus id {bus.bus_id}", "buses", row)
        index[bus.bus_id] = len(buses)
        buses.append(bus)

    def lookup(bus_id: Any, table: str, row: int) -> int:
        if int(bus_id) not in index:
            raise CaseFormatError(f"unknown bus {bus_id}", table, row)
        return index[int(bus_id)]

    branches = []
    for row, item in enumerate(data.get("branches", []), start=1):
        try:
            branches.append(Branch(
                line_id=int(item["line_id"]),
                from_bus=lookup(item["from_bus"], "branches", row),
                to_bus=lookup(item["to_bus"], "branches", row),
                y_series=_complex(item["y_series"], "branches", row),
                b_charging=float(item["b_charging"]),
                tap=float(item["tap"]),
                shift=float(item["shift"]),
                fmax=None if item["fmax"] is None else float(item["fmax"]),
            ))
        except KeyError as e:
            raise CaseFormatError(f"missing field {e}", "branches", row) from e

    generators = []
    for row, item in enumerate(data.get("generators", []), start=1):
        try:
            generators.append(Generator(
                gen_id=int(item["gen_id"]),
                bus=lookup(item["bus"], "generators", row),
                pmin=float(item["pmin"]), pmax=float(item["pmax"]),
                qmin=float(item["qmin"]), qmax=float(item["qmax"]),
                c0=float(item["c0"]), c1=float(item["c1"]), c2=float(item["c2"]),
            ))
        except KeyError as e:
            raise CaseFormatError(f"missing field {e}", "generators", row) from e

    net = Network(
        name=str(data.get("name", "case")),
        base_mva=float(data["base_mva"]),
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
    )
    logger.info(f"Read canonical case {net.name}")
    return net
