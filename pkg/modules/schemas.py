"""
Schemas Module
==============

Pydantic models for the reference-values file and the export formats.

Features:
- ReferenceEntry: best-known cost, SDP bound, published bounds and sequential defaults per case
- Provenance string required on every entry
- Case-name lookup tolerant of file suffixes and letter case
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Union

from pydantic import BaseModel, Field, ValidationError, validator

from .relax import ConeKind

logger = logging.getLogger(__name__)

BUNDLED_REFERENCE_FILE = Path(__file__).parent / "data" / "reference_values.json"
CONE_NAMES = tuple(kind.value for kind in ConeKind)


class ExportFormat(str, Enum):
    """Enumeration of supported report formats"""
    CSV = "csv"
    TXT = "txt"
    JSON = "json"


class TightPenalty(BaseModel):
    """Smallest mu with a tight penalized relaxation, and its cost gap."""
    mu: float = Field(..., gt=0.0, description="Threshold penalty weight")
    gap_percent: float = Field(..., ge=0.0, description="Cost gap against best-known at the threshold")


class PublishedRound(BaseModel):
    """Published sequential metrics for one cone."""
    k_f: int = Field(..., ge=1, description="First feasible round")
    gfb: float = Field(..., description="GFB% at k_f")
    gfs: float = Field(..., description="GFS% at k_f")
    k_p: int = Field(..., ge=1, description="Plateau round")
    gpb: float = Field(..., description="GPB% at k_p")
    gps: float = Field(..., description="GPS% at k_p")


class SequentialDefaults(BaseModel):
    """Penalty parameters for a sequential run on one cone."""
    mu: float = Field(..., gt=0.0, description="Penalty weight")
    alpha: float = Field(1.0, ge=0.0, description="Identity weight in M")
    eta: float = Field(0.0, ge=0.0, lt=1.0, description="Real/reactive trade-off in M")
    expected: Optional[PublishedRound] = Field(None, description="Published metrics for comparison")


class ReferenceEntry(BaseModel):
    """Reference values for one case."""
    best_known: Optional[float] = Field(None, gt=0.0, description="Best-known feasible cost c_b")
    sdp_bound: Optional[float] = Field(None, gt=0.0, description="SDP lower bound c_s")
    lower_bounds: Dict[str, float] = Field(default_factory=dict, description="Published bound per cone")
    tight_mu: Dict[str, TightPenalty] = Field(default_factory=dict, description="Penalization thresholds per cone")
    sequential: Dict[str, SequentialDefaults] = Field(default_factory=dict, description="Run defaults per cone")
    source: str = Field(..., min_length=1, description="Provenance of the numbers")

    @validator('lower_bounds', 'tight_mu', 'sequential')
    def known_cones(cls, v):
        unknown = set(v) - set(CONE_NAMES)
        if unknown:
            raise ValueError(f"unknown cone kind(s) {sorted(unknown)}; expected {CONE_NAMES}")
        return v

    @validator('lower_bounds')
    def ordered_bounds(cls, v):
        chain = [v[name] for name in CONE_NAMES if name in v]
        if any(a < b for a, b in zip(chain, chain[1:])):
            logger.warning(f"Published bounds are not ordered sdp >= socp >= parabolic: {v}")
        return v

    def defaults_for(self, kind: Union[ConeKind, str]) -> Optional[SequentialDefaults]:
        return self.sequential.get(ConeKind(kind).value)


def case_key(name: str) -> str:
    """``case9.m``, ``Case9`` and ``/x/case9.json`` all map to ``case9``."""
    return Path(str(name)).stem.lower()


def load_reference_values(path: Optional[Union[str, Path]] = None) -> Dict[str, ReferenceEntry]:
    """
    Read a reference-values file (the bundled one by default).

    Keys starting with ``_`` are comments. Raises ValueError when an entry does not validate.
    """
    path = Path(path) if path is not None else BUNDLED_REFERENCE_FILE
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"reference file {path} is not valid JSON: {e}") from e

    table: Dict[str, ReferenceEntry] = {}
    for name, entry in raw.items():
        if name.startswith("_"):
            continue
        try:
            table[case_key(name)] = ReferenceEntry(**entry)
        except ValidationError as e:
            raise ValueError(f"reference entry {name!r} in {path} is invalid: {e}") from e
    logger.info(f"Loaded reference values for {len(table)} case(s) from {path}")
    return table


def lookup_reference(table: Dict[str, ReferenceEntry], case_name: str) -> Optional[ReferenceEntry]:
    return table.get(case_key(case_name))
