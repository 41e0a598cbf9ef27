"""
Scenario files, built-in scenario sets and the interoperability matrix

A scenario file is JSON with `nodes`, `links`, optional shared `contexts`,
`traffic` and `expectations`. Files may hold one scenario or a
`{"scenarios": [...]}` collection.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.capability import LEGACY_PROFILES, P6LOWPAN_PROFILE_NAME, get_profile, p6lowpan_profile
from src.core.errors import ConfigError
from src.core.simulator import simulate
from src.models.capability import CapabilitySet, FeatureSet
from src.models.codec import ContextTable, DecompressionLimits
from src.models.packet import LinkAddress
from src.models.simulation import (
    Expectation,
    InteropVerdict,
    Link,
    NodeConfig,
    Outcome,
    Scenario,
    Topology,
    TrafficItem,
)
from src.utils.config import get_config
from src.utils.logger import get_logger

logger = get_logger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"
BUILTIN_PATH = SCENARIO_DIR / "builtin.json"

PROBE_CONTEXT = "2001:db8::/64"
PROBE_SRC_PORT = 0xF0B1
PROBE_DST_PORT = 0xF0B2


# ============================================================================
# File format
# ============================================================================

class NodeSpec(BaseModel):
    """One `nodes[]` entry of a scenario file"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    profile: str
    level: Optional[int] = Field(default=None, ge=0, le=5)
    features: Optional[List[str]] = None
    link_addr: Optional[str] = None
    contexts: Optional[Dict[int, str]] = None
    nd: bool = False
    max_expansion: Optional[int] = Field(default=None, ge=0)
    max_tunnel_depth: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _capability_shape(self):
        if self.profile.lower() == P6LOWPAN_PROFILE_NAME:
            if (self.level is None) == (self.features is None):
                raise ValueError(f"p6lowpan node {self.id} needs exactly one of level or features")
        elif self.level is not None or self.features is not None:
            raise ValueError(f"legacy node {self.id} cannot set a capability")
        return self

    def capability(self) -> Optional[CapabilitySet]:
        if self.level is not None:
            return CapabilitySet.linear(self.level)
        if self.features is not None:
            return CapabilitySet.flex(FeatureSet.from_names(self.features))
        return None

    def to_config(self, index: int, shared_contexts: Optional[Dict[int, str]]) -> NodeConfig:
        limits = get_config().lowpan.limits
        decompression = DecompressionLimits(
            max_expansion=limits.max_expansion if self.max_expansion is None else self.max_expansion,
            max_tunnel_depth=limits.max_tunnel_depth if self.max_tunnel_depth is None else self.max_tunnel_depth,
        )
        capability = self.capability()
        if capability is not None:
            profile = p6lowpan_profile(capability, decompression.max_expansion)
        else:
            profile = get_profile(self.profile)
        if self.link_addr is not None:
            link = LinkAddress.parse(self.link_addr)
        else:
            link = LinkAddress.extended(bytes([0x02, 0, 0, 0, 0, 0, 0, index + 1]))
        prefixes = self.contexts if self.contexts is not None else shared_contexts or {}
        return NodeConfig(
            id=self.id,
            link_addr=link,
            profile=profile,
            contexts=ContextTable.from_prefixes(prefixes),
            limits=decompression,
            nd_enabled=self.nd,
        )


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    description: str = ""
    seed: Optional[int] = None
    contexts: Optional[Dict[int, str]] = None
    nodes: List[NodeSpec]
    links: List[Union[Tuple[str, str], Dict[str, Union[str, int, float]]]] = Field(default_factory=list)
    traffic: List[TrafficItem] = Field(default_factory=list)
    expectations: List[Expectation] = Field(default_factory=list)

    def to_scenario(self) -> Scenario:
        settings = get_config().lowpan.simulation
        nodes = [spec.to_config(i, self.contexts) for i, spec in enumerate(self.nodes)]
        links = []
        for raw in self.links:
            if isinstance(raw, dict):
                links.append(Link(**{"delay": settings.default_delay, "loss": settings.default_loss, **raw}))
            else:
                a, b = raw
                links.append(Link(a=a, b=b, delay=settings.default_delay, loss=settings.default_loss))
        return Scenario(
            name=self.name,
            description=self.description,
            seed=self.seed,
            topology=Topology(nodes=nodes, links=links),
            traffic=self.traffic,
            expectations=self.expectations,
        )


def parse_scenario(raw: dict) -> Scenario:
    """
    Build a Scenario from decoded JSON

    Raises:
        ConfigError: the document does not describe a valid scenario
    """
    try:
        return ScenarioSpec.model_validate(raw).to_scenario()
    except (ValidationError, ValueError, KeyError) as e:
        name = raw.get("name", "?") if isinstance(raw, dict) else "?"
        raise ConfigError(f"scenario {name}: {e}") from None


def load_scenarios(path: Union[str, Path]) -> List[Scenario]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read scenario file {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None
    if isinstance(document, dict) and "scenarios" in document:
        items = document["scenarios"]
    elif isinstance(document, list):
        items = document
    else:
        items = [document]
    scenarios = [parse_scenario(raw) for raw in items]
    logger.debug("scenarios_loaded", path=str(path), count=len(scenarios))
    return scenarios


# ============================================================================
# Built-in sets
# ============================================================================

def builtin_scenarios() -> List[Scenario]:
    """The legacy failure pairs plus Contiki's decompression bound"""
    return load_scenarios(BUILTIN_PATH)


def p6lowpan_pair(sender_level: int, receiver_level: int, *, nd: bool = False, count: int = 3) -> Scenario:
    """
    Two P6LoWPAN nodes at the given levels exchanging probe datagrams

    The probe uses a feature introduced at every level: a context-covered
    global prefix, hop limit 64, 4-bit compressible ports and a checksum the
    sender may elide. A sender above its receiver therefore always starts
    with something the receiver lacks.
    """
    suffix = "nd" if nd else "reactive"
    if nd:
        outcome, errors = Outcome.DELIVERED, 0
    elif sender_level > receiver_level:
        outcome, errors = Outcome.ERRORED_THEN_DELIVERED, 1
    else:
        outcome, errors = Outcome.DELIVERED, 0
    raw = {
        "name": f"p6lowpan_l{sender_level}_to_l{receiver_level}_{suffix}",
        "description": f"Level {sender_level} sends to level {receiver_level}",
        "contexts": {0: PROBE_CONTEXT},
        "nodes": [
            {"id": "s", "profile": P6LOWPAN_PROFILE_NAME, "level": sender_level, "nd": nd},
            {"id": "r", "profile": P6LOWPAN_PROFILE_NAME, "level": receiver_level, "nd": nd},
        ],
        "links": [["s", "r"]],
        "traffic": [{
            "time": 5,
            "from": "s",
            "to": "r",
            "global_prefix": PROBE_CONTEXT,
            "hop_limit": 64,
            "src_port": PROBE_SRC_PORT,
            "dst_port": PROBE_DST_PORT,
            "count": count,
        }],
        "expectations": [{"from": "s", "to": "r", "outcome": outcome.value, "errors": errors}],
    }
    return parse_scenario(raw)


def p6lowpan_scenarios(count: int = 3, nd: Optional[bool] = None) -> List[Scenario]:
    """All 36 ordered level pairs; reactive, ND-assisted or both when `nd` is None"""
    variants = [False, True] if nd is None else [nd]
    return [
        p6lowpan_pair(i, j, nd=variant, count=count)
        for variant in variants
        for i in range(6)
        for j in range(6)
    ]


def baseline_scenarios() -> List[Scenario]:
    """
    One datagram per ordered legacy pair using only encodings both ends share

    Every baseline must be delivered; a failure here is a false positive in
    the profiles.
    """
    profiles = list(LEGACY_PROFILES.values())
    scenarios = []
    for sender in profiles:
        for receiver in profiles:
            if sender.name == receiver.name:
                continue
            common = sender.sending & receiver.features
            raw = {
                "name": f"baseline_{sender.name.lower()}_to_{receiver.name.lower()}",
                "description": "Common-encoding baseline",
                "nodes": [
                    {"id": "s", "profile": sender.name},
                    {"id": "r", "profile": receiver.name},
                ],
                "links": [["s", "r"]],
                "traffic": [{"from": "s", "to": "r", "encoding": common.labels()}],
                "expectations": [{"from": "s", "to": "r", "outcome": Outcome.DELIVERED.value}],
            }
            scenarios.append(parse_scenario(raw))
    return scenarios


def get_scenarios(name_or_path: str) -> List[Scenario]:
    """
    Resolve a scenario set: `builtin`, `p6lowpan`, `baseline`, `all`, the
    name of one built-in scenario, or a path to a JSON file

    Raises:
        ConfigError: nothing matches
    """
    key = name_or_path.strip()
    if key == "builtin":
        return builtin_scenarios()
    if key == "p6lowpan":
        return p6lowpan_scenarios()
    if key == "baseline":
        return baseline_scenarios()
    if key == "all":
        return builtin_scenarios() + p6lowpan_scenarios()
    path = Path(key)
    if path.suffix == ".json" or path.exists():
        return load_scenarios(path)
    for scenario in builtin_scenarios() + p6lowpan_scenarios():
        if scenario.name == key:
            return [scenario]
    raise ConfigError(f"no scenario set, scenario or file named {key!r}")


# ============================================================================
# Expectations
# ============================================================================

def check_expectations(verdicts: Sequence[InteropVerdict], expectations: Iterable[Expectation]) -> List[str]:
    """Human-readable mismatches between verdicts and expectations; empty when all hold"""
    problems = []
    for expected in expectations:
        matching = [v for v in verdicts if v.sender == expected.sender and v.receiver == expected.receiver]
        if not matching:
            problems.append(f"{expected.sender}->{expected.receiver}: no traffic was judged")
            continue
        for verdict in matching:
            label = f"{verdict.scenario} {verdict.sender}->{verdict.receiver}"
            if verdict.outcome != expected.outcome:
                problems.append(f"{label}: expected {expected.outcome.value}, got {verdict}")
            elif expected.reason is not None and verdict.reason != expected.reason:
                problems.append(f"{label}: expected reason {expected.reason}, got {verdict.reason}")
            elif expected.errors is not None and verdict.errors != expected.errors:
                problems.append(f"{label}: expected {expected.errors} error(s), got {verdict.errors}")
    return problems


# ============================================================================
# Interoperability matrix
# ============================================================================

_CSV_FIELDS = (
    "scenario", "sender", "receiver", "sender_profile", "receiver_profile",
    "outcome", "reason", "errors", "delivered", "datagrams",
)


@dataclass
class InteropMatrix:
    verdicts: List[InteropVerdict] = field(default_factory=list)
    problems: List[str] = field(default_factory=list)

    def profiles(self) -> List[str]:
        names: List[str] = []
        for v in self.verdicts:
            for name in (v.sender_profile, v.receiver_profile):
                if name not in names:
                    names.append(name)
        return names

    def cells(self) -> Dict[Tuple[str, str], List[InteropVerdict]]:
        grid: Dict[Tuple[str, str], List[InteropVerdict]] = {}
        for v in self.verdicts:
            grid.setdefault((v.sender_profile, v.receiver_profile), []).append(v)
        return grid

    def failures(self) -> List[InteropVerdict]:
        return [v for v in self.verdicts if v.failed]

    def count(self, outcome: Outcome) -> int:
        return sum(1 for v in self.verdicts if v.outcome == outcome)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for v in self.verdicts:
            row = v.model_dump(mode="json", include=set(_CSV_FIELDS))
            row["reason"] = row["reason"] or ""
            writer.writerow(row)
        return buffer.getvalue()

    def to_text(self) -> str:
        """Sender rows by receiver columns; failing cells list their verdicts"""
        names = self.profiles()
        if not names:
            return ""
        grid = self.cells()

        def cell(sender: str, receiver: str) -> str:
            verdicts = grid.get((sender, receiver))
            if not verdicts:
                return "-"
            failed = [str(v) for v in verdicts if v.failed]
            if failed:
                return "; ".join(sorted(set(failed)))
            if any(v.outcome == Outcome.ERRORED_THEN_DELIVERED for v in verdicts):
                return Outcome.ERRORED_THEN_DELIVERED.value
            return "ok"

        rows = [["sender \\ receiver"] + names]
        rows += [[s] + [cell(s, r) for r in names] for s in names]
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(text.ljust(w) for text, w in zip(row, widths)).rstrip() for row in rows)


def _profile_matches(name: str, wanted: Sequence[str]) -> bool:
    lowered = name.lower()
    return any(lowered == w.lower() or lowered.startswith(w.lower() + " ") for w in wanted)


def interop_matrix(
    profiles: Optional[Sequence[str]],
    scenarios: Sequence[Scenario],
    *,
    baseline: bool = False,
    seed: Optional[int] = None,
) -> InteropMatrix:
    """
    Run `scenarios` (plus legacy baselines when asked) and collect verdicts
    whose endpoints both match `profiles`; None keeps every profile
    """
    runs = list(scenarios) + (baseline_scenarios() if baseline else [])
    matrix = InteropMatrix()
    for scenario in runs:
        result = simulate(scenario, seed=seed)
        kept = [
            v for v in result.verdicts
            if profiles is None
            or (_profile_matches(v.sender_profile, profiles) and _profile_matches(v.receiver_profile, profiles))
        ]
        matrix.verdicts.extend(kept)
        if len(kept) == len(result.verdicts):
            matrix.problems.extend(check_expectations(result.verdicts, scenario.expectations))
    logger.info(
        "matrix_built",
        scenarios=len(runs),
        verdicts=len(matrix.verdicts),
        failures=len(matrix.failures()),
    )
    return matrix
