"""
Input validation utilities for the P6LoWPAN command line and scenario files
"""

import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from src.core.errors import LowpanError
from src.models.capability import CapabilitySet, Feature, FeatureSet
from src.models.codec import ContextTable
from src.models.packet import LinkAddress

_HEX_NOISE = re.compile(r"(0x)|[\s:,-]", re.IGNORECASE)
_CONTEXT_LINE = re.compile(r"^(\d+)\s+(\S+/\d+)$")


class ValidationError(LowpanError):
    """Malformed user input"""

    reason = "ValidationError"


def parse_hex(text: str) -> bytes:
    """
    Parse a hexdump

    Accepts whitespace, colons, commas, dashes and ``0x`` prefixes between
    octets; lines starting with ``#`` are comments.

    Args:
        text: Hexdump text

    Returns:
        Decoded octets

    Raises:
        ValidationError: If the text is not an even number of hex digits
    """
    lines = [line.split("#", 1)[0] for line in text.splitlines()]
    digits = _HEX_NOISE.sub("", "".join(lines))
    if len(digits) % 2:
        raise ValidationError("hexdump has an odd number of digits")
    try:
        return bytes.fromhex(digits)
    except ValueError:
        raise ValidationError("hexdump contains non-hex characters") from None


def format_hex(data: bytes, width: int = 16) -> str:
    """Space-separated hexdump, `width` octets per line"""
    rows = [data[i:i + width] for i in range(0, len(data), width)]
    return "\n".join(row.hex(" ") for row in rows)


def read_hex_file(path: Path) -> bytes:
    try:
        return parse_hex(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None


def parse_contexts(lines: Iterable[str]) -> ContextTable:
    """
    Parse context lines of the form ``<id 0-15> <prefix>/<bits>``

    Raises:
        ValidationError: On a malformed line, an out-of-range id or a duplicate
    """
    prefixes: Dict[int, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _CONTEXT_LINE.match(line)
        if not match:
            raise ValidationError(f"contexts line {number}: expected '<id> <prefix>/<bits>'")
        cid = int(match.group(1))
        if not 0 <= cid <= 15:
            raise ValidationError(f"contexts line {number}: id {cid} is outside 0..15")
        if cid in prefixes:
            raise ValidationError(f"contexts line {number}: duplicate id {cid}")
        prefixes[cid] = match.group(2)
    try:
        return ContextTable.from_prefixes(prefixes)
    except ValueError as e:
        raise ValidationError(f"invalid context prefix: {e}") from None


def read_contexts_file(path: Optional[Path]) -> ContextTable:
    if path is None:
        return ContextTable()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None
    return parse_contexts(text.splitlines())


def parse_link_address(text: str) -> LinkAddress:
    """Short (``0x1234``) or extended (``02:00:...``) link-layer address"""
    try:
        return LinkAddress.parse(text)
    except (ValueError, OverflowError) as e:
        raise ValidationError(f"invalid link address {text!r}: {e}") from None


def parse_level(value: int) -> CapabilitySet:
    if not 0 <= value <= 5:
        raise ValidationError(f"capability level {value} is outside 0..5")
    return CapabilitySet.linear(value)


def parse_features(names: str) -> FeatureSet:
    """Comma-separated feature names in any accepted spelling"""
    try:
        return FeatureSet.from_names(n for n in names.split(",") if n.strip())
    except ValueError as e:
        raise ValidationError(str(e)) from None


def feature_names() -> List[str]:
    return [f.name for f in Feature]
