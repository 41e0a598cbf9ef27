"""
p6lowpan command line

Subcommands: compress, decompress, classify, simulate, matrix, vectors,
features. Exit status is 0 on success, 1 on a domain error or a failed
expectation, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from src.core.capability import classify, features_of_level, load_feature_table
from src.core.errors import LowpanError
from src.core.fragmentation import fragment
from src.core.iphc import compress, decompress
from src.core.scenarios import check_expectations, get_scenarios, interop_matrix
from src.core.simulator import simulate
from src.core.vectors import read_vectors, verify_vector, write_vectors
from src.core.wire import parse_ipv6, serialize_ipv6
from src.models.capability import FeatureSet
from src.models.codec import DecompressionLimits
from src.utils.config import get_config
from src.utils.logger import get_logger, setup_logging
from src.utils.validators import (
    format_hex,
    parse_features,
    parse_hex,
    parse_level,
    parse_link_address,
    read_contexts_file,
    read_hex_file,
)

logger = get_logger(__name__)

DEFAULT_VECTOR_DIR = Path("tests") / "vectors"


# ============================================================================
# Shared argument handling
# ============================================================================

def _read_input(value: str) -> bytes:
    if value == "-":
        return parse_hex(sys.stdin.read())
    path = Path(value)
    try:
        is_file = path.is_file()
    except OSError:
        is_file = False
    return read_hex_file(path) if is_file else parse_hex(value)


def _feature_set(args: argparse.Namespace) -> FeatureSet:
    if args.features:
        return parse_features(args.features)
    return parse_level(args.level).feature_set


def _limits(args: argparse.Namespace) -> DecompressionLimits:
    limits = get_config().lowpan.limits
    return DecompressionLimits(
        max_expansion=limits.max_expansion if args.max_expansion is None else args.max_expansion,
        max_tunnel_depth=limits.max_tunnel_depth,
    )


def _link(value: Optional[str]):
    return parse_link_address(value) if value else None


def _add_codec_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--in", dest="input", required=True, help="hexdump, file of hex, or - for stdin")
    which = parser.add_mutually_exclusive_group()
    which.add_argument("--level", type=int, default=5, help="capability level 0-5 (default 5)")
    which.add_argument("--features", help="comma-separated feature names (FLEX capability)")
    parser.add_argument("--contexts", type=Path, help="file of '<id> <prefix>/<bits>' lines")
    parser.add_argument("--link-src", help="802.15.4 source address")
    parser.add_argument("--link-dst", help="802.15.4 destination address")
    parser.add_argument("--max-expansion", type=int, help="decompression bound in octets")


# ============================================================================
# Commands
# ============================================================================

def cmd_compress(args: argparse.Namespace) -> int:
    packet = parse_ipv6(_read_input(args.input))
    mtu = get_config().lowpan.link.mtu_payload if args.fragment else None
    compressed = compress(
        packet,
        read_contexts_file(args.contexts),
        _feature_set(args),
        _limits(args),
        link_src=_link(args.link_src),
        link_dst=_link(args.link_dst),
        compress_inner=args.compress_inner,
        mtu_payload=mtu,
    )
    if mtu is not None:
        for payload in fragment(compressed, compressed.uncompressed_size, mtu, args.tag):
            print(format_hex(payload))
            print()
    else:
        print(format_hex(compressed.data))
    descriptor = compressed.descriptor
    print(f"# level: {int(descriptor.required_level)}")
    print(f"# features: {', '.join(descriptor.features_used.labels())}")
    print(f"# expansion: {descriptor.decompression_expansion}")
    if args.verbose:
        print(f"# {descriptor}", file=sys.stderr)
    return 0


def cmd_decompress(args: argparse.Namespace) -> int:
    packet = decompress(
        _read_input(args.input),
        read_contexts_file(args.contexts),
        _feature_set(args),
        _limits(args),
        _link(args.link_src),
        _link(args.link_dst),
    )
    print(format_hex(serialize_ipv6(packet)))
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    descriptor = classify(_read_input(args.input), link_src=_link(args.link_src), link_dst=_link(args.link_dst))
    print(f"required_level: {int(descriptor.required_level)}")
    print(f"expansion: {descriptor.decompression_expansion}")
    print("features:")
    for feature in descriptor.features_used.members():
        print(f"  {int(feature):2d} {feature.name} (level {int(feature.level)})")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenarios = get_scenarios(args.scenario)
    events_file = open(args.events, "w", encoding="utf-8") if args.events else None
    problems: List[str] = []
    try:
        for scenario in scenarios:
            result = simulate(scenario, seed=args.seed)
            if events_file is not None:
                for line in result.event_lines():
                    events_file.write(line + "\n")
            for verdict in result.verdicts:
                errors = f" errors={verdict.errors}" if verdict.errors else ""
                print(
                    f"{scenario.name}: {verdict.sender}({verdict.sender_profile}) -> "
                    f"{verdict.receiver}({verdict.receiver_profile}): {verdict}{errors} "
                    f"[{verdict.delivered}/{verdict.datagrams} delivered]"
                )
            problems.extend(check_expectations(result.verdicts, scenario.expectations))
    finally:
        if events_file is not None:
            events_file.close()
    for problem in problems:
        print(f"EXPECTATION FAILED: {problem}", file=sys.stderr)
    return 1 if problems else 0


def cmd_matrix(args: argparse.Namespace) -> int:
    profiles = None
    if args.profiles and args.profiles != "all":
        profiles = [p.strip() for p in args.profiles.split(",") if p.strip()]
    scenarios = [] if args.scenarios == "none" else get_scenarios(args.scenarios)
    matrix = interop_matrix(profiles, scenarios, baseline=args.baseline, seed=args.seed)
    if args.format == "csv":
        sys.stdout.write(matrix.to_csv())
    else:
        text = matrix.to_text()
        if text:
            print(text)
        print(f"\n{len(matrix.verdicts)} verdict(s), {len(matrix.failures())} failure(s)")
    for problem in matrix.problems:
        print(f"EXPECTATION FAILED: {problem}", file=sys.stderr)
    return 1 if matrix.problems else 0


def cmd_vectors(args: argparse.Namespace) -> int:
    if args.write:
        for path in write_vectors(args.dir):
            print(path)
        return 0
    problems: List[str] = []
    vectors = read_vectors(args.dir)
    for vector in vectors:
        problems.extend(verify_vector(vector))
    for problem in problems:
        print(problem, file=sys.stderr)
    print(f"{len(vectors)} vector(s) checked, {len(problems)} problem(s)")
    return 1 if problems else 0


def cmd_features(args: argparse.Namespace) -> int:
    for index, name, level, provenance in load_feature_table():
        print(f"{index:2d}  {name:<32} L{level}  {provenance}")
    if args.level is not None:
        print(f"\nlevel {args.level}: {features_of_level(args.level)}")
    return 0


# ============================================================================
# Entry point
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p6lowpan", description="P6LoWPAN codec and interoperability simulator")
    parser.add_argument("--log-level", help="override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress an IPv6 datagram")
    _add_codec_arguments(p)
    p.add_argument("--compress-inner", action="store_true", help="compress tunneled IPv6 headers")
    p.add_argument("--fragment", action="store_true", help="emit RFC 4944 fragments")
    p.add_argument("--tag", type=int, default=1, help="datagram tag for --fragment")
    p.add_argument("-v", "--verbose", action="store_true", help="print the encoding descriptor to stderr")
    p.set_defaults(handler=cmd_compress)

    p = sub.add_parser("decompress", help="restore an IPv6 datagram from a frame payload")
    _add_codec_arguments(p)
    p.set_defaults(handler=cmd_decompress)

    p = sub.add_parser("classify", help="list the features a frame payload exercises")
    p.add_argument("--in", dest="input", required=True, help="hexdump, file of hex, or - for stdin")
    p.add_argument("--link-src", help="802.15.4 source address")
    p.add_argument("--link-dst", help="802.15.4 destination address")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("simulate", help="run scenarios and print verdicts")
    p.add_argument("--scenario", required=True, help="builtin, p6lowpan, baseline, all, a scenario name or a JSON file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--events", type=Path, help="write the event log as JSON lines")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("matrix", help="interoperability matrix")
    p.add_argument("--profiles", default="all", help="'all' or comma-separated profile names")
    p.add_argument("--scenarios", default="builtin", help="scenario set or file; 'none' for baselines only")
    p.add_argument("--baseline", action="store_true", help="add common-encoding baselines for legacy pairs")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_matrix)

    p = sub.add_parser("vectors", help="check or regenerate golden vectors")
    p.add_argument("--write", action="store_true", help="regenerate instead of checking")
    p.add_argument("--dir", type=Path, default=DEFAULT_VECTOR_DIR)
    p.set_defaults(handler=cmd_vectors)

    p = sub.add_parser("features", help="print the feature table")
    p.add_argument("--level", type=int, choices=range(6), help="also list one level's features")
    p.set_defaults(handler=cmd_features)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        logging_config = get_config().lowpan.logging
        setup_logging(logging_config, level=args.log_level)
    try:
        return args.handler(args)
    except LowpanError as e:
        logger.debug("command_failed", command=args.command, reason=e.reason)
        print(f"error: {e.reason}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
