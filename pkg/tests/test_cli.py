"""
Tests for the p6lowpan command line and golden vectors
"""

import io
import json
from pathlib import Path

import pytest

from src.cli import main
from src.core.capability import classify
from src.core.errors import ConfigError
from src.core.vectors import format_vector, golden_vectors, parse_vector, read_vectors, verify_vector
from src.core.wire import serialize_ipv6
from src.models.capability import Feature
from src.models.packet import ExtensionHeader, ExtensionKind, LinkAddress
from src.utils.validators import parse_hex

LINKS = ["--link-src", "02:00:00:00:00:00:00:01", "--link-dst", "02:00:00:00:00:00:00:02"]
COMPRESSED_L5 = bytes.fromhex("7e33f416331633") + bytes(range(10))
VECTOR_DIR = Path(__file__).resolve().parent / "vectors"


@pytest.fixture
def datagram_hex(udp_packet):
    return serialize_ipv6(udp_packet).hex()


class TestCodecCommands:
    def test_compress(self, capsys, datagram_hex):
        assert main(["compress", "--in", datagram_hex] + LINKS) == 0
        assert parse_hex(capsys.readouterr().out) == COMPRESSED_L5

    def test_compress_from_file(self, capsys, tmp_path, datagram_hex):
        path = tmp_path / "datagram.hex"
        path.write_text("# udp\n" + datagram_hex + "\n")
        assert main(["compress", "--in", str(path), "--level", "0"] + LINKS) == 0
        assert parse_hex(capsys.readouterr().out) == b"\x41" + bytes.fromhex(datagram_hex)

    def test_compress_verbose(self, capsys, datagram_hex):
        main(["compress", "--in", datagram_hex, "-v"] + LINKS)
        assert "UdpChecksumElision" in capsys.readouterr().err

    def test_compress_fragments(self, capsys, make_udp):
        datagram = serialize_ipv6(make_udp(payload=bytes(300))).hex()
        assert main(["compress", "--in", datagram, "--fragment", "--tag", "7"] + LINKS) == 0
        blocks = [b for b in capsys.readouterr().out.split("\n\n") if b.strip() and not b.startswith("#")]
        assert len(blocks) == 4
        assert parse_hex(blocks[0])[:4] == bytes([0xC1, 0x5C, 0x00, 0x07])

    def test_compress_summary(self, capsys, datagram_hex):
        main(["compress", "--in", datagram_hex] + LINKS)
        lines = capsys.readouterr().out.splitlines()
        assert "# level: 5" in lines
        assert "# expansion: 41" in lines
        features = next(line for line in lines if line.startswith("# features: "))
        assert "UdpChecksumElision" in features

    def test_compress_pipes_into_decompress(self, capsys, monkeypatch, datagram_hex):
        main(["compress", "--in", datagram_hex] + LINKS)
        monkeypatch.setattr("sys.stdin", io.StringIO(capsys.readouterr().out))
        assert main(["decompress", "--in", "-"] + LINKS) == 0
        assert parse_hex(capsys.readouterr().out).hex() == datagram_hex

    def test_fragments_stay_within_level(self, capsys, make_udp):
        padding = ExtensionHeader(kind=ExtensionKind.HOP_BY_HOP, body=bytes([0x01, 156]) + bytes(156))
        datagram = serialize_ipv6(make_udp(extensions=[padding])).hex()
        assert main(["compress", "--in", datagram, "--level", "3", "--fragment"] + LINKS) == 0
        blocks = [b for b in capsys.readouterr().out.split("\n\n") if b.strip() and not b.startswith("#")]
        first = parse_hex(blocks[0])
        assert first[4] == 0x41
        descriptor = classify(first, link_src=LinkAddress.parse(LINKS[1]), link_dst=LinkAddress.parse(LINKS[3]))
        assert descriptor.required_level <= 3
        assert Feature.COMPRESSION_PAST_FIRST_FRAGMENT not in descriptor.features_used

    def test_decompress(self, capsys, datagram_hex):
        assert main(["decompress", "--in", COMPRESSED_L5.hex()] + LINKS) == 0
        assert parse_hex(capsys.readouterr().out).hex() == datagram_hex

    def test_decompress_unsupported(self, capsys):
        assert main(["decompress", "--in", COMPRESSED_L5.hex(), "--level", "4"] + LINKS) == 1
        assert capsys.readouterr().err.startswith("error: UdpChecksumElision")

    def test_decompress_with_features(self, capsys):
        assert main(["decompress", "--in", "41 60", "--features", "UncompressedIpv6"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_contexts_file(self, capsys, tmp_path, make_udp):
        contexts = tmp_path / "contexts.txt"
        contexts.write_text("0 2001:db8::/64\n")
        datagram = serialize_ipv6(make_udp("2001:db8::1", "2001:db8::2", sport=0xF0B1, dport=0xF0B2))
        assert main(["compress", "--in", datagram.hex(), "--contexts", str(contexts)] + LINKS) == 0
        assert parse_hex(capsys.readouterr().out)[:4] == bytes.fromhex("7e77f712")

    def test_classify(self, capsys):
        assert main(["classify", "--in", COMPRESSED_L5.hex()] + LINKS) == 0
        out = capsys.readouterr().out
        assert "required_level: 5" in out
        assert "expansion: 41" in out
        assert "UDP_CHECKSUM_ELISION (level 5)" in out

    def test_bad_hex(self, capsys):
        assert main(["classify", "--in", "7e3"]) == 1
        assert "ValidationError" in capsys.readouterr().err

    def test_bad_level(self, capsys, datagram_hex):
        assert main(["compress", "--in", datagram_hex, "--level", "9"]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["compress"])
        assert info.value.code == 2


class TestFeatures:
    def test_table(self, capsys):
        assert main(["features"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 26
        assert lines[0].split()[:3] == ["0", "UNCOMPRESSED_IPV6", "L0"]
        assert lines[25].split()[:3] == ["25", "UDP_CHECKSUM_ELISION", "L5"]

    def test_level(self, capsys):
        main(["features", "--level", "0"])
        assert "level 0:" in capsys.readouterr().out


@pytest.mark.integration
class TestSimulationCommands:
    def test_simulate_builtin(self, capsys, tmp_path):
        events = tmp_path / "events.jsonl"
        assert main(["simulate", "--scenario", "builtin", "--events", str(events)]) == 0
        out = capsys.readouterr().out
        assert "contiki_to_openthread_uncompressed: s(Contiki) -> r(OpenThread): SilentDrop(UncompressedIpv6)" in out
        records = [json.loads(line) for line in events.read_text().splitlines()]
        assert records[0]["kind"] == "DatagramSent"

    def test_simulate_reports_errors(self, capsys):
        assert main(["simulate", "--scenario", "p6lowpan_l5_to_l0_reactive"]) == 0
        assert "ErroredThenDelivered errors=1 [3/3 delivered]" in capsys.readouterr().out

    def test_failed_expectation(self, capsys, tmp_path):
        path = tmp_path / "wrong.json"
        path.write_text(json.dumps({
            "name": "wrong",
            "nodes": [{"id": "s", "profile": "Contiki"}, {"id": "r", "profile": "OpenThread"}],
            "links": [["s", "r"]],
            "traffic": [{"from": "s", "to": "r", "encoding": "uncompressed"}],
            "expectations": [{"from": "s", "to": "r", "outcome": "Delivered"}],
        }))
        assert main(["simulate", "--scenario", str(path)]) == 1
        assert "EXPECTATION FAILED" in capsys.readouterr().err

    def test_unknown_scenario(self, capsys):
        assert main(["simulate", "--scenario", "nowhere"]) == 1

    def test_matrix_csv(self, capsys):
        args = ["matrix", "--profiles", "contiki,riot", "--scenarios", "none", "--baseline", "--format", "csv"]
        assert main(args) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("scenario,sender,receiver")
        assert len(lines) == 3
        assert all(",Delivered," in line for line in lines[1:])

    def test_matrix_text(self, capsys):
        assert main(["matrix"]) == 0
        out = capsys.readouterr().out
        assert "12 verdict(s), 12 failure(s)" in out


class TestVectors:
    def test_stored_vectors_hold(self):
        vectors = read_vectors(VECTOR_DIR)
        assert vectors
        for vector in vectors:
            assert verify_vector(vector) == []

    def test_check_command(self, capsys):
        assert main(["vectors", "--dir", str(VECTOR_DIR)]) == 0
        assert "0 problem(s)" in capsys.readouterr().out

    def test_write_then_check(self, capsys, tmp_path):
        assert main(["vectors", "--write", "--dir", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.hex"))) == 30
        assert main(["vectors", "--dir", str(tmp_path)]) == 0
        assert "30 vector(s) checked, 0 problem(s)" in capsys.readouterr().out

    def test_format_parses_back(self):
        vector = golden_vectors()[0]
        assert parse_vector(format_vector(vector)) == vector

    def test_altered_vector_is_reported(self):
        vector = parse_vector((VECTOR_DIR / "udp_link_local_l5.hex").read_text())
        changed = vector.__class__(vector.name, vector.level, vector.uncompressed, vector.compressed[:-1] + b"\xff")
        problems = verify_vector(changed)
        assert any("compression changed" in p for p in problems)

    def test_missing_section(self):
        with pytest.raises(ConfigError):
            parse_vector("# level: 0\n[uncompressed]\n60\n")
