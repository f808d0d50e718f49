from __future__ import annotations

import struct

import numpy as np
import pytest

from deptharb import AttentionField, DumpError, read_dump, round_trip32, write_dump


def random_field(seed: int, shape=(3, 8, 8)) -> AttentionField:
    rng = np.random.default_rng(seed)
    return AttentionField(maps=rng.uniform(0.0, 2.0, size=shape))


class TestRoundTrip:
    def test_values_survive_bit_exactly_at_32_bits(self, tmp_path):
        field = random_field(1)
        path = tmp_path / "field.darb"
        write_dump(str(path), field, seed=42)
        loaded, seed = read_dump(str(path))
        assert seed == 42
        assert loaded.maps.shape == field.maps.shape
        assert np.array_equal(loaded.maps, field.maps.astype(np.float32).astype(np.float64))

    def test_write_read_write_is_stable(self, tmp_path):
        field = random_field(2)
        p1 = tmp_path / "a.darb"
        p2 = tmp_path / "b.darb"
        write_dump(str(p1), field, seed=7)
        loaded, _ = read_dump(str(p1))
        write_dump(str(p2), loaded, seed=7)
        assert p1.read_bytes() == p2.read_bytes()

    def test_round_trip32_matches_file_path(self, tmp_path):
        field = random_field(3)
        path = tmp_path / "c.darb"
        write_dump(str(path), field, seed=0)
        loaded, _ = read_dump(str(path))
        assert np.array_equal(loaded.maps, round_trip32(field).maps)

    def test_rounding_is_nearest(self):
        value = 1.0 + 2.0**-24 + 2.0**-30  # not representable at 32 bits
        field = AttentionField(maps=np.full((1, 2, 2), value))
        rounded = round_trip32(field)
        assert rounded.maps[0, 0, 0] == float(np.float32(value))
        assert rounded.maps[0, 0, 0] != value


class TestHeaderLayout:
    def test_exact_byte_layout(self, tmp_path):
        field = AttentionField(maps=np.arange(8.0).reshape(2, 2, 2))
        path = tmp_path / "layout.darb"
        write_dump(str(path), field, seed=0x0102030405060708)
        raw = path.read_bytes()
        assert raw[0:4] == b"DARB"
        assert struct.unpack_from("<H", raw, 4)[0] == 1
        assert struct.unpack_from("<III", raw, 6) == (2, 2, 2)
        assert struct.unpack_from("<Q", raw, 18)[0] == 0x0102030405060708
        payload = np.frombuffer(raw, dtype="<f4", offset=26)
        assert np.array_equal(payload, np.arange(8.0, dtype=np.float32))

    def test_seed_range_enforced(self, tmp_path):
        field = random_field(4)
        with pytest.raises(DumpError):
            write_dump(str(tmp_path / "x.darb"), field, seed=-1)
        with pytest.raises(DumpError):
            write_dump(str(tmp_path / "x.darb"), field, seed=2**64)


class TestReadErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.darb"
        path.write_bytes(b"NOPE" + bytes(22))
        with pytest.raises(DumpError, match="magic"):
            read_dump(str(path))

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.darb"
        path.write_bytes(struct.pack("<4sHIIIQ", b"DARB", 9, 2, 2, 1, 0) + bytes(16))
        with pytest.raises(DumpError, match="version"):
            read_dump(str(path))

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "bad.darb"
        path.write_bytes(b"DARB\x01")
        with pytest.raises(DumpError, match="short"):
            read_dump(str(path))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad.darb"
        path.write_bytes(struct.pack("<4sHIIIQ", b"DARB", 1, 4, 4, 2, 0) + bytes(10))
        with pytest.raises(DumpError, match="payload"):
            read_dump(str(path))

    def test_trailing_garbage(self, tmp_path):
        field = random_field(5, shape=(1, 2, 2))
        path = tmp_path / "pad.darb"
        write_dump(str(path), field, seed=1)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DumpError, match="payload"):
            read_dump(str(path))
