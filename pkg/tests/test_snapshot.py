import struct

import numpy as np
import pytest

from conftest import random_solenoidal
from nsteady.perturbations import chirp
from nsteady.snapshot import (
    MAX_N,
    SnapshotError,
    as_real_spectral,
    decode,
    encode,
    read_snapshot,
    write_snapshot,
)
from nsteady.spectral_core import Grid, PhysicalVectorField, inverse_transform


@pytest.fixture
def fields(g16, rng):
    u = random_solenoidal(g16, rng)
    return {
        "spectral": u,
        "physical_real": inverse_transform(u),
        "physical_complex": inverse_transform(chirp(g16, 1.0, 4.0)),
    }


class TestRoundTrip:
    @pytest.mark.parametrize("kind", ["spectral", "physical_real", "physical_complex"])
    def test_bit_identical(self, fields, kind, tmp_path):
        f = fields[kind]
        path = tmp_path / "f.nsf1"
        write_snapshot(f, path)
        back = read_snapshot(path)
        assert type(back) is type(f)
        assert back.grid.n == f.grid.n and back.grid.L == f.grid.L
        a = back.coeffs if kind == "spectral" else back.samples
        b = f.coeffs if kind == "spectral" else f.samples
        assert a.dtype == b.dtype
        assert a.tobytes() == b.tobytes()
        assert encode(back) == path.read_bytes()
        assert not (tmp_path / "f.nsf1.tmp").exists()

    def test_size(self, fields):
        n = 16
        assert len(encode(fields["physical_real"])) == 17 + 3 * n**3 * 8
        assert len(encode(fields["spectral"])) == 17 + 3 * n**3 * 16

    def test_first_index_fastest(self):
        g = Grid(8, 1.0)
        s = np.zeros((3, 8, 8, 8))
        s[0, 1, 0, 0] = 7.0
        body = np.frombuffer(encode(PhysicalVectorField(g, s))[17:], dtype="<f8")
        assert body[1] == 7.0 and np.count_nonzero(body) == 1

    def test_real_reflag(self, fields):
        back = decode(encode(fields["spectral"]))
        assert not back.real_valued
        assert as_real_spectral(back).real_valued

    def test_reflag_rejects_non_hermitian(self, fields):
        c = fields["spectral"].coeffs.copy()
        c[0, 1, 2, 3] += 1.0
        with pytest.raises(SnapshotError):
            as_real_spectral(decode(encode(fields["spectral"]._new(c, real_valued=False))))


class TestMalformed:
    def test_bad_magic(self, fields):
        buf = bytearray(encode(fields["physical_real"]))
        buf[:4] = b"NSF2"
        with pytest.raises(SnapshotError, match="magic"):
            decode(bytes(buf))

    def test_truncated_payload(self, fields):
        buf = encode(fields["spectral"])
        with pytest.raises(SnapshotError, match="payload"):
            decode(buf[:-8])

    def test_truncated_header(self):
        with pytest.raises(SnapshotError):
            decode(b"NSF1\x00")

    def test_dimension_overflow(self):
        buf = struct.pack("<4sIdB", b"NSF1", MAX_N * 2, 1.0, 0)
        with pytest.raises(SnapshotError, match="dimension"):
            decode(buf)

    def test_unknown_flag(self):
        with pytest.raises(SnapshotError, match="flag"):
            decode(struct.pack("<4sIdB", b"NSF1", 8, 1.0, 9))

    def test_invalid_grid(self):
        with pytest.raises(SnapshotError, match="grid"):
            decode(struct.pack("<4sIdB", b"NSF1", 8, -1.0, 0))

    def test_unsupported_type(self):
        with pytest.raises(TypeError):
            encode(np.zeros(3))
