import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from roap.checkpoint import MAGIC, VERSION, CheckpointError, load_checkpoint, save_checkpoint

named_arrays = st.dictionaries(
    st.text("abcdefgh.0123456789", min_size=1, max_size=12),
    arrays(np.float64, st.lists(st.integers(0, 4), max_size=3).map(tuple), elements=st.floats(allow_nan=False)),
    max_size=5,
)


@given(named_arrays)
def test_round_trip_bit_exact(tmp_path_factory, arrs):
    p = tmp_path_factory.mktemp("ck") / "a.ckpt"
    save_checkpoint(p, arrs)
    back = load_checkpoint(p)
    assert set(back) == set(arrs)
    for k, v in arrs.items():
        assert back[k].shape == v.shape and back[k].tobytes() == v.astype("<f8").tobytes()


def test_deterministic_bytes(tmp_path):
    a = {"w": np.arange(6.0).reshape(2, 3), "b": np.ones(2)}
    save_checkpoint(tmp_path / "1", a)
    save_checkpoint(tmp_path / "2", dict(reversed(list(a.items()))))
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_header_layout(tmp_path):
    save_checkpoint(tmp_path / "c", {"x": np.array([1.5])})
    raw = (tmp_path / "c").read_bytes()
    magic, version, mlen = struct.unpack_from("<8sIQ", raw)
    assert magic == MAGIC and version == VERSION
    assert struct.unpack_from("<d", raw, 20 + mlen)[0] == 1.5


def test_corruptions(tmp_path):
    p = tmp_path / "c"
    save_checkpoint(p, {"x": np.arange(4.0)})
    raw = p.read_bytes()
    for bad, match in [(b"XXXXXXXX" + raw[8:], "magic"), (raw[:10], "truncated"), (raw[:-8], "past end"),
                       (raw[:8] + struct.pack("<I", 9) + raw[12:], "version")]:
        p.write_bytes(bad)
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(p)
