import struct

import numpy as np
import pytest

from slkd.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from slkd.config import NetConfig
from slkd.errors import FormatError
from slkd.net import Model, build_network

TOY = NetConfig(levels=2, blocks=(1, 1), base_dim=4, unified_dim=4)


def _parse_layout(buf):
    """Independent reader following the documented byte layout."""
    assert buf[:4] == b"SLKD"
    version, n = struct.unpack_from("<II", buf, 4)
    pos = 12 + n
    cfg_json = buf[12:pos].decode()
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + ln].decode()
        pos += 2 + ln
        rank = buf[pos]
        dims = struct.unpack_from(f"<{rank}I", buf, pos + 1)
        pos += 1 + 4 * rank
        size = int(np.prod(dims))
        tensors[name] = np.frombuffer(buf, "<f4", size, pos).reshape(dims)
        pos += 4 * size
    assert pos == len(buf)
    return version, cfg_json, tensors


def test_byte_layout_matches_reference_reader():
    m = build_network(TOY, 3)
    version, cfg_json, tensors = _parse_layout(dumps(m))
    assert version == 1
    assert NetConfig.model_validate_json(cfg_json) == TOY
    assert list(tensors) == [n for n, _ in m.named_shapes()]
    for k, v in tensors.items():
        assert np.array_equal(v, m.params[k])


def test_round_trip_bit_exact(tmp_path):
    m = build_network(TOY, 4)
    m.params["head.w"][0, 0, 0, 0] = np.float32(-0.0)
    m.params["tail.b"][0] = np.float32(1e-40)  # subnormal
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(m, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.cfg == TOY
    for k, v in m.params.items():
        assert v.tobytes() == loaded.params[k].tobytes()


def test_truncated_payload_names_tensor_and_offset():
    buf = dumps(build_network(TOY, 0))
    with pytest.raises(FormatError, match=r"'tail\.b' payload.*offset \d+"):
        loads(buf[:-4])


def test_bad_magic_and_version():
    buf = dumps(build_network(TOY, 0))
    with pytest.raises(FormatError, match="magic.*offset 0"):
        loads(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="version 2.*offset 4"):
        loads(MAGIC + struct.pack("<I", 2) + buf[8:])


def test_trailing_garbage_rejected():
    with pytest.raises(FormatError, match="trailing"):
        loads(dumps(build_network(TOY, 0)) + b"\0")


def test_zero_tensors_loads_shell_and_fills():
    shell = loads(dumps(Model(TOY)))
    assert shell.is_shell and shell.cfg == TOY
    ref = build_network(TOY, 9)
    shell.fill(ref.params)
    assert shell.num_params() == ref.num_params()


def test_shape_mismatch_rejected():
    m = build_network(TOY, 0)
    m.params["head.w"] = m.params["head.w"][:2]
    with pytest.raises(FormatError, match="head.w"):
        loads(dumps(m))
