import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from specreplay import container
from specreplay.errors import FormatError

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)
arrays = hnp.arrays(np.float32, shapes, elements=st.floats(-1e6, 1e6, width=32))


@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=5),
       st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=3))
def test_round_trip(tensors, meta):
    back, meta_back = container.loads(container.dumps(tensors, meta))
    assert list(back) == list(tensors) and meta_back == meta
    for k, v in tensors.items():
        assert back[k].shape == v.shape and back[k].dtype == np.float32
        np.testing.assert_array_equal(back[k], v)


def test_dumps_is_deterministic():
    t = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(2)}
    assert container.dumps(t, {"z": 1, "a": 2}) == container.dumps(dict(t), {"a": 2, "z": 1})


def test_float64_input_stored_as_float32():
    back, _ = container.loads(container.dumps({"x": np.array([0.1])}))
    assert back["x"][0] == np.float32(0.1)


def test_file_round_trip(tmp_path):
    path = tmp_path / "sub" / "m.sprc"
    container.save(path, {"w": np.eye(2)}, {"k": "v"})
    t, m = container.load(path)
    np.testing.assert_array_equal(t["w"], np.eye(2))
    assert m == {"k": "v"}


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b + b"\0",
    lambda b: b[:-3],
    lambda b: b[:12],
    lambda b: b[:4] + b"\x09\x00" + b[6:],
])
def test_corrupt_payloads(mutate):
    good = container.dumps({"x": np.arange(4.0)}, {"m": 1})
    with pytest.raises(FormatError):
        container.loads(mutate(good))


@given(st.integers(0, 60))
def test_every_truncation_rejected(n):
    good = container.dumps({"weights": np.arange(6.0).reshape(2, 3)}, {"k": [1, 2]})
    if n < len(good):
        with pytest.raises(FormatError):
            container.loads(good[:n])
