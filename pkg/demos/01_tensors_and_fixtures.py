"""Seeded tensors, layout checks and the bitwise fixture format."""
import tempfile
from pathlib import Path

import numpy as np

from mlrupp.errors import FormatError, ShapeError
from mlrupp.tensor import Rng, Tensor, fixture_bytes, load_fixture, parse_fixture, reference_fixture, save_fixture

ref = reference_fixture()
print(ref)
print("first values:", ref.numpy().ravel()[:4])

# tensors are tagged with axis roles; a layout without a channel axis is refused
try:
    Tensor(np.zeros((1, 3, 4)), ("N", "H", "W"))
except ShapeError as exc:
    print("rejected layout:", exc)

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "vol.f64"
    vol = Tensor.from_array(Rng(3).normal((1, 2, 4, 4, 4)))
    save_fixture(vol, path)
    back = load_fixture(path)
    print("round trip bitwise:", fixture_bytes(back) == path.read_bytes(), back.shape, back.layout)

    raw = path.read_bytes()
    try:
        parse_fixture(raw[:-8])
    except FormatError as exc:
        print("truncated file:", exc)
