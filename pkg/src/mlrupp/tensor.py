"""Dense float64 tensors with axis-role tags, a seeded RNG and the fixture file format.

The fixture format is one UTF-8 JSON header line terminated by ``\\n`` followed by
the raw little-endian IEEE-754 float64 payload in row-major order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ShapeError

BATCH, CHANNEL = "batch", "channel"
SPATIAL_TAGS = ("depth", "height", "width")
AXIS_TAGS = (BATCH, CHANNEL) + SPATIAL_TAGS

FIXTURE_VERSION = 1

_DEFAULT_LAYOUTS = {
    3: (BATCH, CHANNEL, "width"),
    4: (BATCH, CHANNEL, "height", "width"),
    # volumes follow the H x W x D convention used for the network input
    5: (BATCH, CHANNEL, "height", "width", "depth"),
}


def default_layout(ndim: int) -> tuple[str, ...]:
    try:
        return _DEFAULT_LAYOUTS[ndim]
    except KeyError:
        raise ShapeError(f"no default layout for a {ndim}-d tensor (need 3 to 5 axes)") from None


def check_layout(shape: Sequence[int], layout: Sequence[str]) -> None:
    if len(layout) != len(shape):
        raise ShapeError(f"layout {tuple(layout)} has {len(layout)} tags for a {len(shape)}-d shape")
    unknown = [t for t in layout if t not in AXIS_TAGS]
    if unknown:
        raise ShapeError(f"unknown axis tags {unknown}")
    if list(layout).count(BATCH) != 1 or list(layout).count(CHANNEL) != 1:
        raise ShapeError("layout needs exactly one batch and one channel axis")
    spatial = [t for t in layout if t in SPATIAL_TAGS]
    if not 1 <= len(spatial) <= 3 or len(set(spatial)) != len(spatial):
        raise ShapeError("layout needs 1-3 distinct spatial axes")
    if layout[0] != BATCH or layout[1] != CHANNEL:
        raise ShapeError("layout must be (batch, channel, spatial...)")


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable row-major float64 array tagged with axis roles."""

    data: np.ndarray
    layout: tuple[str, ...]

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if any(n < 1 for n in data.shape):
            raise ShapeError(f"all extents must be >= 1, got {data.shape}")
        check_layout(data.shape, self.layout)
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor data contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "layout", tuple(self.layout))

    @classmethod
    def from_array(cls, array, layout: Sequence[str] | None = None) -> "Tensor":
        array = np.asarray(array, dtype=np.float64)
        return cls(array, tuple(layout) if layout is not None else default_layout(array.ndim))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.data.shape[2:]

    def numpy(self) -> np.ndarray:
        return self.data

    def bitwise_equal(self, other: "Tensor") -> bool:
        return (
            self.layout == other.layout
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        return f"Tensor(shape={self.shape}, layout={self.layout})"


class Rng:
    """Seeded uniform generator backed by numpy's PCG64 bit generator.

    PCG64 streams are specified by numpy and reproducible across platforms for
    a given seed, which is what fixtures and training traces rely on.
    """

    algorithm = "numpy.random.PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def tensor_new(shape: Sequence[int], layout: Sequence[str] | None = None, fill: float | Rng = 0.0) -> Tensor:
    """Create a tensor filled with a constant or with uniform(-1, 1) draws from ``fill``."""
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    layout = tuple(layout) if layout is not None else default_layout(len(shape))
    check_layout(shape, layout)
    if isinstance(fill, Rng):
        data = fill.uniform(-1.0, 1.0, shape)
    else:
        data = np.full(shape, float(fill))
    return Tensor(data, layout)


def _header(t: Tensor) -> bytes:
    header = {
        "dtype": "f64",
        "endianness": "little",
        "layout": list(t.layout),
        "shape": list(t.shape),
        "version": FIXTURE_VERSION,
    }
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")


def fixture_bytes(t: Tensor) -> bytes:
    return _header(t) + t.data.astype("<f8").tobytes()


def save_fixture(t: Tensor, path) -> None:
    Path(path).write_bytes(fixture_bytes(t))


def parse_fixture(raw: bytes) -> Tensor:
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError("missing header terminator")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object")
    for key in ("shape", "layout", "dtype", "version"):
        if key not in header:
            raise FormatError(f"header missing {key!r}")
    if header["dtype"] != "f64":
        raise FormatError(f"unsupported dtype {header['dtype']!r}")
    if header["version"] != FIXTURE_VERSION:
        raise FormatError(f"unsupported version {header['version']!r}")
    if header.get("endianness", "little") != "little":
        raise FormatError("payload must be little-endian")
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 1 for n in shape):
        raise FormatError(f"bad shape {shape!r}")
    payload = raw[newline + 1:]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, header shape {shape} needs {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    try:
        return Tensor(data, tuple(header["layout"]))
    except (ShapeError, ValueError) as exc:
        raise FormatError(str(exc)) from None


def load_fixture(path) -> Tensor:
    return parse_fixture(Path(path).read_bytes())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def reference_fixture() -> Tensor:
    """The tensor written by the reference fixture generator: seed 7, shape [1, 3, 8, 8]."""
    return tensor_new((1, 3, 8, 8), fill=Rng(7))
