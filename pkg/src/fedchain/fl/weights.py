"""Flat parameter vectors for fully connected networks, and their wire format."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FLW1"


class ShapeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


def layer_sizes(shapes) -> list[int]:
    """Parameter count of each dense layer (weights plus bias)."""
    return [a * b + b for a, b in zip(shapes[:-1], shapes[1:])]


def n_params(shapes) -> int:
    return sum(layer_sizes(shapes))


def check_shapes(shapes):
    shapes = tuple(int(s) for s in shapes)
    if len(shapes) < 3:
        raise ShapeError(f"need input, at least one hidden layer and output; got {shapes}")
    if any(s < 1 for s in shapes):
        raise ShapeError(f"layer widths must be positive; got {shapes}")
    return shapes


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    shapes: tuple

    def __post_init__(self):
        shapes = tuple(int(s) for s in self.shapes)
        values = np.array(self.values, dtype=np.float64)
        values.flags.writeable = False
        if values.ndim != 1:
            raise ShapeError("values must be a flat array")
        if len(shapes) < 2 or n_params(shapes) != values.size:
            raise ShapeError(f"{values.size} values do not fit layer shapes {shapes}")
        if not np.all(np.isfinite(values)):
            raise ValueError("weight values must be finite")
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.values, other.values)

    def layers(self):
        """Yield ``(W, b)`` views per dense layer, ``W`` shaped (fan_in, fan_out)."""
        pos = 0
        for a, b in zip(self.shapes[:-1], self.shapes[1:]):
            W = self.values[pos:pos + a * b].reshape(a, b)
            pos += a * b
            yield W, self.values[pos:pos + b]
            pos += b

    def replace(self, values) -> "WeightVector":
        return WeightVector(np.asarray(values, dtype=np.float64), self.shapes)


def init_weights(shapes, seed) -> WeightVector:
    """He-scaled normal weights and zero biases, deterministic in ``seed``."""
    shapes = check_shapes(shapes)
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(shapes[:-1], shapes[1:]):
        parts.append(rng.normal(0.0, np.sqrt(2.0 / a), size=a * b))
        parts.append(np.zeros(b))
    return WeightVector(np.concatenate(parts), shapes)


def header_len(n_layers: int) -> int:
    return len(MAGIC) + 4 + 4 * n_layers


def encode_weights(w: WeightVector) -> bytes:
    """``FLW1`` | u32 layer count | u32 widths | f64 values, all little-endian."""
    head = MAGIC + struct.pack(f"<I{len(w.shapes)}I", len(w.shapes), *w.shapes)
    return head + w.values.astype("<f8", copy=False).tobytes()


def decode_weights(blob: bytes) -> WeightVector:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise DecodeError("missing FLW1 magic")
    (n_layers,) = struct.unpack_from("<I", blob, 4)
    if len(blob) < header_len(n_layers):
        raise DecodeError("truncated shape header")
    shapes = struct.unpack_from(f"<{n_layers}I", blob, 8)
    body = blob[header_len(n_layers):]
    expected = 8 * n_params(shapes) if n_layers >= 2 else -1
    if len(body) != expected:
        raise DecodeError(f"expected {expected} value bytes for {shapes}, got {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    try:
        return WeightVector(values, shapes)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None
