"""Feature sources behind the pluggable backbone boundary.

Pre-extracted feature maps arrive through the BTFT tensor container; a
small two-layer convolutional backbone stands in for the frozen
pretrained extractor when running desk-scale end-to-end experiments.

BTFT layout (little-endian): magic "BTFT", version u32, dtype code u8
(1 = float32), rank u8, one u32 extent per axis, then the row-major
payload. Header for a rank-1 tensor is exactly 14 bytes.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)
from .nn import Conv2D, ReLU, Sequential
from .tensor import tensor

MAGIC = b"BTFT"
VERSION = 1
DTYPE_F32 = 1


def save_tensor(t, path):
    """Write one tensor in the BTFT container layout."""
    arr = np.ascontiguousarray(t, dtype="<f4")
    header = struct.pack("<4sIBB", MAGIC, VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write tensor to {path}: {e}") from e


def load_feature_map(path):
    """Read one BTFT tensor; bit-exact round trip with save_tensor."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read tensor from {path}: {e}") from e
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a BTFT file")
    version, dtype_code, rank = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {VERSION}")
    if dtype_code != DTYPE_F32:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}, expected {DTYPE_F32}")
    offset = 10 + 4 * rank
    if len(raw) < offset:
        raise TruncatedPayload(f"{path}: header truncated")
    extents = struct.unpack_from(f"<{rank}I", raw, 10)
    expected = 4 * int(np.prod(extents)) if rank else 0
    payload = raw[offset:]
    if len(payload) != expected:
        raise TruncatedPayload(f"{path}: payload {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(extents).astype(np.float32)
    return tensor(arr)


class ImportedFeatures:
    """Directory of <sample_id>.btft feature maps from a frozen backbone.

    Never trainable; every map in one dataset must share a single shape.
    """

    kind = "imported_features"
    trainable = False

    def __init__(self, directory, output_channels):
        self.directory = Path(directory)
        self.output_channels = output_channels
        self._shape = None

    def path_for(self, sample_id):
        return self.directory / f"{sample_id}.btft"

    def load(self, sample_id):
        fmap = load_feature_map(self.path_for(sample_id))
        if fmap.ndim != 3 or fmap.shape[2] != self.output_channels:
            raise ShapeMismatch(
                f"{sample_id}: feature map {fmap.shape} incompatible with "
                f"{self.output_channels} channels"
            )
        if self._shape is None:
            self._shape = fmap.shape
        elif fmap.shape != self._shape:
            raise ShapeMismatch(f"{sample_id}: shape {fmap.shape} != dataset shape {self._shape}")
        return fmap


class ToyBackbone:
    """Two strided conv+ReLU stages: 224x224x3 -> 53x53x16.

    A desk-scale stand-in for the frozen pretrained extractor; frozen by
    default, trainable on request for end-to-end gradient flow.
    """

    kind = "toy_cnn"
    input_shape = (224, 224, 3)
    output_channels = 16

    def __init__(self, rng, trainable=False):
        self.trainable = trainable
        self.net = Sequential([
            Conv2D(3, 8, 5, 5, 2, rng),
            ReLU(),
            Conv2D(8, 16, 5, 5, 2, rng),
            ReLU(),
        ])

    def forward(self, img, train=False):
        if img.shape != self.input_shape:
            raise ShapeMismatch(f"toy backbone expects {self.input_shape}, got {img.shape}")
        return self.net.forward(img, train=train)

    def backward(self, grad_out):
        return self.net.backward(grad_out)

    def zero_grad(self):
        self.net.zero_grad()

    def astype(self, dtype):
        self.net.astype(dtype)

    def parameters(self, prefix="backbone."):
        return self.net.parameters(prefix)
