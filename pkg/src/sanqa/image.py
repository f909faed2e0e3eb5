"""Per-region image features: binary SANF ingestion and the learned projection.

A feature file stores the m x d_raw region grid that stands in for the last
pooling layer of a convolutional image network. The projection maps each raw
region vector into the question-vector space: v_i = tanh(W_I f_i + b_I),
column i of the d x m matrix v_I.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, FormatError

MAGIC = b"SANF"
VERSION = 1


@dataclass
class RegionFeatureMap:
    """m regions in row-major grid order, each a d_raw-dim float32 vector."""

    m: int
    d_raw: int
    features: np.ndarray  # (m, d_raw) float32
    grid_side: int = field(init=False)
    source_image_size: int = 448

    def __post_init__(self):
        g = math.isqrt(self.m)
        if g * g != self.m:
            raise FormatError(f"region count {self.m} is not a perfect square")
        self.grid_side = g
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.shape != (self.m, self.d_raw):
            raise DimensionError(
                f"feature block {self.features.shape} != ({self.m}, {self.d_raw})"
            )
        if not np.all(np.isfinite(self.features)):
            raise FormatError("feature map contains non-finite values")

    def region_block(self, i):
        """Pixel block (x0, y0, side) covered by region i.

        Regions are row-major over the g x g grid: region i sits at grid
        (i mod g, i div g); with the 448-pixel default and g=14 each block
        is 32 x 32 pixels.
        """
        g = self.grid_side
        side = self.source_image_size // g
        return (i % g) * side, (i // g) * side, side


@dataclass
class ImageProjection:
    W_I: Tensor  # (d, d_raw)
    b_I: Tensor  # (d,)


def write_feature_file(path, fmap):
    payload = fmap.features.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, fmap.m, fmap.d_raw))
        fh.write(payload)


def read_feature_file(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != MAGIC:
            raise FormatError(f"{path}: not a SANF feature file")
        version, m, d_raw = struct.unpack("<III", head[4:])
        if version != VERSION:
            raise FormatError(f"{path}: unsupported SANF version {version}")
        payload = fh.read()
    expected = m * d_raw * 4
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload, {len(payload)} < {expected} bytes")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    feats = np.frombuffer(payload, dtype="<f4").reshape(m, d_raw)
    return RegionFeatureMap(m=m, d_raw=d_raw, features=feats)


def project_regions(fmap, proj):
    """v_I = tanh(W_I f_I (+) b_I), one column per region; entries in (-1, 1)."""
    if proj.W_I.shape[1] != fmap.d_raw:
        raise DimensionError(
            f"projection expects d_raw={proj.W_I.shape[1]}, feature map has {fmap.d_raw}"
        )
    f = Tensor(fmap.features.T)  # (d_raw, m)
    return ad.tanh(ad.oplus(ad.matmul(proj.W_I, f), proj.b_I))


def project_regions_batch(features, proj):
    """Batched projection: (B, m, d_raw) raw features -> (B, d, m) tensor."""
    if features.ndim != 3 or features.shape[2] != proj.W_I.shape[1]:
        raise DimensionError(
            f"batched features {features.shape} do not match d_raw={proj.W_I.shape[1]}"
        )
    f = Tensor(np.ascontiguousarray(features.transpose(0, 2, 1)))  # (B, d_raw, m)
    d = proj.W_I.shape[0]
    return ad.tanh(ad.add(ad.matmul(proj.W_I, f), ad.reshape(proj.b_I, (d, 1))))
