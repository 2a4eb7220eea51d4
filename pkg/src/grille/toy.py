"""Two-dimensional line cipher on the plane.

A plaintext real m sits at (m, 0) on the X axis; the shared key is any
off-axis point k.  Ciphertext is a point sampled on the line through the
two, and decryption intersects the line through ciphertext and key with
the X axis.  The sampling distribution along the line is what separates
the "classical cryptography" flavor (uniform) from the "generative
steganography" flavor (data-like), while decryption is identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateKeyError,
    InvalidArgumentError,
    NoIntersectionError,
    UndefinedLineError,
)

SAMPLE_MODES = ("uniform", "data-like")


@dataclass(frozen=True)
class PlanePoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidArgumentError("plane points need finite coordinates")


@dataclass(frozen=True)
class ToyDataDensity:
    """Unimodal density for data-like sampling of the line parameter r."""

    mean: float = 1.05
    sigma: float = 0.25


DEFAULT_SEGMENT = (0.1, 2.0)


def toy_encrypt(m: float, key: PlanePoint, r: float) -> PlanePoint:
    """Point (m,0) + r * (key - (m,0)); r = 0 would emit the plaintext itself."""
    if key.y == 0.0:
        raise DegenerateKeyError("key must not lie on the X axis")
    if r == 0.0:
        raise InvalidArgumentError("r must be nonzero")
    return PlanePoint(m + r * (key.x - m), r * key.y)


def toy_decrypt(c: PlanePoint, key: PlanePoint) -> float:
    """X intercept of the line through ciphertext and key."""
    if key.y == 0.0:
        raise DegenerateKeyError("key must not lie on the X axis")
    if c.x == key.x and c.y == key.y:
        raise UndefinedLineError("ciphertext equals the key; no unique line")
    if c.y == key.y:
        raise NoIntersectionError("line through ciphertext and key is parallel to the X axis")
    t = c.y / (c.y - key.y)
    return c.x + t * (key.x - c.x)


def _sample_r(
    mode: str,
    rng: np.random.Generator,
    segment: tuple[float, float],
    density: ToyDataDensity,
) -> float:
    lo, hi = segment
    if not lo < hi:
        raise InvalidArgumentError("segment must satisfy lo < hi")
    if lo <= 0.0 <= hi:
        raise InvalidArgumentError("segment must exclude r = 0")
    if mode == "uniform":
        return float(rng.uniform(lo, hi))
    if mode == "data-like":
        # truncated normal over the segment, by rejection
        while True:
            r = float(rng.normal(density.mean, density.sigma))
            if lo <= r <= hi:
                return r
    raise InvalidArgumentError(f"unknown sampling mode {mode!r}")


def toy_sample_mode(
    mode: str,
    m: float,
    key: PlanePoint,
    rng: np.random.Generator,
    segment: tuple[float, float] = DEFAULT_SEGMENT,
    density: ToyDataDensity = ToyDataDensity(),
) -> PlanePoint:
    """Sample a ciphertext whose marginal along the line follows the mode.

    Decryption does not depend on the mode: any emitted point intersects
    back to m.
    """
    r = _sample_r(mode, rng, segment, density)
    return toy_encrypt(m, key, r)


def line_parameter(c: PlanePoint, key: PlanePoint, m: float) -> float:
    """Recover the r used to emit c on the line through (m,0) and key."""
    if key.y == 0.0:
        raise DegenerateKeyError("key must not lie on the X axis")
    return c.y / key.y
