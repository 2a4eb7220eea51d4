"""Digital Cardan grille keys and image-completion masks.

A completion mask marks which pixels of a corrupted image are known
(1) versus missing (0).  A grille key selects a keyed pseudorandom
subset of the known pixels; those cells carry message bits at a chosen
bit plane of one color channel.  Everything here is a pure function of
its inputs and all values are immutable once built.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCapacityError, InvalidArgumentError, KeyFormatError

KEY_FORMAT_VERSION = 1
SEED_BYTES = 32

MASK_PATTERNS = ("random-scatter", "block", "stripes")


def _as_binary_matrix(arr, name):
    a = np.asarray(arr, dtype=np.uint8)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a 2-d matrix, got shape {a.shape}")
    if a.size == 0:
        raise InvalidArgumentError(f"{name} must be non-empty")
    if not np.isin(a, (0, 1)).all():
        raise InvalidArgumentError(f"{name} must contain only 0/1 values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary completion mask; 1 = pixel known/kept, 0 = pixel missing."""

    known: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "known", _as_binary_matrix(self.known, "mask"))

    @property
    def height(self):
        return self.known.shape[0]

    @property
    def width(self):
        return self.known.shape[1]

    @property
    def known_count(self):
        return int(self.known.sum())

    @property
    def known_rate(self):
        return self.known_count / self.known.size

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(b"grille-mask-v1")
        h.update(np.array(self.known.shape, dtype="<u4").tobytes())
        h.update(np.packbits(self.known).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.known, other.known)


@dataclass(frozen=True, eq=False)
class GrilleKey:
    """The shared secret: grille cells plus bit-plane and channel indices.

    ``cells`` is a binary matrix over image coordinates (1 = message
    position, raster order defines bit order).  ``seed`` is kept when the
    key was derived from a 256-bit secret; explicit-cells keys have no
    seed.  ``mask_digest`` ties the key to the completion mask it was
    derived against so decryptors can verify pairing.
    """

    width: int
    height: int
    channel: int
    bpi: int
    cells: np.ndarray
    seed: bytes | None = None
    mask_digest: str | None = None

    def __post_init__(self):
        cells = _as_binary_matrix(self.cells, "cells")
        object.__setattr__(self, "cells", cells)
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("key dimensions must be positive")
        if cells.shape != (self.height, self.width):
            raise InvalidArgumentError(
                f"cells shape {cells.shape} does not match {self.height}x{self.width}"
            )
        if not 1 <= self.bpi <= 8:
            raise InvalidArgumentError(f"bpi must be in 1..8, got {self.bpi}")
        if self.channel < 0:
            raise InvalidArgumentError("channel index must be non-negative")
        if self.seed is not None and len(self.seed) != SEED_BYTES:
            raise InvalidArgumentError(f"seed must be {SEED_BYTES} bytes")

    @property
    def cell_indices(self):
        """Flat raster-order indices of the 1-cells."""
        return np.flatnonzero(self.cells.ravel())

    def digest(self) -> str:
        return hashlib.sha256(serialize_key(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, GrilleKey):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.channel == other.channel
            and self.bpi == other.bpi
            and self.seed == other.seed
            and self.mask_digest == other.mask_digest
            and np.array_equal(self.cells, other.cells)
        )


def capacity(key: GrilleKey) -> int:
    """Number of message bits the grille carries (count of 1-cells)."""
    return int(key.cells.sum())


def generate_completion_mask(
    width: int,
    height: int,
    pattern: str,
    missing_fraction: float,
    rng_seed: int,
) -> Mask:
    """Build a deterministic completion mask with an exact missing count.

    The number of 0-cells is round(missing_fraction * width * height) for
    every pattern.  ``random-scatter`` drops independent cells, ``block``
    drops one contiguous rectangle (plus a partial edge column to hit the
    exact count), ``stripes`` drops whole rows or columns (the last stripe
    may be partial).
    """
    if width <= 0 or height <= 0:
        raise InvalidArgumentError("mask dimensions must be positive")
    if not 0.0 <= missing_fraction <= 1.0:
        raise InvalidArgumentError("missing_fraction must lie in [0, 1]")
    if pattern not in MASK_PATTERNS:
        raise InvalidArgumentError(f"unknown mask pattern {pattern!r}")

    total = width * height
    n_missing = int(round(missing_fraction * total))
    rng = np.random.default_rng(rng_seed)
    known = np.ones((height, width), dtype=np.uint8)

    if n_missing == 0:
        return Mask(known)

    if pattern == "random-scatter":
        drop = rng.permutation(total)[:n_missing]
        known.ravel()[drop] = 0
    elif pattern == "block":
        h = max(1, min(height, int(round(np.sqrt(n_missing * height / width)))))
        w = n_missing // h
        rem = n_missing - h * w
        extra_col = 1 if rem else 0
        if 0 < w and w + extra_col <= width:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w - extra_col + 1))
            known[top : top + h, left : left + w] = 0
            if rem:
                known[top : top + rem, left + w] = 0
        else:
            # rectangle does not fit; use a contiguous raster band instead
            rows, rem = divmod(n_missing, width)
            top = int(rng.integers(0, height - rows - (1 if rem else 0) + 1))
            known[top : top + rows, :] = 0
            if rem:
                known[top + rows, :rem] = 0
    else:  # stripes
        horizontal = bool(rng.integers(0, 2))
        length = width if horizontal else height
        count = width * height // length  # stripes available
        n_full, rem = divmod(n_missing, length)
        order = rng.permutation(count)
        for s in order[:n_full]:
            if horizontal:
                known[s, :] = 0
            else:
                known[:, s] = 0
        if rem:
            s = order[n_full]
            if horizontal:
                known[s, :rem] = 0
            else:
                known[:rem, s] = 0

    return Mask(known)


class _CounterPrg:
    """Counter-mode SHA-256 keystream over a secret, with unbiased randbelow."""

    def __init__(self, seed: bytes, domain: bytes = b""):
        self._key = bytes(seed) + domain
        self._counter = 0
        self._buf = b""

    def _refill(self):
        h = hashlib.sha256()
        h.update(self._key)
        h.update(self._counter.to_bytes(8, "big"))
        self._counter += 1
        self._buf += h.digest()

    def bytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._refill()
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def bits(self, n: int) -> np.ndarray:
        raw = np.frombuffer(self.bytes((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw)[:n]

    def randbelow(self, n: int) -> int:
        # rejection sampling keeps the draw unbiased
        if n <= 0:
            raise ValueError("randbelow needs n > 0")
        nbits = max(1, n.bit_length())
        nbytes = (nbits + 7) // 8
        while True:
            v = int.from_bytes(self.bytes(nbytes), "big") >> (nbytes * 8 - nbits)
            if v < n:
                return v

    def shuffle(self, arr: np.ndarray) -> np.ndarray:
        out = np.array(arr)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def derive_grille(
    seed: bytes,
    mask: Mask,
    density: float,
    bpi: int,
    channel: int = 0,
) -> GrilleKey:
    """Derive a grille as a keyed pseudorandom subset of the known cells.

    The 256-bit seed drives a counter-mode keystream that shuffles the
    known-cell indices; the first floor(density * known_count) of those
    become message cells.  Deterministic: same (seed, mask, density,
    bpi, channel) always yields the same key.
    """
    if len(seed) != SEED_BYTES:
        raise InvalidArgumentError(f"seed must be {SEED_BYTES} bytes")
    if not 0.0 < density <= 1.0:
        raise InvalidArgumentError("density must lie in (0, 1]")
    known_idx = np.flatnonzero(mask.known.ravel())
    if known_idx.size == 0:
        raise EmptyCapacityError("mask has no known cells to write into")
    if not 1 <= bpi <= 8:
        raise InvalidArgumentError(f"bpi must be in 1..8, got {bpi}")

    take = int(np.floor(density * known_idx.size))
    prg = _CounterPrg(seed, domain=b"|derive-grille-v1")
    chosen = prg.shuffle(known_idx)[:take]
    cells = np.zeros(mask.known.size, dtype=np.uint8)
    cells[chosen] = 1
    return GrilleKey(
        width=mask.width,
        height=mask.height,
        channel=channel,
        bpi=bpi,
        cells=cells.reshape(mask.known.shape),
        seed=bytes(seed),
        mask_digest=mask.digest(),
    )


def _cells_to_rle(cells: np.ndarray) -> str:
    # alternating run lengths over the raster-flattened matrix,
    # first run counts zeros (may be 0 when the matrix starts with a 1)
    flat = cells.ravel()
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    runs = [0] if flat[0] == 1 else []
    runs.extend(int(b - a) for a, b in zip(edges[:-1], edges[1:]))
    return ",".join(str(r) for r in runs)


def _rle_to_cells(rle: str, height: int, width: int) -> np.ndarray:
    try:
        runs = [int(tok) for tok in rle.split(",")] if rle else []
    except ValueError as exc:
        raise KeyFormatError(f"bad cell run-length data: {exc}") from exc
    if any(r < 0 for r in runs):
        raise KeyFormatError("cell run lengths must be non-negative")
    if sum(runs) != height * width:
        raise KeyFormatError(
            f"cell runs cover {sum(runs)} cells, expected {height * width}"
        )
    flat = np.zeros(height * width, dtype=np.uint8)
    pos = 0
    value = 0
    for r in runs:
        if value:
            flat[pos : pos + r] = 1
        pos += r
        value ^= 1
    return flat.reshape(height, width)


def serialize_key(key: GrilleKey) -> bytes:
    """Encode a key as the versioned JSON key-file record."""
    record = {
        "version": KEY_FORMAT_VERSION,
        "width": key.width,
        "height": key.height,
        "channel": key.channel,
        "bpi": key.bpi,
        "mode": "seed" if key.seed is not None else "explicit",
        "cells": _cells_to_rle(key.cells),
        "mask_digest": key.mask_digest,
    }
    if key.seed is not None:
        record["seed"] = key.seed.hex()
    return (json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n").encode()


def parse_key(data: bytes) -> GrilleKey:
    """Decode and validate a key file; raises KeyFormatError on any defect."""
    try:
        record = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise KeyFormatError(f"key file is not UTF-8: {exc}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise KeyFormatError(f"key file is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(record, dict):
        raise KeyFormatError("key file must hold a JSON object")
    if record.get("version") != KEY_FORMAT_VERSION:
        raise KeyFormatError(f"unsupported key format version {record.get('version')!r}")

    required = {"width", "height", "channel", "bpi", "mode", "cells"}
    missing = required - record.keys()
    if missing:
        raise KeyFormatError(f"key file missing fields: {sorted(missing)}")
    for name in ("width", "height", "channel", "bpi"):
        if not isinstance(record[name], int):
            raise KeyFormatError(f"field {name!r} must be an integer")

    mode = record["mode"]
    if mode not in ("seed", "explicit"):
        raise KeyFormatError(f"unknown key mode {record['mode']!r}")
    seed = None
    if mode == "seed":
        try:
            seed = bytes.fromhex(record["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise KeyFormatError(f"bad or missing seed hex: {exc}") from exc

    cells = _rle_to_cells(record["cells"], record["height"], record["width"])
    try:
        return GrilleKey(
            width=record["width"],
            height=record["height"],
            channel=record["channel"],
            bpi=record["bpi"],
            cells=cells,
            seed=seed,
            mask_digest=record.get("mask_digest"),
        )
    except InvalidArgumentError as exc:
        raise KeyFormatError(f"key fails validation: {exc}") from exc
