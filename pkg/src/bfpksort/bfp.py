"""Block floating point codec with a shared power-of-two exponent per block.

A block of ``n`` values is stored as one signed ``b``-bit exponent ``e`` plus
``n`` signed integer mantissas of ``p`` bits each; element ``i`` decodes to
``2**e * M[i]``.  Mantissas use the symmetric range ``[-(2**(p-1)-1),
2**(p-1)-1]``; the most negative two's-complement code is never produced by
the encoder.  Casting picks the smallest exponent under which the
largest-magnitude element still rounds into the mantissa range
(round-half-to-even), so at least one mantissa always lands in the top half
of the range unless the block is all zeros.

The named presets follow industry convention: BFP12 packs 4-bit mantissas
and BFP16 packs 8-bit mantissas, both with an 8-bit shared exponent, at
block sizes 32/64/128.  Storage cost is ``p + b/n`` bits per element, e.g.
4.25 for BFP12_32 versus 8.25 for BFP16_32.

Everything here is a pure function over immutable inputs; no shared state.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .errors import CorruptBuffer, ExponentOverflow, InvalidValue, ShapeMismatch

__all__ = [
    "BfpFormat",
    "BfpBlock",
    "BfpTensor",
    "BFP12_32",
    "BFP12_64",
    "BFP12_128",
    "BFP16_32",
    "BFP16_64",
    "BFP16_128",
    "format_from_name",
    "bits_per_element",
    "quantize_block",
    "quantize_tensor",
    "dequantize",
    "bfp_dot",
    "pack",
    "unpack",
]


@dataclass(frozen=True)
class BfpFormat:
    """Block format parameters: mantissa bits, block size, exponent bits."""

    mantissa_bits: int
    block_size: int
    exponent_bits: int = 8

    def __post_init__(self) -> None:
        if not 2 <= self.mantissa_bits <= 16:
            raise ValueError(f"mantissa_bits must be in [2, 16], got {self.mantissa_bits}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        # exponents are applied with float64 ldexp; cap the width so scales stay representable
        if not 2 <= self.exponent_bits <= 11:
            raise ValueError(f"exponent_bits must be in [2, 11], got {self.exponent_bits}")

    @property
    def mantissa_max(self) -> int:
        return (1 << (self.mantissa_bits - 1)) - 1

    @property
    def exponent_min(self) -> int:
        return -(1 << (self.exponent_bits - 1))

    @property
    def exponent_max(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def bits_per_block(self) -> int:
        return self.exponent_bits + self.block_size * self.mantissa_bits

    @property
    def bytes_per_block(self) -> int:
        """Packed size of one block, rounded up to a whole byte."""
        return (self.bits_per_block + 7) // 8

    @property
    def name(self) -> str:
        total = self.mantissa_bits + self.exponent_bits
        return f"BFP{total}_{self.block_size}"


def BFP12(block_size: int) -> BfpFormat:
    """4-bit mantissas, 8-bit shared exponent."""
    return BfpFormat(mantissa_bits=4, block_size=block_size)


def BFP16(block_size: int) -> BfpFormat:
    """8-bit mantissas, 8-bit shared exponent."""
    return BfpFormat(mantissa_bits=8, block_size=block_size)


BFP12_32 = BFP12(32)
BFP12_64 = BFP12(64)
BFP12_128 = BFP12(128)
BFP16_32 = BFP16(32)
BFP16_64 = BFP16(64)
BFP16_128 = BFP16(128)

_PRESET_MANTISSA_BITS = {"BFP12": 4, "BFP16": 8}


def format_from_name(name: str) -> BfpFormat:
    """Resolve a preset name like ``"BFP12_64"`` to a :class:`BfpFormat`."""
    try:
        family, _, size = name.partition("_")
        return BfpFormat(mantissa_bits=_PRESET_MANTISSA_BITS[family], block_size=int(size))
    except (KeyError, ValueError):
        raise ValueError(f"unknown format name {name!r}") from None


def bits_per_element(fmt: BfpFormat) -> Fraction:
    """Exact storage cost per element: ``p + b/n``."""
    return Fraction(fmt.mantissa_bits) + Fraction(fmt.exponent_bits, fmt.block_size)


@dataclass(frozen=True)
class BfpBlock:
    """One encoded block: shared exponent plus integer mantissas."""

    exponent: int
    mantissas: np.ndarray  # int32, length n

    def decode(self) -> np.ndarray:
        return np.ldexp(self.mantissas.astype(np.float64), self.exponent)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BfpBlock):
            return NotImplemented
        return self.exponent == other.exponent and np.array_equal(self.mantissas, other.mantissas)


@dataclass(frozen=True)
class BfpTensor:
    """A blocked tensor: per-block exponents and mantissas plus logical shape.

    Blocks run along ``blocking_axis``; internally that axis is moved last, so
    ``exponents`` has shape ``outer_shape + (nblocks,)`` and ``mantissas`` has
    shape ``outer_shape + (nblocks, n)``.  The final block of each blocked row
    is zero-padded with ``padding_count`` elements, which decode to exactly 0
    and are excluded from error metrics.
    """

    fmt: BfpFormat
    logical_shape: tuple[int, ...]
    blocking_axis: int
    exponents: np.ndarray  # int32
    mantissas: np.ndarray  # int32
    padding_count: int

    def __post_init__(self) -> None:
        n = self.fmt.block_size
        axis_len = self.logical_shape[self.blocking_axis] if self.logical_shape else 0
        nblocks = -(-axis_len // n) if axis_len else 0
        outer = tuple(
            d for i, d in enumerate(self.logical_shape) if i != self.blocking_axis
        )
        if self.exponents.shape != outer + (nblocks,):
            raise ShapeMismatch(
                f"exponent array shape {self.exponents.shape} does not match "
                f"logical shape {self.logical_shape} blocked along axis {self.blocking_axis}"
            )
        if self.mantissas.shape != self.exponents.shape + (n,):
            raise ShapeMismatch(
                f"mantissa array shape {self.mantissas.shape} inconsistent with "
                f"{self.exponents.shape} blocks of {n}"
            )
        if self.padding_count != nblocks * n - axis_len:
            raise ShapeMismatch(
                f"padding_count {self.padding_count} inconsistent with axis length "
                f"{axis_len} and block size {n}"
            )

    @property
    def num_blocks(self) -> int:
        return int(self.exponents.size)

    def block(self, index: int) -> BfpBlock:
        """The ``index``-th block in C order over the exponent array."""
        e = int(self.exponents.reshape(-1)[index])
        m = self.mantissas.reshape(-1, self.fmt.block_size)[index]
        return BfpBlock(exponent=e, mantissas=m.copy())

    def blocks(self) -> Iterator[BfpBlock]:
        for i in range(self.num_blocks):
            yield self.block(i)

    @property
    def packed_nbytes(self) -> int:
        return self.num_blocks * self.fmt.bytes_per_block


def _minimal_exponents(max_abs: np.ndarray, fmt: BfpFormat) -> np.ndarray:
    """Smallest e per block with round_half_even(max_abs / 2**e) <= mantissa_max.

    For max_abs = f * 2**k (f in [0.5, 1)), e = k - (p-1) scales the maximum
    into [2**(p-2), 2**(p-1)); only rounding up to 2**(p-1) can overflow, in
    which case e is bumped by one.  Any smaller e puts the scaled maximum at
    or above 2**(p-1), which always rounds outside the range.
    """
    _, k = np.frexp(max_abs)
    e = k.astype(np.int64) - (fmt.mantissa_bits - 1)
    overflow = np.rint(np.ldexp(max_abs, -e)) > fmt.mantissa_max
    return e + overflow


def _encode_blocks(values: np.ndarray, fmt: BfpFormat) -> tuple[np.ndarray, np.ndarray]:
    """Encode ``values`` of shape (..., n) into (exponents, mantissas)."""
    max_abs = np.abs(values).max(axis=-1)
    zero = max_abs == 0.0
    e = _minimal_exponents(max_abs, fmt)
    e[zero] = fmt.exponent_min
    if np.any(e > fmt.exponent_max):
        where = np.argwhere(e > fmt.exponent_max)[0]
        raise ExponentOverflow(
            f"block {tuple(where)}: magnitude {max_abs[tuple(where)]:g} needs exponent "
            f"{e[tuple(where)]}, above the {fmt.exponent_bits}-bit maximum {fmt.exponent_max}"
        )
    np.maximum(e, fmt.exponent_min, out=e)  # tiny blocks underflow toward zero mantissas
    mant = np.rint(np.ldexp(values, -e[..., None]))
    np.clip(mant, -fmt.mantissa_max, fmt.mantissa_max, out=mant)
    return e.astype(np.int32), mant.astype(np.int32)


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise InvalidValue(f"non-finite input at index {tuple(bad)}")


def quantize_block(values, fmt: BfpFormat) -> BfpBlock:
    """Cast up to ``n`` real values into one block; short input is zero-padded."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size > fmt.block_size:
        raise ShapeMismatch(
            f"expected a vector of at most {fmt.block_size} values, got shape {v.shape}"
        )
    _check_finite(v)
    if v.size < fmt.block_size:
        v = np.pad(v, (0, fmt.block_size - v.size))
    e, mant = _encode_blocks(v[None, :], fmt)
    return BfpBlock(exponent=int(e[0]), mantissas=mant[0])


def quantize_tensor(x, fmt: BfpFormat, blocking_axis: int = -1) -> BfpTensor:
    """Cast a real tensor into blocks along ``blocking_axis``.

    Each contiguous run of ``n`` elements along the axis becomes one block;
    a ragged tail is zero-padded.  Blocks never span rows.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not -arr.ndim <= blocking_axis < arr.ndim:
        raise ShapeMismatch(f"axis {blocking_axis} out of range for shape {arr.shape}")
    axis = blocking_axis % arr.ndim
    _check_finite(arr)

    n = fmt.block_size
    moved = np.moveaxis(arr, axis, -1)
    axis_len = moved.shape[-1]
    nblocks = -(-axis_len // n)
    padding = nblocks * n - axis_len
    if padding:
        pad_width = [(0, 0)] * (moved.ndim - 1) + [(0, padding)]
        moved = np.pad(moved, pad_width)
    grouped = moved.reshape(moved.shape[:-1] + (nblocks, n))
    e, mant = _encode_blocks(grouped, fmt)
    return BfpTensor(
        fmt=fmt,
        logical_shape=arr.shape,
        blocking_axis=axis,
        exponents=e,
        mantissas=mant,
        padding_count=padding,
    )


def dequantize(t: BfpTensor) -> np.ndarray:
    """Decode to float64: element i of block k is ``2**e_k * M_{k,i}``."""
    vals = np.ldexp(t.mantissas.astype(np.float64), t.exponents[..., None])
    flat = vals.reshape(vals.shape[:-2] + (vals.shape[-2] * vals.shape[-1],))
    axis_len = t.logical_shape[t.blocking_axis]
    return np.moveaxis(flat[..., :axis_len], -1, t.blocking_axis)


def bfp_dot(a: BfpTensor, k: BfpTensor) -> float:
    """Inner product of two blocked vectors using integer mantissa arithmetic.

    Within a block the mantissa products accumulate exactly in int64; each
    block contributes ``2**(e_a + e_k) * sum_i M_a[i] * M_k[i]``.
    """
    if len(a.logical_shape) != 1 or len(k.logical_shape) != 1:
        raise ShapeMismatch("bfp_dot operates on 1-D blocked vectors")
    if a.logical_shape != k.logical_shape or a.fmt.block_size != k.fmt.block_size:
        raise ShapeMismatch(
            f"operands disagree: shape {a.logical_shape} / blocks of {a.fmt.block_size} "
            f"vs shape {k.logical_shape} / blocks of {k.fmt.block_size}"
        )
    prod = (a.mantissas.astype(np.int64) * k.mantissas.astype(np.int64)).sum(axis=-1)
    scale = a.exponents.astype(np.int64) + k.exponents.astype(np.int64)
    return float(np.sum(np.ldexp(prod.astype(np.float64), scale)))


# ---------------------------------------------------------------------------
# Bit-exact packing
#
# Per block: the b-bit exponent (two's complement) occupies the lowest bits,
# followed by n p-bit two's-complement mantissas, filled least significant
# bit first; each block is padded up to a byte boundary and blocks are
# concatenated.  Byte order within a block is little-endian.
# ---------------------------------------------------------------------------


def pack(t: BfpTensor) -> bytes:
    """Serialize the blocks of ``t`` to the packed wire layout."""
    fmt = t.fmt
    emask = (1 << fmt.exponent_bits) - 1
    pmask = (1 << fmt.mantissa_bits) - 1
    p = fmt.mantissa_bits
    nbytes = fmt.bytes_per_block
    out = bytearray()
    exps = t.exponents.reshape(-1).tolist()
    rows = t.mantissas.reshape(-1, fmt.block_size).tolist()
    for e, row in zip(exps, rows):
        word = e & emask
        shift = fmt.exponent_bits
        for m in row:
            word |= (m & pmask) << shift
            shift += p
        out += word.to_bytes(nbytes, "little")
    return bytes(out)


def _sign_extend(field: int, bits: int) -> int:
    return field - (1 << bits) if field & (1 << (bits - 1)) else field


def unpack(buf: bytes, fmt: BfpFormat, shape, blocking_axis: int = -1) -> BfpTensor:
    """Rebuild a :class:`BfpTensor` from its packed bytes.

    Inverse of :func:`pack` given the same format, logical shape and axis.
    """
    shape = tuple(int(d) for d in shape)
    ndim = len(shape)
    if ndim == 0 or not -ndim <= blocking_axis < ndim:
        raise ShapeMismatch(f"axis {blocking_axis} out of range for shape {shape}")
    axis = blocking_axis % ndim

    n = fmt.block_size
    axis_len = shape[axis]
    nblocks_axis = -(-axis_len // n)
    outer = tuple(d for i, d in enumerate(shape) if i != axis)
    count = int(np.prod(outer, dtype=np.int64)) * nblocks_axis if nblocks_axis else 0
    nbytes = fmt.bytes_per_block
    if len(buf) != count * nbytes:
        raise CorruptBuffer(
            f"expected {count * nbytes} bytes for {count} blocks of {nbytes}, got {len(buf)}"
        )

    emask = (1 << fmt.exponent_bits) - 1
    pmask = (1 << fmt.mantissa_bits) - 1
    p = fmt.mantissa_bits
    exps = np.empty(count, dtype=np.int32)
    mants = np.empty((count, n), dtype=np.int32)
    for i in range(count):
        word = int.from_bytes(buf[i * nbytes : (i + 1) * nbytes], "little")
        exps[i] = _sign_extend(word & emask, fmt.exponent_bits)
        word >>= fmt.exponent_bits
        for j in range(n):
            mants[i, j] = _sign_extend(word & pmask, p)
            word >>= p

    padding = nblocks_axis * n - axis_len
    if padding:
        tail = mants.reshape(outer + (nblocks_axis, n))[..., -1, n - padding :]
        if np.any(tail != 0):
            raise CorruptBuffer("padding mantissas must decode to zero")
    return BfpTensor(
        fmt=fmt,
        logical_shape=shape,
        blocking_axis=axis,
        exponents=exps.reshape(outer + (nblocks_axis,)),
        mantissas=mants.reshape(outer + (nblocks_axis, n)),
        padding_count=padding,
    )
