"""Quantization, zigzag mapping, Exp-Golomb coding and the EG rate surrogate.

Conventions:

* ``quantize`` floors ``2**n * x``; backward passes treat it as identity.
* The zigzag map sends 0 -> 0, q > 0 -> 2q - 1, q < 0 -> -2q.
* A k-th order EG codeword for ``v`` is ``v + 2**k`` written in
  ``2*floor(log2(v + 2**k)) - k + 1`` bits, i.e. preceded by
  ``floor(log2(v + 2**k)) - k`` zeros.
"""

from __future__ import annotations

import heapq
import math
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantSpec",
    "QuantTensor",
    "EncodedBlob",
    "CorruptStreamError",
    "QuantOverflowError",
    "quantize",
    "dequantize",
    "zigzag_map",
    "zigzag_unmap",
    "eg_code_length",
    "eg_encode",
    "eg_decode",
    "rate",
    "rate_grad",
    "huffman_code_lengths",
    "huffman_avg_length",
    "fl_bits",
    "empirical_entropy",
]

MAGIC = b"EGB1"
_QMAX = 2**31 - 2


class CorruptStreamError(ValueError):
    pass


class QuantOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class QuantSpec:
    n: int = 8
    k: int = 0

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and 0 <= self.n <= 24):
            raise ValueError(f"precision n must be an integer in [0, 24], got {self.n!r}")
        if not (isinstance(self.k, (int, np.integer)) and 0 <= self.k <= 15):
            raise ValueError(f"EG order k must be an integer in [0, 15], got {self.k!r}")

    @property
    def step(self) -> float:
        return 2.0 ** -self.n


@dataclass(frozen=True)
class QuantTensor:
    values: np.ndarray
    spec: QuantSpec

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        return dequantize(self.values, self.spec)


@dataclass
class EncodedBlob:
    tensor_id: int
    element_count: int
    n: int
    k: int
    dims: tuple
    payload: bytes
    bit_length: int

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.dims and math.prod(self.dims) != self.element_count:
            raise ValueError(f"dims {self.dims} do not hold {self.element_count} elements")
        if len(self.payload) != (self.bit_length + 7) // 8:
            raise CorruptStreamError(
                f"payload holds {len(self.payload)} bytes, bit_length {self.bit_length} needs "
                f"{(self.bit_length + 7) // 8}"
            )

    def to_bytes(self) -> bytes:
        head = struct.pack(
            f"<4sIIBBB{len(self.dims)}IQ",
            MAGIC,
            self.tensor_id,
            self.element_count,
            self.n,
            self.k,
            len(self.dims),
            *self.dims,
            self.bit_length,
        )
        return head + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EncodedBlob":
        if len(buf) < 15 or buf[:4] != MAGIC:
            raise CorruptStreamError("missing EGB1 magic")
        tensor_id, count, n, k, rank = struct.unpack_from("<IIBBB", buf, 4)
        off = 15
        if len(buf) < off + 4 * rank + 8:
            raise CorruptStreamError("truncated header")
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        (bit_length,) = struct.unpack_from("<Q", buf, off)
        off += 8
        payload = bytes(buf[off:])
        return cls(tensor_id, count, n, k, dims, payload, bit_length)


def quantize(x, spec: QuantSpec) -> QuantTensor:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("quantize requires finite input")
    scaled = np.floor(x * 2.0**spec.n)
    if scaled.size and np.max(np.abs(scaled)) > _QMAX:
        raise QuantOverflowError(f"|2^{spec.n} x| exceeds {_QMAX}")
    return QuantTensor(scaled.astype(np.int64), spec)


def dequantize(values, spec: QuantSpec) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * 2.0**-spec.n


def zigzag_map(q):
    q = np.asarray(q, dtype=np.int64)
    out = np.where(q > 0, 2 * q - 1, -2 * q)
    return int(out) if out.ndim == 0 else out


def zigzag_unmap(v):
    v = np.asarray(v, dtype=np.int64)
    if np.any(v < 0):
        raise ValueError("zigzag_unmap requires nonnegative input")
    out = np.where(v % 2 == 1, (v + 1) // 2, -(v // 2))
    return int(out) if out.ndim == 0 else out


def _floor_log2(m: np.ndarray) -> np.ndarray:
    # frexp is exact for integers below 2**53
    _, e = np.frexp(m.astype(np.float64))
    return e.astype(np.int64) - 1


def eg_code_length(v, k: int):
    v = np.asarray(v, dtype=np.int64)
    if np.any(v < 0):
        raise ValueError("eg_code_length requires v >= 0")
    out = 2 * _floor_log2(v + (1 << k)) - k + 1
    return int(out) if out.ndim == 0 else out


def eg_encode(values, k: int, tensor_id: int = 0, n: int = 0) -> EncodedBlob:
    """Encode nonnegative integers as concatenated k-th order EG codewords."""
    arr = np.asarray(values, dtype=np.int64)
    dims = arr.shape
    flat = arr.ravel()
    if np.any(flat < 0):
        raise ValueError("eg_encode requires nonnegative values")
    if flat.size == 0:
        return EncodedBlob(tensor_id, 0, n, k, dims, b"", 0)
    m = flat + (1 << k)
    lengths = 2 * _floor_log2(m) - k + 1
    ends = np.cumsum(lengths)
    total = int(ends[-1])
    starts = ends - lengths
    bits = np.zeros(total, dtype=np.uint8)
    # bit b (from the msb) of each codeword of length L is (m >> (L-1-b)) & 1;
    # the leading zeros come for free since m < 2**(L - u)
    for b in range(int(lengths.max())):
        sel = lengths > b
        shift = lengths[sel] - 1 - b
        bits[starts[sel] + b] = (m[sel] >> shift) & 1
    payload = np.packbits(bits).tobytes()
    return EncodedBlob(tensor_id, int(flat.size), n, k, dims, payload, total)


def eg_decode(blob: EncodedBlob) -> np.ndarray:
    """Decode a blob back into its integer tensor (shape ``blob.dims``)."""
    k = blob.k
    count = blob.element_count
    nbytes = (blob.bit_length + 7) // 8
    if len(blob.payload) < nbytes:
        raise CorruptStreamError("payload shorter than bit_length")
    bits = np.unpackbits(np.frombuffer(blob.payload, dtype=np.uint8))[: blob.bit_length]
    s = (bits + 48).tobytes().decode("ascii")
    total = blob.bit_length
    out = np.empty(count, dtype=np.int64)
    pos = 0
    offset = 1 << k
    for i in range(count):
        q = s.find("1", pos)
        if q < 0:
            raise CorruptStreamError(f"stream ended inside symbol {i} of {count}")
        end = q + (q - pos) + k + 1
        if end > total:
            raise CorruptStreamError(f"symbol {i} of {count} truncated")
        out[i] = int(s[q:end], 2) - offset
        pos = end
    if pos != total:
        raise CorruptStreamError(f"{total - pos} trailing bits after {count} symbols")
    return out.reshape(blob.dims) if blob.dims else out


def rate(x, spec: QuantSpec) -> float:
    """Mean EG code length (bits/element) of the quantized, zigzag-mapped tensor."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("rate of an empty tensor is undefined")
    v = zigzag_map(quantize(x, spec).values)
    return float(np.mean(eg_code_length(v, spec.k)))


def rate_grad(x, spec: QuantSpec, eps: float = 1e-8) -> np.ndarray:
    """Surrogate gradient of the EG rate with respect to each element.

    ``2**(n+2) / (n ln 2) * sign(x) / (Map(Quant(|x|)) + eps)``, and exactly 0
    where that mapped magnitude is 0. The level is taken from ``|x|`` so the
    gradient is odd in ``x``; for x >= 0 it coincides with ``Map(Quant(x))``.
    """
    if spec.n == 0:
        raise ValueError("rate_grad is undefined for precision n = 0")
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rate_grad of an empty tensor is undefined")
    mapped = zigzag_map(quantize(np.abs(x), spec).values).astype(np.float64)
    scale = 2.0 ** (spec.n + 2) / (spec.n * math.log(2))
    out = np.zeros_like(x)
    nz = mapped != 0
    out[nz] = scale * np.sign(x[nz]) / (mapped[nz] + eps)
    return out


def huffman_code_lengths(values) -> dict:
    """Code length per symbol for a canonical Huffman code of the histogram.

    Among equal weights the subtree holding the larger symbols is merged first,
    so a lower symbol never gets a longer code than a tied higher one. A
    single-symbol alphabet gets a 1-bit code.
    """
    counts = Counter(np.asarray(values).ravel().tolist())
    if not counts:
        raise ValueError("huffman code of an empty tensor is undefined")
    if len(counts) == 1:
        return {next(iter(counts)): 1}
    heap = [(c, -s, [s]) for s, c in sorted(counts.items())]
    heapq.heapify(heap)
    depth = dict.fromkeys(counts, 0)
    while len(heap) > 1:
        c1, s1, m1 = heapq.heappop(heap)
        c2, s2, m2 = heapq.heappop(heap)
        for s in m1:
            depth[s] += 1
        for s in m2:
            depth[s] += 1
        heapq.heappush(heap, (c1 + c2, min(s1, s2), m1 + m2))  # keys are -max(symbol)
    return depth


def huffman_avg_length(values) -> float:
    arr = np.asarray(values).ravel()
    lengths = huffman_code_lengths(arr)
    counts = Counter(arr.tolist())
    return sum(counts[s] * lengths[s] for s in counts) / arr.size


def fl_bits(values) -> float:
    """Width of the smallest fixed-length unsigned code for the mapped levels (>= 1)."""
    arr = np.asarray(values, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("fl_bits of an empty tensor is undefined")
    vmax = int(np.max(zigzag_map(arr)))
    return float(max(1, vmax.bit_length()))


def empirical_entropy(values) -> float:
    """Shannon entropy (bits) of the symbol histogram."""
    _, counts = np.unique(np.asarray(values).ravel(), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0
