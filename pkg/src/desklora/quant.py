"""Blockwise 4-bit NormalFloat quantization with double-quantized scales,
plus signed 8-bit dynamic quantization for optimizer moments.

The 4-bit codebook places its levels at standard-normal quantiles: 8 on the
negative side, an exact zero, and 7 on the positive side, rescaled so the
extreme levels are exactly +-1. The quantile probabilities run from
OFFSET = 1 - (1/32 + 1/30)/2 down to 0.5 on each side, which avoids a
duplicated zero level. The constants below were produced once from a normal
inverse-CDF oracle and are frozen; a golden test re-derives them.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

NF4_OFFSET = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0)

NF4_VALUES = np.array(
    [
        -1.0,
        -0.7229566441594734,
        -0.5626168879699849,
        -0.44070973186421625,
        -0.3379151367131279,
        -0.2461122513474594,
        -0.1609301443802907,
        -0.07958031495840909,
        0.0,
        0.09104997598578049,
        0.1847734028004556,
        0.28444130892108205,
        0.3949174259199071,
        0.5250729594465005,
        0.696192805632343,
        1.0,
    ],
    dtype=np.float64,
)

NF4_ZERO_CODE = 8

DEFAULT_BLOCK_SIZE = 64
DEFAULT_DQ_GROUP = 256
STATE8_BLOCK_SIZE = 256


@dataclass(frozen=True)
class Nf4Codebook:
    """16 quantization levels, strictly increasing, one exact zero."""

    values: np.ndarray

    @property
    def zero_code(self) -> int:
        return int(np.flatnonzero(self.values == 0.0)[0])


def build_nf4_codebook() -> Nf4Codebook:
    return Nf4Codebook(values=NF4_VALUES.copy())


def _dynamic8_values() -> np.ndarray:
    # 7 "decades" of linear-fraction midpoints, denser toward zero; rescaled
    # so the top level is exactly 1, mirrored, with an exact zero: 255 levels.
    pos = []
    for i in range(7):
        bounds = np.linspace(0.1, 1.0, 2**i + 1)
        mids = (bounds[:-1] + bounds[1:]) / 2.0
        pos.extend((10.0 ** (i - 6)) * mids)
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    pos /= pos[-1]
    return np.concatenate([-pos[::-1], [0.0], pos])


DYNAMIC8_VALUES = _dynamic8_values()
DYNAMIC8_ZERO_CODE = 127


def max_half_gap(codebook: np.ndarray) -> float:
    """Half the largest adjacent-level distance: the worst-case unit error."""
    return float(np.diff(np.sort(codebook)).max() / 2.0)


def _nearest_codes(normalized: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest level per element; ties at midpoints resolve to the lower code."""
    mids = (codebook[:-1] + codebook[1:]) / 2.0
    return np.searchsorted(mids, normalized, side="left")


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x.reshape(-1)))[0])
        raise ValueError(f"non-finite input at flat index {bad}")


# ---------------------------------------------------------------------------
# 4-bit weights
# ---------------------------------------------------------------------------


@dataclass
class DoubleQuantState:
    """8-bit affine re-quantization of the per-block scales."""

    absmax_codes: np.ndarray  # uint8, one per block
    group_size: int
    group_scale: np.ndarray  # float32, one per group
    group_offset: np.ndarray  # float32, one per group


@dataclass
class QuantizedTensor:
    shape: tuple
    codes: np.ndarray  # uint8, two 4-bit codes per byte
    absmax: np.ndarray | None  # float32 per block; None when double-quantized
    dq: DoubleQuantState | None
    block_size: int

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def n_blocks(self) -> int:
        return (self.numel + self.block_size - 1) // self.block_size


def _pack4(codes: np.ndarray) -> np.ndarray:
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, dtype=codes.dtype)])
    pairs = codes.reshape(-1, 2).astype(np.uint8)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8)


def _unpack4(packed: np.ndarray, numel: int) -> np.ndarray:
    lo = packed & 0x0F
    hi = packed >> 4
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = lo
    out[1::2] = hi
    return out[:numel]


def _quantize_absmax(absmax: np.ndarray, group_size: int) -> DoubleQuantState:
    n = absmax.size
    n_groups = (n + group_size - 1) // group_size
    codes = np.empty(n, dtype=np.uint8)
    scales = np.empty(n_groups, dtype=np.float32)
    offsets = np.empty(n_groups, dtype=np.float32)
    for gi in range(n_groups):
        chunk = absmax[gi * group_size : (gi + 1) * group_size]
        lo = float(chunk.min())
        hi = float(chunk.max())
        step = (hi - lo) / 255.0
        offsets[gi] = lo
        scales[gi] = step
        if step == 0.0:
            codes[gi * group_size : (gi + 1) * group_size] = 0
        else:
            q = np.rint((chunk - lo) / step)
            codes[gi * group_size : (gi + 1) * group_size] = np.clip(q, 0, 255).astype(np.uint8)
    return DoubleQuantState(
        absmax_codes=codes, group_size=group_size, group_scale=scales, group_offset=offsets
    )


def _reconstruct_absmax(dq: DoubleQuantState) -> np.ndarray:
    n = dq.absmax_codes.size
    out = np.empty(n, dtype=np.float32)
    for gi in range((n + dq.group_size - 1) // dq.group_size):
        sl = slice(gi * dq.group_size, (gi + 1) * dq.group_size)
        out[sl] = dq.group_offset[gi] + dq.absmax_codes[sl].astype(np.float32) * dq.group_scale[gi]
    return out


def quantize(
    x: np.ndarray,
    block_size: int = DEFAULT_BLOCK_SIZE,
    double_quant: bool = False,
    dq_group: int = DEFAULT_DQ_GROUP,
) -> QuantizedTensor:
    """Blockwise absmax-scaled nearest-level 4-bit quantization."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    shape = tuple(x.shape)
    flat = x.reshape(-1)
    numel = flat.size
    n_blocks = (numel + block_size - 1) // block_size

    padded = np.zeros(n_blocks * block_size, dtype=np.float64)
    padded[:numel] = flat
    blocks = padded.reshape(n_blocks, block_size)
    absmax = np.abs(blocks).max(axis=1)

    safe = np.where(absmax == 0.0, 1.0, absmax)
    normalized = blocks / safe[:, None]
    codes = _nearest_codes(normalized, NF4_VALUES).astype(np.uint8)
    codes[absmax == 0.0, :] = NF4_ZERO_CODE

    flat_codes = codes.reshape(-1)[:numel]
    packed = _pack4(flat_codes)
    absmax32 = absmax.astype(np.float32)

    if double_quant:
        dq = _quantize_absmax(absmax32, dq_group)
        return QuantizedTensor(shape, packed, None, dq, block_size)
    return QuantizedTensor(shape, packed, absmax32, None, block_size)


def reconstructed_absmax(q: QuantizedTensor) -> np.ndarray:
    if q.dq is not None:
        return _reconstruct_absmax(q.dq)
    return q.absmax


def dequantize(q: QuantizedTensor, out_dtype=np.float32) -> np.ndarray:
    codes = _unpack4(q.codes, q.numel)
    values = NF4_VALUES[codes]
    absmax = reconstructed_absmax(q).astype(np.float64)
    scales = np.repeat(absmax, q.block_size)[: q.numel]
    return (values * scales).astype(out_dtype).reshape(q.shape)


def bits_per_param(q: QuantizedTensor) -> float:
    """Storage cost per element, counting codes plus scale metadata."""
    numel = q.numel
    n_blocks = q.n_blocks
    if q.dq is None:
        return (4.0 * numel + 32.0 * n_blocks) / numel
    n_groups = (n_blocks + q.dq.group_size - 1) // q.dq.group_size
    return (4.0 * numel + 8.0 * n_blocks + 64.0 * n_groups) / numel


def quantized_nbytes(q: QuantizedTensor) -> int:
    """Payload bytes: packed codes plus scale data (headers excluded)."""
    n = int(q.codes.size)
    if q.dq is None:
        return n + 4 * int(q.absmax.size)
    return n + int(q.dq.absmax_codes.size) + 8 * int(q.dq.group_scale.size)


# ---------------------------------------------------------------------------
# 8-bit optimizer state
# ---------------------------------------------------------------------------


@dataclass
class Quantized8bitState:
    shape: tuple
    codes: np.ndarray  # uint8 indices into DYNAMIC8_VALUES
    absmax: np.ndarray  # float32 per block
    block_size: int

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def nbytes(self) -> int:
        return int(self.codes.size) + 4 * int(self.absmax.size)


def quantize_state8(x: np.ndarray, block_size: int = STATE8_BLOCK_SIZE) -> Quantized8bitState:
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    shape = tuple(x.shape)
    flat = x.reshape(-1)
    numel = flat.size
    n_blocks = (numel + block_size - 1) // block_size

    padded = np.zeros(n_blocks * block_size, dtype=np.float64)
    padded[:numel] = flat
    blocks = padded.reshape(n_blocks, block_size)
    absmax = np.abs(blocks).max(axis=1)
    safe = np.where(absmax == 0.0, 1.0, absmax)
    codes = _nearest_codes(blocks / safe[:, None], DYNAMIC8_VALUES).astype(np.uint8)
    codes[absmax == 0.0, :] = DYNAMIC8_ZERO_CODE
    return Quantized8bitState(shape, codes.reshape(-1)[:numel], absmax.astype(np.float32), block_size)


def dequantize_state8(q: Quantized8bitState, out_dtype=np.float32) -> np.ndarray:
    values = DYNAMIC8_VALUES[q.codes]
    scales = np.repeat(q.absmax.astype(np.float64), q.block_size)[: q.numel]
    return (values * scales).astype(out_dtype).reshape(q.shape)


# ---------------------------------------------------------------------------
# serialization (little-endian throughout)
# ---------------------------------------------------------------------------

QNF4_MAGIC = b"QNF4"
QNF4_VERSION = 1


def dumps_qnf4(q: QuantizedTensor) -> bytes:
    parts = [QNF4_MAGIC, struct.pack("<HIB", QNF4_VERSION, q.block_size, 1 if q.dq else 0)]
    parts.append(struct.pack("<I", len(q.shape)))
    parts.append(struct.pack(f"<{len(q.shape)}I", *q.shape))
    parts.append(q.codes.tobytes())
    if q.dq is not None:
        dq = q.dq
        parts.append(struct.pack("<II", dq.group_size, dq.group_scale.size))
        parts.append(dq.group_scale.astype("<f4").tobytes())
        parts.append(dq.group_offset.astype("<f4").tobytes())
        parts.append(dq.absmax_codes.tobytes())
    else:
        parts.append(q.absmax.astype("<f4").tobytes())
    return b"".join(parts)


def loads_qnf4(data: bytes) -> QuantizedTensor:
    if data[:4] != QNF4_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {QNF4_MAGIC!r}")
    off = 4
    version, block_size, dq_flag = struct.unpack_from("<HIB", data, off)
    off += struct.calcsize("<HIB")
    if version != QNF4_VERSION:
        raise FormatError(f"unsupported QNF4 version {version}")
    (rank,) = struct.unpack_from("<I", data, off)
    off += 4
    shape = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    numel = int(np.prod(shape)) if shape else 1
    n_code_bytes = (numel + 1) // 2
    n_blocks = (numel + block_size - 1) // block_size
    codes = np.frombuffer(data, dtype=np.uint8, count=n_code_bytes, offset=off).copy()
    off += n_code_bytes
    if dq_flag:
        group_size, n_groups = struct.unpack_from("<II", data, off)
        off += 8
        scale = np.frombuffer(data, dtype="<f4", count=n_groups, offset=off).copy()
        off += 4 * n_groups
        offset_arr = np.frombuffer(data, dtype="<f4", count=n_groups, offset=off).copy()
        off += 4 * n_groups
        absmax_codes = np.frombuffer(data, dtype=np.uint8, count=n_blocks, offset=off).copy()
        off += n_blocks
        dq = DoubleQuantState(absmax_codes, group_size, scale, offset_arr)
        q = QuantizedTensor(tuple(shape), codes, None, dq, block_size)
    else:
        absmax = np.frombuffer(data, dtype="<f4", count=n_blocks, offset=off).copy()
        off += 4 * n_blocks
        q = QuantizedTensor(tuple(shape), codes, absmax, None, block_size)
    if off != len(data):
        raise FormatError(f"trailing bytes: consumed {off} of {len(data)}")
    return q


ST8_MAGIC = b"QST8"


def dumps_state8(q: Quantized8bitState) -> bytes:
    parts = [ST8_MAGIC, struct.pack("<HI", 1, q.block_size)]
    parts.append(struct.pack("<I", len(q.shape)))
    parts.append(struct.pack(f"<{len(q.shape)}I", *q.shape))
    parts.append(q.codes.tobytes())
    parts.append(q.absmax.astype("<f4").tobytes())
    return b"".join(parts)


def loads_state8(data: bytes) -> Quantized8bitState:
    if data[:4] != ST8_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {ST8_MAGIC!r}")
    off = 4
    version, block_size = struct.unpack_from("<HI", data, off)
    off += struct.calcsize("<HI")
    if version != 1:
        raise FormatError(f"unsupported QST8 version {version}")
    (rank,) = struct.unpack_from("<I", data, off)
    off += 4
    shape = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    numel = int(np.prod(shape)) if shape else 1
    n_blocks = (numel + block_size - 1) // block_size
    codes = np.frombuffer(data, dtype=np.uint8, count=numel, offset=off).copy()
    off += numel
    absmax = np.frombuffer(data, dtype="<f4", count=n_blocks, offset=off).copy()
    off += 4 * n_blocks
    if off != len(data):
        raise FormatError(f"trailing bytes: consumed {off} of {len(data)}")
    return Quantized8bitState(tuple(shape), codes, absmax, block_size)
