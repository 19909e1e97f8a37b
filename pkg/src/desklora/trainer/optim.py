"""Gradient clipping and optimizers: decoupled-weight-decay Adam with
moments held in blockwise 8-bit dynamic quantization (host-resident in the
ledger), a full-precision variant for oracle comparisons, and plain SGD for
accumulation-equivalence checks.
"""

import struct

import numpy as np

from ..errors import FormatError, TrainingError
from ..numcore import Parameter, Tensor
from ..quant import (
    STATE8_BLOCK_SIZE,
    dequantize_state8,
    dumps_state8,
    loads_state8,
    quantize_state8,
)


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Mutates `grads` in place and returns the scale applied (1.0 if untouched).
    """
    if max_norm <= 0:
        raise TrainingError(f"max_norm must be positive, got {max_norm}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r}")
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for name in grads:
        grads[name] = grads[name] * scale
    return scale


class Sgd:
    """Plain gradient descent; stateless."""

    kind = "sgd"

    def __init__(self, **_):
        self.step_count = 0

    def step(self, params: list, grads: dict, lr: float):
        self.step_count += 1
        for name, p in params:
            g = grads.get(name)
            if g is None:
                continue
            p.assign(Tensor(p.value.data - lr * g, p.value.dtype))

    def dumps(self) -> bytes:
        return OPT_MAGIC + struct.pack("<HBI", OPT_VERSION, 0, self.step_count) + struct.pack("<I", 0)

    def loads(self, data: bytes):
        _, _, self.step_count, _ = _parse_header(data)


OPT_MAGIC = b"OPT8"
OPT_VERSION = 1


def _parse_header(data: bytes):
    if data[:4] != OPT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {OPT_MAGIC!r}")
    version, quantized, step = struct.unpack_from("<HBI", data, 4)
    if version != OPT_VERSION:
        raise FormatError(f"unsupported optimizer state version {version}")
    off = 4 + struct.calcsize("<HBI")
    (count,) = struct.unpack_from("<I", data, off)
    return version, quantized, step, off + 4, count


class AdamW:
    """Adam with decoupled weight decay and bias correction.

    With `quantized=True` (the default) the first and second moments live as
    blockwise 8-bit states, dequantized for the update and requantized after.
    Their bytes are charged to the ledger's host-side optimizer_states pool.
    """

    def __init__(
        self,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        quantized: bool = True,
        block_size: int = STATE8_BLOCK_SIZE,
        ledger=None,
    ):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.quantized = quantized
        self.block_size = block_size
        self.ledger = ledger
        self.step_count = 0
        self.moments: dict = {}  # name -> (m, v) as Quantized8bitState or ndarray

    @property
    def kind(self) -> str:
        return "adamw8" if self.quantized else "adamw"

    def _init_state(self, name: str, shape):
        zeros = np.zeros(shape, dtype=np.float64)
        if self.quantized:
            m = quantize_state8(zeros, self.block_size)
            v = quantize_state8(zeros, self.block_size)
            if self.ledger is not None:
                self.ledger.allocate("optimizer_states", m.nbytes + v.nbytes)
        else:
            m, v = zeros.copy(), zeros.copy()
        self.moments[name] = (m, v)

    def _get_moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        m, v = self.moments[name]
        if self.quantized:
            return dequantize_state8(m, np.float64), dequantize_state8(v, np.float64)
        return m, v

    def _put_moments(self, name: str, m: np.ndarray, v: np.ndarray):
        if self.quantized:
            self.moments[name] = (
                quantize_state8(m, self.block_size),
                quantize_state8(v, self.block_size),
            )
        else:
            self.moments[name] = (m, v)

    def step(self, params: list, grads: dict, lr: float):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in params:
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.moments:
                self._init_state(name, p.value.shape)
            g64 = g.astype(np.float64)
            m, v = self._get_moments(name)
            m = b1 * m + (1 - b1) * g64
            v = b2 * v + (1 - b2) * g64 * g64
            m_hat = m / (1 - b1**t)
            v_hat = np.maximum(v / (1 - b2**t), 0.0)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.value.data.astype(np.float64)
            p.assign(Tensor(p.value.data - lr * update, p.value.dtype))
            self._put_moments(name, m, v)
            if not np.all(np.isfinite(self._get_moments(name)[0])):
                raise TrainingError(f"non-finite first moment for {name!r}")

    # -- serialization --------------------------------------------------------

    def dumps(self) -> bytes:
        if not self.quantized:
            raise FormatError("only 8-bit optimizer state is checkpointable")
        parts = [OPT_MAGIC, struct.pack("<HBI", OPT_VERSION, 1, self.step_count)]
        parts.append(struct.pack("<I", len(self.moments)))
        for name in sorted(self.moments):
            blob_name = name.encode("utf-8")
            parts.append(struct.pack("<H", len(blob_name)))
            parts.append(blob_name)
            for state in self.moments[name]:
                blob = dumps_state8(state)
                parts.append(struct.pack("<I", len(blob)))
                parts.append(blob)
        return b"".join(parts)

    def loads(self, data: bytes):
        _, quantized, step, off, count = _parse_header(data)
        if not quantized:
            raise FormatError("optimizer state blob is not 8-bit quantized")
        self.step_count = step
        self.moments = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nlen].decode("utf-8")
            off += nlen
            states = []
            for _ in range(2):
                (blen,) = struct.unpack_from("<I", data, off)
                off += 4
                states.append(loads_state8(data[off : off + blen]))
                off += blen
            self.moments[name] = tuple(states)
        if off != len(data):
            raise FormatError(f"trailing bytes: consumed {off} of {len(data)}")


def make_optimizer(kind: str, betas, eps, weight_decay, ledger=None):
    if kind == "adamw8":
        return AdamW(betas=betas, eps=eps, weight_decay=weight_decay, quantized=True, ledger=ledger)
    if kind == "adamw":
        return AdamW(betas=betas, eps=eps, weight_decay=weight_decay, quantized=False, ledger=ledger)
    if kind == "sgd":
        return Sgd()
    raise FormatError(f"unknown optimizer kind {kind!r}")
