"""Low-rank adapters over frozen quantized linear layers.

The adapted weight is W + (alpha/r) * B @ A with W held as a 4-bit
QuantizedTensor that never receives gradients. B starts at zero so a freshly
attached adapter is an exact identity perturbation. An `eq1_literal` switch
drops the alpha/r factor for fidelity experiments with the bare h = W + BA
form.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .numcore import FULL, GradNode, Parameter, Rng, Tensor, add, dropout, matmul, scale, transpose
from .numcore import ops as _ops
from .quant import QuantizedTensor, dequantize

TARGETS = ("Q", "K", "V", "O")


@dataclass
class LoraConfig:
    r: int = 8
    alpha: float = 32.0
    dropout: float = 0.05
    targets: tuple = TARGETS
    eq1_literal: bool = False  # drop the alpha/r factor

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"rank must be positive, got {self.r}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        bad = [t for t in self.targets if t not in TARGETS]
        if bad:
            raise ConfigError(f"unknown adapter targets {bad}; choose from {TARGETS}")
        self.targets = tuple(self.targets)

    @property
    def scaling(self) -> float:
        return 1.0 if self.eq1_literal else self.alpha / self.r

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "alpha": self.alpha,
            "dropout": self.dropout,
            "targets": list(self.targets),
            "eq1_literal": self.eq1_literal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoraConfig":
        return cls(
            r=d["r"],
            alpha=d["alpha"],
            dropout=d.get("dropout", 0.05),
            targets=tuple(d.get("targets", TARGETS)),
            eq1_literal=d.get("eq1_literal", False),
        )


@dataclass
class LoraAdapter:
    a: Parameter  # [r x d_in]
    b: Parameter  # [d_out x r]
    scaling: float
    dropout: float

    @property
    def r(self) -> int:
        return self.a.value.shape[0]

    @property
    def n_params(self) -> int:
        return self.a.value.numel + self.b.value.numel


@dataclass
class AdaptedLinear:
    """Frozen quantized base weight plus a trainable low-rank branch."""

    base: QuantizedTensor  # [d_out x d_in]
    adapter: LoraAdapter
    name: str = ""
    bias: np.ndarray | None = None
    _dequant_cache: dict = field(default_factory=dict, repr=False)

    @property
    def d_out(self) -> int:
        return self.base.shape[0]

    @property
    def d_in(self) -> int:
        return self.base.shape[1]

    def base_weight(self, dtype: str = FULL) -> GradNode:
        """Dequantized base as a gradient-free constant, cached per precision."""
        if dtype not in self._dequant_cache:
            np_dtype = np.float64 if dtype == "double" else np.float32
            self._dequant_cache[dtype] = GradNode(Tensor(dequantize(self.base, np_dtype), dtype))
        return self._dequant_cache[dtype]


def attach(
    base: QuantizedTensor,
    cfg: LoraConfig,
    rng: Rng,
    name: str = "",
    bias: np.ndarray | None = None,
) -> AdaptedLinear:
    """Wrap a frozen quantized weight with a zero-initialized adapter."""
    if len(base.shape) != 2:
        raise ConfigError(f"adapters attach to 2-D weights, got shape {base.shape}")
    d_out, d_in = base.shape
    if cfg.r > min(d_in, d_out):
        raise ConfigError(f"rank {cfg.r} exceeds min(d_in={d_in}, d_out={d_out})")
    a = Parameter(
        Tensor(rng.split("lora_a").normal((cfg.r, d_in), std=1.0 / np.sqrt(cfg.r)), FULL),
        name=f"{name}.lora_a" if name else "lora_a",
    )
    b = Parameter(Tensor(np.zeros((d_out, cfg.r)), FULL), name=f"{name}.lora_b" if name else "lora_b")
    adapter = LoraAdapter(a=a, b=b, scaling=cfg.scaling, dropout=cfg.dropout)
    return AdaptedLinear(base=base, adapter=adapter, name=name, bias=bias)


def forward(
    layer: AdaptedLinear,
    x: GradNode,
    train_mode: bool = False,
    rng: Rng | None = None,
    dtype: str = FULL,
) -> GradNode:
    """y = dequantize(W) x + scaling * B (A dropout(x)), row-major batched."""
    if x.value.shape[-1] != layer.d_in:
        raise DimensionError(
            f"{layer.name or 'adapted linear'}: input width {x.value.shape[-1]} != d_in {layer.d_in}"
        )
    w = layer.base_weight(dtype)
    y = matmul(x, transpose(w))
    ad = layer.adapter
    xd = dropout(x, ad.dropout, rng, train_mode)
    branch = matmul(matmul(xd, transpose(ad.a)), transpose(ad.b))
    y = add(y, scale(branch, ad.scaling))
    if layer.bias is not None:
        y = add(y, _ops.as_node(Tensor(np.broadcast_to(layer.bias, y.value.shape), dtype)))
    return y


def merge(layer: AdaptedLinear) -> np.ndarray:
    """Fold the adapter into a dense full-precision weight W' = W + s * B A."""
    w = dequantize(layer.base, np.float64)
    ba = layer.adapter.b.value.data.astype(np.float64) @ layer.adapter.a.value.data.astype(np.float64)
    return (w + layer.adapter.scaling * ba).astype(np.float32)


def trainable_fraction(adapted_layers, extra_trainable: int = 0, extra_frozen: int = 0) -> float:
    """Adapter parameters over all parameters, counting frozen base elements."""
    adapter_params = sum(layer.adapter.n_params for layer in adapted_layers)
    base_params = sum(layer.base.numel for layer in adapted_layers)
    total = adapter_params + base_params + extra_trainable + extra_frozen
    return adapter_params / total if total else 0.0


# ---------------------------------------------------------------------------
# adapter checkpoint format: "LORA" header + raw little-endian f32 A/B pairs
# ---------------------------------------------------------------------------

LORA_MAGIC = b"LORA"
LORA_VERSION = 1


def dumps_adapters(layers: list[AdaptedLinear], cfg: LoraConfig) -> bytes:
    parts = [LORA_MAGIC, struct.pack("<HIf", LORA_VERSION, cfg.r, cfg.alpha)]
    target_blob = ",".join(cfg.targets).encode("ascii")
    parts.append(struct.pack("<B", len(target_blob)))
    parts.append(target_blob)
    parts.append(struct.pack("<I", len(layers)))
    for layer in layers:
        name_blob = layer.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_blob)))
        parts.append(name_blob)
        for mat in (layer.adapter.a.value.data, layer.adapter.b.value.data):
            parts.append(struct.pack("<II", *mat.shape))
            parts.append(mat.astype("<f4").tobytes())
    return b"".join(parts)


def loads_adapters(data: bytes) -> dict:
    """Parse an adapter checkpoint into {layer name: (A, B)} plus header info."""
    if data[:4] != LORA_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {LORA_MAGIC!r}")
    off = 4
    version, r, alpha = struct.unpack_from("<HIf", data, off)
    off += struct.calcsize("<HIf")
    if version != LORA_VERSION:
        raise FormatError(f"unsupported LORA version {version}")
    (tlen,) = struct.unpack_from("<B", data, off)
    off += 1
    targets = tuple(data[off : off + tlen].decode("ascii").split(",")) if tlen else ()
    off += tlen
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    weights = {}
    for _ in range(n_layers):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        mats = []
        for _ in range(2):
            rows, cols = struct.unpack_from("<II", data, off)
            off += 8
            count = rows * cols
            mats.append(
                np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(rows, cols).copy()
            )
            off += 4 * count
        weights[name] = (mats[0], mats[1])
    if off != len(data):
        raise FormatError(f"trailing bytes: consumed {off} of {len(data)}")
    return {"r": r, "alpha": alpha, "targets": targets, "weights": weights}


def apply_adapter_state(layers: list[AdaptedLinear], state: dict):
    """Load saved A/B matrices into matching layers by name."""
    weights = state["weights"]
    for layer in layers:
        if layer.name not in weights:
            raise FormatError(f"adapter checkpoint missing layer {layer.name!r}")
        a, b = weights[layer.name]
        layer.adapter.a.assign(Tensor(a, FULL))
        layer.adapter.b.assign(Tensor(b, FULL))
