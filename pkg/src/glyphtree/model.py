"""Model configuration, parameter initialization, and checkpoint I/O."""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ids
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"FTCP"
CHECKPOINT_VERSION = 1

LOGIT_SCALE_MAX = math.log(100.0)

_DTYPE_NAMES = {"f32": np.float32, "f64": np.float64}


class ConfigError(Exception):
    pass


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptHeader(CheckpointError):
    pass


@dataclass
class ModelConfig:
    d: int = 128
    layers: int = 4
    heads: int = 4
    d_embed: int = 128
    patch_px: int = 8
    image_size: int = 32
    mask_ratio: float = 0.5
    batch: int = 128
    lr: float = 1e-3
    epochs: int = 20
    seed: int = 0
    temperature_init: float = math.log(1.0 / 0.07)

    def __post_init__(self) -> None:
        numeric = dataclasses.asdict(self)
        for name, v in numeric.items():
            if v <= 0 and name not in ("mask_ratio", "seed"):
                raise ConfigError(f"config field {name} must be positive, got {v}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.image_size % self.patch_px != 0:
            raise ConfigError(
                f"image_size={self.image_size} not divisible by patch_px={self.patch_px}"
            )

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_px) ** 2

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json_file(cls, path: str) -> "ModelConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)


@dataclass
class ArchFlags:
    """Architecture/inference variants for the ablation axes."""

    sequential: bool = False     # full attention + learned positions + [CLS]
    azimuth_pe: bool = True      # add per-azimuth input embeddings
    special_node: bool = False   # virtual pooled node instead of the root
    tree_mask: bool = True       # mask unknown leaves at inference

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ArchFlags":
        return cls(**raw)


MAX_TREE_NODES = 64  # capacity of the sequential-mode position table


@dataclass
class ModelParams:
    """All learnable tensors of both encoders, keyed by name."""

    tensors: dict[str, Tensor]
    vocab_size: int

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {
                n: Tensor(t.value.astype(dtype), requires_grad=True)
                for n, t in self.tensors.items()
            },
            self.vocab_size,
        )

    @property
    def special_row(self) -> int:
        # row index of the [CLS]/virtual-node embedding in the node table
        return ids.NUM_FORMATION_TYPES + self.vocab_size


def _trunc_normal(rng: np.random.Generator, shape, sigma=0.1, dtype=np.float32):
    v = rng.standard_normal(shape) * sigma
    return np.clip(v, -2 * sigma, 2 * sigma).astype(dtype)


def init_params(
    cfg: ModelConfig,
    vocab_size: int,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Fresh parameters: truncated-normal weights, zero biases, zero azimuth
    bias table (the tree encoder starts as an unbiased masked transformer).

    The init scale matters: much smaller weights make attention nearly
    uniform, every sample pools to almost the same embedding, and the
    contrastive loss sits on a long plateau before gradients can spread
    the collapsed cone apart.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    d, de, p2 = cfg.d, cfg.d_embed, cfg.patch_px**2
    t: dict[str, np.ndarray] = {}

    node_rows = ids.NUM_FORMATION_TYPES + vocab_size + 1  # +1 = [CLS]/virtual node
    t["tree.node_emb"] = _trunc_normal(rng, (node_rows, d), dtype=dtype)
    t["tree.az_emb"] = _trunc_normal(rng, (ids.NUM_AZIMUTHS + 1, d), dtype=dtype)
    t["tree.pos_emb"] = _trunc_normal(rng, (MAX_TREE_NODES, d), dtype=dtype)
    t["tree.bias"] = np.zeros((cfg.heads, ids.NUM_AZIMUTHS + 1), dtype=dtype)

    t["img.patch_proj.w"] = _trunc_normal(rng, (p2, d), dtype=dtype)
    t["img.patch_proj.b"] = np.zeros((d,), dtype=dtype)
    t["img.cls"] = _trunc_normal(rng, (d,), dtype=dtype)
    t["img.pos_emb"] = _trunc_normal(rng, (cfg.num_patches, d), dtype=dtype)

    for side in ("tree", "img"):
        for i in range(cfg.layers):
            pre = f"{side}.layers.{i}"
            for w in ("wq", "wk", "wv", "wo"):
                t[f"{pre}.{w}"] = _trunc_normal(rng, (d, d), dtype=dtype)
            t[f"{pre}.mlp.w1"] = _trunc_normal(rng, (d, 4 * d), dtype=dtype)
            t[f"{pre}.mlp.b1"] = np.zeros((4 * d,), dtype=dtype)
            t[f"{pre}.mlp.w2"] = _trunc_normal(rng, (4 * d, d), dtype=dtype)
            t[f"{pre}.mlp.b2"] = np.zeros((d,), dtype=dtype)
            t[f"{pre}.ln1.g"] = np.ones((d,), dtype=dtype)
            t[f"{pre}.ln1.b"] = np.zeros((d,), dtype=dtype)
            t[f"{pre}.ln2.g"] = np.ones((d,), dtype=dtype)
            t[f"{pre}.ln2.b"] = np.zeros((d,), dtype=dtype)
        t[f"{side}.final_ln.g"] = np.ones((d,), dtype=dtype)
        t[f"{side}.final_ln.b"] = np.zeros((d,), dtype=dtype)
        t[f"{side}.proj.w"] = _trunc_normal(rng, (d, de), dtype=dtype)
        t[f"{side}.proj.b"] = np.zeros((de,), dtype=dtype)

    t["logit_scale"] = np.asarray(cfg.temperature_init, dtype=dtype)

    return ModelParams(
        {n: Tensor(v, requires_grad=True) for n, v in t.items()}, vocab_size
    )


# --- checkpoint format ---------------------------------------------------
# magic "FTCP" | u32 version | u32 header length | JSON header | raw payload
# Header: {"meta": {...}, "tensors": {name: {dtype, shape, offset, nbytes}}}
# Payload scalars are little-endian; save->load is bitwise identity.


def _dtype_name(dt: np.dtype) -> str:
    if dt == np.float32:
        return "f32"
    if dt == np.float64:
        return "f64"
    raise CheckpointError(f"unsupported dtype {dt}")


def save_checkpoint(
    params: ModelParams,
    path: str,
    cfg: ModelConfig | None = None,
    flags: ArchFlags | None = None,
    extra_meta: dict | None = None,
) -> None:
    entries: dict[str, dict] = {}
    payload = io.BytesIO()
    for name in params.names():
        src = params[name].value
        # ascontiguousarray promotes 0-d arrays to 1-d; keep shapes faithful
        arr = np.ascontiguousarray(src).reshape(src.shape)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries[name] = {
            "dtype": _dtype_name(arr.dtype),
            "shape": list(arr.shape),
            "offset": payload.tell(),
            "nbytes": arr.nbytes,
        }
        payload.write(arr.tobytes())
    meta = {"vocab_size": params.vocab_size}
    if cfg is not None:
        meta["config"] = dataclasses.asdict(cfg)
    if flags is not None:
        meta["flags"] = flags.to_dict()
    if extra_meta:
        meta.update(extra_meta)
    header = json.dumps({"meta": meta, "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        fh.write(payload.getvalue())


def load_checkpoint(path: str) -> tuple[ModelParams, dict]:
    """Returns (params, meta).  meta carries config/flags when saved."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagic("not a checkpoint file")
    version = int(np.frombuffer(blob[4:8], dtype=np.uint32)[0])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    hlen = int(np.frombuffer(blob[8:12], dtype=np.uint32)[0])
    if 12 + hlen > len(blob):
        raise CorruptHeader("truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
        entries = header["tensors"]
        meta = header.get("meta", {})
    except (ValueError, KeyError) as e:
        raise CorruptHeader(f"bad header: {e}") from e
    base = 12 + hlen
    tensors: dict[str, Tensor] = {}
    for name, ent in entries.items():
        try:
            dt = _DTYPE_NAMES[ent["dtype"]]
            shape = tuple(ent["shape"])
            off, nbytes = ent["offset"], ent["nbytes"]
        except (KeyError, TypeError) as e:
            raise CorruptHeader(f"bad tensor entry {name}: {e}") from e
        if base + off + nbytes > len(blob):
            raise CorruptHeader(f"payload truncated at tensor {name}")
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // np.dtype(dt).itemsize, offset=base + off)
        tensors[name] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
    vocab_size = meta.get("vocab_size")
    if vocab_size is None:
        raise CorruptHeader("missing vocab_size in meta")
    return ModelParams(tensors, vocab_size), meta


def config_from_meta(meta: dict) -> ModelConfig:
    return ModelConfig.from_dict(meta["config"])


def flags_from_meta(meta: dict) -> ArchFlags:
    return ArchFlags.from_dict(meta.get("flags", {}))
