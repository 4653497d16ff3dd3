"""Model configuration, parameter initialization and the MWLD params file."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..tokenizer import SEQ_LEN, VOCAB_SIZE

MAGIC = b"MWLD"
VERSION = 1


class BadMagic(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    vocab_size: int = VOCAB_SIZE
    seq_len: int = SEQ_LEN
    lr: float = 3e-4
    batch_size: int = 32
    seed: int = 0
    use_sre: bool = True
    dtype: str = "f64"  # f64 reference mode; f32 for speed runs
    warmup_steps: int = 100

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size != VOCAB_SIZE or self.seq_len != SEQ_LEN:
            raise ValueError(f"vocab/seq fixed at {VOCAB_SIZE}/{SEQ_LEN}")
        if self.dtype not in ("f64", "f32"):
            raise ValueError(f"dtype must be f64 or f32, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict
    trained_steps: int = 0

    def key_order(self) -> list[str]:
        return sorted(self.tensors.keys())

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in self.key_order()])

    def set_flat(self, vec: np.ndarray):
        i = 0
        for k in self.key_order():
            t = self.tensors[k]
            self.tensors[k] = vec[i:i + t.size].reshape(t.shape).astype(t.dtype)
            i += t.size
        if i != vec.size:
            raise ShapeMismatch(f"flat vector size {vec.size}, expected {i}")

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            trained_steps=self.trained_steps,
        )


def expected_shapes(cfg: ModelConfig) -> dict:
    d, v = cfg.d_model, cfg.vocab_size
    f = cfg.ffn_mult * d
    shapes = {
        "tok_emb": (v, d),
        "sre_w": (3, d),
        "sre_b": (d,),
        "lnf_g": (d,),
        "lnf_b": (d,),
        "fast_w": (d, 5),
        "fast_b": (5,),
        "slow_w": (d, v),
        "slow_b": (v,),
    }
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes.update(
            {
                p + "ln1_g": (d,),
                p + "ln1_b": (d,),
                p + "wq": (d, d),
                p + "bq": (d,),
                p + "wk": (d, d),
                p + "bk": (d,),
                p + "wv": (d, d),
                p + "bv": (d,),
                p + "wo": (d, d),
                p + "bo": (d,),
                p + "ln2_g": (d,),
                p + "ln2_b": (d,),
                p + "w1": (d, f),
                p + "b1": (f,),
                p + "w2": (f, d),
                p + "b2": (d,),
            }
        )
    return shapes


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seeded normal(0, 0.02) init; residual output projections down-scaled."""
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    resid_scale = 1.0 / np.sqrt(2.0 * cfg.n_layers)
    tensors = {}
    for name, shape in expected_shapes(cfg).items():
        short = name.split(".")[-1]
        if short.startswith("b") or short.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dt)
        elif short.endswith("_g"):
            tensors[name] = np.ones(shape, dtype=dt)
        else:
            w = rng.normal(0.0, 0.02, size=shape)
            if short in ("wo", "w2"):
                w *= resid_scale
            tensors[name] = w.astype(dt)
    return ModelParams(config=cfg, tensors=tensors)


_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.float64, 1: np.float32}


def save_params(params: ModelParams, path):
    cfg_json = json.dumps(asdict(params.config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<Q", params.trained_steps))
        fh.write(struct.pack("<I", len(params.tensors)))
        for name in params.key_order():
            t = np.ascontiguousarray(params.tensors[name])
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _DTYPE_CODES[t.dtype], t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise VersionMismatch(f"params file version {version}, expected {VERSION}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        cfg = ModelConfig(**json.loads(fh.read(cfg_len).decode()))
        (trained_steps,) = struct.unpack("<Q", fh.read(8))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dt = np.dtype(_CODE_DTYPES[code])
            raw = fh.read(int(np.prod(shape)) * dt.itemsize)
            if len(raw) < int(np.prod(shape)) * dt.itemsize:
                raise BadMagic("truncated tensor data")
            tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    want = expected_shapes(cfg)
    if set(want) != set(tensors):
        raise ShapeMismatch("tensor set does not match config")
    for name, shape in want.items():
        if tensors[name].shape != shape:
            raise ShapeMismatch(f"{name}: {tensors[name].shape} != {shape}")
    return ModelParams(config=cfg, tensors=tensors, trained_steps=trained_steps)
