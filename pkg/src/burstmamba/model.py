"""End-to-end burst classifier.

bytes -> byte embedding (-> residual projection MLP) or stride embedding
-> append CLS at the end (+ learned positions) -> stack of Mamba blocks
-> hidden state at the CLS position -> MLP head -> logits.
"""

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.rng import STREAM_INIT, make_rng
from .core.tensor import Tensor
from .errors import ConfigError, ConfigMismatch, ShapeMismatch
from .ssm.blocks import BlockDims, init_mamba1_block, init_mamba2_block, mamba1_block, mamba2_block

BACKBONES = ("mamba2", "mamba1")
EMBED_STD = 0.02


@dataclass
class ModelConfig:
    d_model: int = 256
    depth: int = 4
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    headdim: int = 64
    d_mlp: int = 512
    classifier_hidden: int = 512
    dropout: float = 0.1
    num_classes: int = 2
    seq_len: int = 1600
    backbone: str = "mamba2"
    pos_encoding: bool = True
    emb_projection: bool = True
    proj_residual: bool = True
    gated_norm: bool = True
    stride: int = 1
    chunk: int = 64
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for key in ("d_model", "depth", "d_state", "expand", "d_conv", "headdim", "d_mlp",
                    "classifier_hidden", "num_classes", "seq_len", "chunk"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"model.{key}", "must be a positive integer")
        if self.backbone not in BACKBONES:
            raise ConfigError("model.backbone", f"must be one of {BACKBONES}")
        if self.backbone == "mamba2" and (self.expand * self.d_model) % self.headdim:
            raise ConfigError("model.headdim", "expand*d_model must be divisible by headdim")
        if self.stride not in (1, 2, 4):
            raise ConfigError("model.stride", "must be 1, 2 or 4")
        if self.seq_len % self.stride:
            raise ConfigError("model.stride", "must divide seq_len")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout", "must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("model.dtype", "must be float64 or float32")

    @property
    def eff_len(self):
        """Backbone length before the CLS token."""
        return self.seq_len // self.stride

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def block_dims(self):
        return BlockDims(self.d_model, self.d_state, self.expand, self.d_conv, self.headdim)

    def to_dict(self):
        return dataclasses.asdict(self)

    def canonical(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown key")
        return cls(**d)


# -- parameters -------------------------------------------------------------

def init_params(config, seed=None):
    """Initialise every learnable tensor; fully determined by ``seed``
    (defaults to ``config.seed``). Returns an ordered name -> Tensor dict."""
    seed = config.seed if seed is None else seed
    rng = make_rng(seed, STREAM_INIT)
    dt = config.np_dtype
    D = config.d_model
    p = {}

    def normal(shape):
        return rng.normal(0.0, EMBED_STD, size=shape).astype(dt)

    def lin(w_name, b_name, fan_in, fan_out):
        b = 1.0 / math.sqrt(fan_in)
        p[w_name] = rng.uniform(-b, b, size=(fan_in, fan_out)).astype(dt)
        p[b_name] = np.zeros(fan_out, dtype=dt)

    p["byte_table"] = normal((256, D))
    if config.stride > 1:
        lin("stride_W", "stride_b", config.stride * D, D)
    elif config.emb_projection:
        lin("proj_W1", "proj_b1", D, config.d_mlp)
        lin("proj_W2", "proj_b2", config.d_mlp, D)
    if config.pos_encoding:
        p["pos_table"] = normal((config.eff_len + 1, D))
    p["cls_vec"] = normal((D,))
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    init_block = init_mamba2_block if config.backbone == "mamba2" else init_mamba1_block
    for i in range(config.depth):
        for k, t in init_block(config.block_dims, rng, dt).items():
            t.name = f"blocks.{i}.{k}"
            params[t.name] = t

    head = {}
    b1 = 1.0 / math.sqrt(D)
    head["head_W1"] = rng.uniform(-b1, b1, size=(D, config.classifier_hidden)).astype(dt)
    head["head_b1"] = np.zeros(config.classifier_hidden, dtype=dt)
    b2 = 1.0 / math.sqrt(config.classifier_hidden)
    head["head_W2"] = rng.uniform(-b2, b2, size=(config.classifier_hidden, config.num_classes)).astype(dt)
    head["head_b2"] = np.zeros(config.num_classes, dtype=dt)
    for k, v in head.items():
        params[k] = Tensor(v, requires_grad=True, name=k)
    return params


def count_params(params):
    return int(sum(t.size for t in params.values()))


def param_hash(params):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def block_params(params, i):
    prefix = f"blocks.{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# -- forward pieces -----------------------------------------------------------

def embed_bytes(byte_ids, table):
    """[B, L] integer bytes -> [B, L, d_model] rows of ``table``."""
    return ops.embedding(byte_ids, table)


def project_embeddings(e, W1, b1, W2, b2, dropout=0.0, rng=None, training=False, residual=True):
    """``e + W2 . GELU(W1 . e)`` with dropout on the MLP branch while training."""
    h = ops.linear(ops.gelu(ops.linear(e, W1, b1)), W2, b2)
    h = ops.dropout(h, dropout, rng, training)
    return ops.add(e, h) if residual else h


def stride_embed(byte_ids, table, W, b, stride):
    """Embed bytes, then merge each non-overlapping window of ``stride``
    positions with one learned linear map (a conv with kernel = stride)."""
    nb, L = np.shape(byte_ids)
    if L % stride:
        raise ShapeMismatch(f"stride {stride} does not divide length {L}")
    e = embed_bytes(byte_ids, table)
    D = table.shape[1]
    if W.shape != (stride * D, D):
        raise ShapeMismatch(f"stride weights {W.shape} != {(stride * D, D)}")
    return ops.linear(ops.reshape(e, (nb, L // stride, stride * D)), W, b)


def add_pos_and_cls(h, cls_vec, pos_table=None):
    """Append ``cls_vec`` as the last position; add ``pos_table`` to all positions."""
    nb, L, D = h.shape
    if pos_table is not None and pos_table.shape != (L + 1, D):
        raise ShapeMismatch(f"pos_table {pos_table.shape} != {(L + 1, D)}")
    cls = ops.mul(ops.reshape(cls_vec, (1, 1, D)), np.ones((nb, 1, 1), dtype=h.dtype))
    out = ops.concat([h, cls], axis=1)
    if pos_table is not None:
        out = ops.add(out, pos_table)
    return out


def backbone_input(byte_ids, params, config, training=False, rng=None):
    """Sequence fed to the first block: [B, L_eff + 1, d_model]."""
    if config.stride > 1:
        h = stride_embed(byte_ids, params["byte_table"], params["stride_W"],
                         params["stride_b"], config.stride)
    else:
        h = embed_bytes(byte_ids, params["byte_table"])
        if config.emb_projection:
            h = project_embeddings(h, params["proj_W1"], params["proj_b1"],
                                   params["proj_W2"], params["proj_b2"],
                                   dropout=config.dropout, rng=rng, training=training,
                                   residual=config.proj_residual)
    return add_pos_and_cls(h, params["cls_vec"], params.get("pos_table"))


def run_backbone(h, params, config):
    dims = config.block_dims
    for i in range(config.depth):
        bp = block_params(params, i)
        if config.backbone == "mamba2":
            h = mamba2_block(h, bp, dims, chunk=config.chunk, gated_norm=config.gated_norm)
        else:
            h = mamba1_block(h, bp, dims)
    return h


def classify_forward(byte_ids, params, config, training=False, rng=None):
    """Logits [B, C] for integer bytes [B, seq_len]."""
    byte_ids = np.asarray(byte_ids)
    if byte_ids.ndim != 2 or byte_ids.shape[1] != config.seq_len:
        raise ShapeMismatch(f"expected bytes [B, {config.seq_len}], got {byte_ids.shape}")
    if training and config.dropout > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    h = run_backbone(backbone_input(byte_ids, params, config, training, rng), params, config)
    h_cls = ops.select(h, -1, axis=1)
    z = ops.gelu(ops.linear(h_cls, params["head_W1"], params["head_b1"]))
    z = ops.dropout(z, config.dropout, rng, training)
    return ops.linear(z, params["head_W2"], params["head_b2"])


# -- checkpoint file -----------------------------------------------------------
#
# "BMCK" | u32 version | u32 header_len | header (canonical JSON config) |
# u32 n_tensors | n x (u16 name_len, name, u8 ndim, ndim x u64 dims,
# row-major float64 data), all little-endian.

CKPT_MAGIC = b"BMCK"
CKPT_VERSION = 1


def save_checkpoint(path, config, params):
    header = config.canonical().encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path, expected_config=None):
    """Return ``(config, params)``; raise ConfigMismatch if ``expected_config``
    differs from the stored one."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    cfg_dict = json.loads(buf[off:off + hlen].decode())
    off += hlen
    config = ModelConfig.from_dict(cfg_dict)
    if expected_config is not None and expected_config.canonical() != config.canonical():
        raise ConfigMismatch(f"{path}: stored config differs from the expected one")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        params[name] = Tensor(arr.astype(config.np_dtype), requires_grad=True, name=name)
    return config, params
