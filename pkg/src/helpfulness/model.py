"""Context-aware helpfulness regressor.

Word embeddings plus sinusoidal positions feed one multi-head self-attention
block. The attended sequence goes through parallel valid convolutions of widths
1, 2 and 3 (RELU, then pooling over positions) and the concatenated pooled
features feed a linear regression head.

Variants:

* ``full_max`` - attention, convolutions, max pooling.
* ``s_avg``    - attention, convolutions, average pooling.
* ``s_attn``   - attention only; the head reads the mean of the attention output.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, FormatError, NumericError, SequenceTooShortError
from .optim import AdamState, adam_step
from .tensor import RngStream, Tensor
from .text import PAD, EmbeddingTable, TokenizedReview, Vocabulary, random_embeddings

VARIANTS = ("full_max", "s_avg", "s_attn")
SCALE_DIMS = ("d_k", "l")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 100
    heads: int = 2
    j: float = 1000.0
    channels: int = 64
    filters: tuple[int, ...] = (1, 2, 3)
    dropout: float = 0.5
    variant: str = "full_max"
    scale_dim: str = "d_k"
    max_len: int = 400
    trainable_embeddings: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.scale_dim not in SCALE_DIMS:
            raise ConfigurationError(f"scale_dim must be one of {SCALE_DIMS}, got {self.scale_dim!r}")
        if self.dim % 2:
            raise ConfigurationError(f"embedding dimension must be even, got {self.dim}")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigurationError(f"dimension {self.dim} is not divisible by {self.heads} heads")
        if not 2 * math.pi <= self.j <= 10000:
            raise ConfigurationError(f"positional constant j must lie in [2*pi, 10000], got {self.j}")
        if not self.filters or any(f < 1 for f in self.filters) or len(set(self.filters)) != len(self.filters):
            raise ConfigurationError(f"filters must be distinct positive widths, got {self.filters}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in names}
        d["filters"] = tuple(d.get("filters", (1, 2, 3)))
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- positional encoding -------------------------------------------------------


@lru_cache(maxsize=64)
def _pe_cached(n: int, dim: int, j: float) -> np.ndarray:
    positions = np.arange(n, dtype=np.float64)[:, None]
    rates = np.power(float(j), np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = positions / rates
    pe = np.empty((n, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    pe.flags.writeable = False
    return pe


def positional_encoding(n: int, dim: int = 100, j: float = 1000.0) -> np.ndarray:
    """``[n x dim]`` sinusoidal table; column ``2i`` holds ``sin(s / j**(2i/dim))``
    and column ``2i+1`` the matching cosine, positions ``s`` counted from 0."""
    if dim % 2:
        raise ConfigurationError(f"positional encoding needs an even dimension, got {dim}")
    if n < 1:
        raise ConfigurationError(f"sequence length must be >= 1, got {n}")
    return _pe_cached(int(n), int(dim), float(j))


@dataclass(frozen=True)
class PositionalEncoder:
    dim: int = 100
    j: float = 1000.0

    def __call__(self, n: int) -> np.ndarray:
        return positional_encoding(n, self.dim, self.j)


# -- parameter containers --------------------------------------------------------


@dataclass
class MultiHeadAttention:
    query: list[Tensor]
    key: list[Tensor]
    value: list[Tensor]
    output: Tensor
    scale_dim: str = "d_k"

    @property
    def heads(self) -> int:
        return len(self.query)

    def parameters(self) -> list[Tensor]:
        return [*self.query, *self.key, *self.value, self.output]


@dataclass
class ConvBlock:
    kernels: dict[int, Tensor]
    biases: dict[int, Tensor]

    @property
    def widths(self) -> list[int]:
        return sorted(self.kernels)

    @property
    def channels(self) -> int:
        return next(iter(self.biases.values())).shape[0]

    def parameters(self) -> list[Tensor]:
        return [t for f in self.widths for t in (self.kernels[f], self.biases[f])]


def glorot(rng: RngStream, shape: tuple[int, ...], fan_in: int, fan_out: int, name: str) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


# -- forward pieces ----------------------------------------------------------------


def embed_with_position(ids: np.ndarray, emb: EmbeddingTable, pos: PositionalEncoder) -> Tensor:
    """Embedding rows plus positional rows for ``ids`` of shape ``[..., n]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[-1] < 1:
        raise SequenceTooShortError("cannot embed an empty review")
    rows = T.take_rows(emb.matrix, ids, frozen_row=PAD)
    return T.add(rows, Tensor(pos(ids.shape[-1])))


def self_attention(x: Tensor, attn: MultiHeadAttention, mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head scaled dot-product self-attention over ``x`` (``[..., n, l]``).

    ``mask`` (``[..., n]``, True = real token) removes padded keys from every
    softmax row. Heads are concatenated and projected back to width ``l``.
    """
    dim = x.shape[-1]
    d = attn.query[0].shape[1] if attn.scale_dim == "d_k" else dim
    inv_sqrt = 1.0 / math.sqrt(d)
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    heads = []
    for wq, wk, wv in zip(attn.query, attn.key, attn.value):
        q = T.matmul(x, wq)
        k = T.matmul(x, wk)
        v = T.matmul(x, wv)
        scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt)
        heads.append(T.matmul(T.softmax_rows(scores, key_mask), v))
    joined = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
    return T.matmul(joined, attn.output)


def conv_encode(context: Tensor, conv: ConvBlock, mode: str = "max",
                lengths: Optional[np.ndarray] = None) -> Tensor:
    """Convolve, RELU and pool per filter width; concatenate in width order.

    With ``lengths`` given, output positions whose window touches padding are
    excluded from pooling.
    """
    n = context.shape[-2]
    widest = max(conv.widths)
    if n < widest:
        raise SequenceTooShortError(f"sequence of length {n} is shorter than the widest filter ({widest})")
    pooled = []
    for f in conv.widths:
        feature = T.relu(T.conv1d(context, conv.kernels[f], conv.biases[f]))
        mask = None
        if lengths is not None:
            valid = np.asarray(lengths)[..., None] - f + 1
            mask = np.arange(n - f + 1) < valid
        pooled.append(T.pool_positions(feature, mode, mask))
    return pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=-1)


# -- the model -------------------------------------------------------------------------


class HelpfulnessModel:
    def __init__(self, config: ModelConfig, embedding: EmbeddingTable, attn: MultiHeadAttention,
                 conv: Optional[ConvBlock], head_w: Tensor, head_b: Tensor):
        self.config = config
        self.embedding = embedding
        self.pos = PositionalEncoder(config.dim, config.j)
        self.attn = attn
        self.conv = conv
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def initialize(cls, config: ModelConfig, rng: RngStream,
                   embedding: Optional[EmbeddingTable] = None) -> "HelpfulnessModel":
        l, dk = config.dim, config.head_dim
        if embedding is None:
            embedding = random_embeddings(config.vocab_size, l, rng, config.trainable_embeddings)
        if embedding.matrix.shape != (config.vocab_size, l):
            raise ConfigurationError(
                f"embedding shape {embedding.matrix.shape} != ({config.vocab_size}, {l})")
        embedding.trainable = config.trainable_embeddings
        embedding.matrix.requires_grad = config.trainable_embeddings
        embedding.matrix.name = "embedding"
        proj = {
            role: [glorot(rng, (l, dk), l, dk, f"attn.{role}.{h}") for h in range(config.heads)]
            for role in ("query", "key", "value")
        }
        attn = MultiHeadAttention(proj["query"], proj["key"], proj["value"],
                                  glorot(rng, (l, l), l, l, "attn.output"), config.scale_dim)
        conv = None
        if config.variant != "s_attn":
            c = config.channels
            conv = ConvBlock(
                {f: glorot(rng, (f, l, c), f * l, c, f"conv.kernel.{f}") for f in config.filters},
                {f: Tensor(np.zeros(c), requires_grad=True, name=f"conv.bias.{f}") for f in config.filters},
            )
        width = l if conv is None else c * len(config.filters)
        head_w = glorot(rng, (width,), width, 1, "head.w")
        head_b = Tensor(np.zeros(()), requires_grad=True, name="head.b")
        return cls(config, embedding, attn, conv, head_w, head_b)

    def named_parameters(self, include_frozen: bool = False) -> dict[str, Tensor]:
        tensors = [self.embedding.matrix] if (self.embedding.trainable or include_frozen) else []
        tensors += self.attn.parameters()
        if self.conv is not None:
            tensors += self.conv.parameters()
        tensors += [self.head_w, self.head_b]
        return {t.name: t for t in tensors}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_parameters(include_frozen=True).items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()[:16]

    @property
    def min_length(self) -> int:
        return 1 if self.conv is None else max(self.conv.widths)

    def forward(self, ids: np.ndarray, lengths: np.ndarray, training: bool = False,
                rng: Optional[RngStream] = None) -> Tensor:
        """Raw (unclamped) scores ``[B]`` for padded ids ``[B x n]``."""
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        mask = np.arange(ids.shape[-1]) < lengths[..., None]
        x = embed_with_position(ids, self.embedding, self.pos)
        context = self_attention(x, self.attn, mask)
        if self.conv is None:
            h = T.pool_positions(context, "avg", mask)
        else:
            mode = "avg" if self.config.variant == "s_avg" else "max"
            h = conv_encode(context, self.conv, mode, lengths)
        if training:
            if rng is None:
                raise ConfigurationError("training-mode forward needs an rng for dropout")
            h = T.dropout(h, self.config.dropout, rng, training=True)
        return T.add(T.matmul(h, self.head_w), self.head_b)


def pad_batch(sequences: Sequence[Sequence[int]], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with PAD. Sequences shorter than ``min_len`` are
    padded up to it and the padding counted as real tokens."""
    lengths = np.array([max(len(s), min_len) for s in sequences], dtype=np.int64)
    ids = np.full((len(sequences), int(lengths.max())), PAD, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
    return ids, lengths


def predict(review: TokenizedReview, model: HelpfulnessModel, training: bool = False,
            rng: Optional[RngStream] = None) -> float:
    """Raw score for one review. Clamp to [0, 1] before reporting."""
    ids, lengths = pad_batch([review.token_ids], model.min_length)
    return float(model.forward(ids, lengths, training, rng).data[0])


def predict_batch(model: HelpfulnessModel, reviews: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
    """Inference-mode raw scores in input order. Reviews are bucketed by length
    internally to cut padding."""
    order = sorted(range(len(reviews)), key=lambda i: len(reviews[i]))
    out = np.empty(len(reviews))
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        ids, lengths = pad_batch([reviews[i] for i in chunk], model.min_length)
        out[chunk] = model.forward(ids, lengths).data
    return out


def train_epoch(model: HelpfulnessModel, dataset: Sequence, batch_size: int,
                states: Sequence[AdamState], rng: RngStream) -> float:
    """One shuffled pass of mini-batch Adam on MSE. Returns the mean loss.

    ``dataset`` items need ``.tokens.token_ids`` and ``.score``.
    """
    if not dataset:
        raise ConfigurationError("cannot train on an empty dataset")
    params = model.parameters()
    order = rng.permutation(len(dataset))
    total = 0.0
    for batch_no, start in enumerate(range(0, len(order), batch_size)):
        batch = [dataset[i] for i in order[start:start + batch_size]]
        ids, lengths = pad_batch([ex.tokens.token_ids for ex in batch], model.min_length)
        targets = np.array([ex.score for ex in batch], dtype=np.float64)
        loss = T.mse_loss(model.forward(ids, lengths, training=True, rng=rng), targets)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at batch {batch_no}")
        T.backward(loss)
        adam_step(params, states)
        total += value * len(batch)
    return total / len(dataset)


# -- checkpoints -----------------------------------------------------------------------------

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path, model: HelpfulnessModel, vocab: Vocabulary, meta: Optional[dict] = None) -> None:
    """Write config, vocabulary and every parameter array to a zip archive.
    Output bytes depend only on the inputs."""
    header = {
        "model_config": model.config.to_dict(),
        "model_fingerprint": model.config.fingerprint(),
        "vocab_fingerprint": vocab.fingerprint(),
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "header.json", json.dumps(header, sort_keys=True, indent=2).encode())
        _zip_write(zf, "vocab.txt", "".join(t + "\n" for t in vocab.id_to_token).encode("utf-8"))
        for name, t in model.named_parameters(include_frozen=True).items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(t.data, order="C"), allow_pickle=False)
            _zip_write(zf, f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path) -> tuple[HelpfulnessModel, Vocabulary, dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            tokens = zf.read("vocab.txt").decode("utf-8").split("\n")[:-1]
            arrays = {
                name[len("params/"):-len(".npy")]: np.lib.format.read_array(io.BytesIO(zf.read(name)))
                for name in zf.namelist() if name.startswith("params/")
            }
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a valid checkpoint ({exc})") from exc
    config = ModelConfig.from_dict(header["model_config"])
    vocab = Vocabulary(tokens)
    if vocab.fingerprint() != header["vocab_fingerprint"]:
        raise FormatError(f"{path}: vocabulary does not match its recorded fingerprint")
    model = HelpfulnessModel.initialize(config, np.random.default_rng(0))
    params = model.named_parameters(include_frozen=True)
    if set(params) != set(arrays):
        raise FormatError(f"{path}: parameter set {sorted(arrays)} does not match the model")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise FormatError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name].astype(np.float64, copy=False)
    return model, vocab, header
