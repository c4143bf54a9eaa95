"""Full network assembly: embeddings, twin BiLSTMs, both attention blocks,
softmax output heads, and the joint aspect+opinion objective.

Aspect labels are (B, I, O); distant opinion labels are (OP, O). The aspect
head consumes the concatenation of the history-aware aspect feature and the
attention-distilled opinion summary; the opinion head consumes the raw
opinion hidden state. Ablation flags reduce the network to its Table-style
variants: without history attention the raw aspect state is used directly,
without the selective transformation the bilinear attention runs over the
raw opinion states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Sentence
from .errors import ConfigError, DataError, UsageError
from .history import HistoryCache, ThaParams, cache_push, tha_step
from .lstm import BiLstmParams, LstmParams, bilstm_encode
from .transform import StnParams, bilinear_attention, selective_transform

ASPECT_LABELS = ("B", "I", "O")
OPINION_LABELS = ("OP", "O")
ASPECT_INDEX = {label: k for k, label in enumerate(ASPECT_LABELS)}
OPINION_INDEX = {label: k for k, label in enumerate(OPINION_LABELS)}

PROBABILITY_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; defaults follow the published full-size setting."""

    dim_w: int = 300
    dim_ah: int = 100          # per-direction aspect hidden size
    dim_oh: int = 30           # per-direction opinion hidden size
    history: int = 5           # cached aspect detections
    dropout: float = 0.5
    learning_rate: float = 0.07
    epochs: int = 40
    seed: int = 1
    use_tha: bool = True
    use_stn: bool = True
    train_embeddings: bool = True

    def __post_init__(self):
        if min(self.dim_w, self.dim_ah, self.dim_oh, self.history) < 1:
            raise ConfigError("dimensions and history window must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1): {self.dropout}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive: {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epoch count must be positive: {self.epochs}")

    @property
    def aspect_width(self) -> int:
        return 2 * self.dim_ah

    @property
    def opinion_width(self) -> int:
        return 2 * self.dim_oh


@dataclass(frozen=True)
class ModelParams:
    """Every learnable tensor, grouped the way the network consumes them."""

    embedding: ad.Tensor
    aspect_lstm: BiLstmParams
    opinion_lstm: BiLstmParams
    tha: ThaParams
    stn: StnParams
    aspect_head_W: ad.Tensor
    aspect_head_b: ad.Tensor
    opinion_head_W: ad.Tensor
    opinion_head_b: ad.Tensor

    def named(self) -> dict[str, ad.Tensor]:
        """Stable name -> tensor mapping (also the checkpoint order)."""
        out = {"embedding": self.embedding}
        for tag, bi in (("aspect", self.aspect_lstm), ("opinion", self.opinion_lstm)):
            for direction, p in (("fw", bi.forward), ("bw", bi.backward)):
                out[f"{tag}_{direction}_W"] = p.W
                out[f"{tag}_{direction}_U"] = p.U
                out[f"{tag}_{direction}_b"] = p.b
        out["tha_W1"] = self.tha.W1
        out["tha_W2"] = self.tha.W2
        out["tha_W3"] = self.tha.W3
        out["tha_v"] = self.tha.v
        out["stn_W4"] = self.stn.W4
        out["stn_W5"] = self.stn.W5
        out["stn_bi_W"] = self.stn.W_bi
        out["stn_bi_b"] = self.stn.b_bi
        out["head_aspect_W"] = self.aspect_head_W
        out["head_aspect_b"] = self.aspect_head_b
        out["head_opinion_W"] = self.opinion_head_W
        out["head_opinion_b"] = self.opinion_head_b
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, ad.Tensor]) -> "ModelParams":
        def lstm(tag, direction):
            return LstmParams(
                W=tensors[f"{tag}_{direction}_W"],
                U=tensors[f"{tag}_{direction}_U"],
                b=tensors[f"{tag}_{direction}_b"],
            )

        try:
            return cls(
                embedding=tensors["embedding"],
                aspect_lstm=BiLstmParams(lstm("aspect", "fw"), lstm("aspect", "bw")),
                opinion_lstm=BiLstmParams(lstm("opinion", "fw"), lstm("opinion", "bw")),
                tha=ThaParams(tensors["tha_W1"], tensors["tha_W2"],
                              tensors["tha_W3"], tensors["tha_v"]),
                stn=StnParams(tensors["stn_W4"], tensors["stn_W5"],
                              tensors["stn_bi_W"], tensors["stn_bi_b"]),
                aspect_head_W=tensors["head_aspect_W"],
                aspect_head_b=tensors["head_aspect_b"],
                opinion_head_W=tensors["head_opinion_W"],
                opinion_head_b=tensors["head_opinion_b"],
            )
        except KeyError as missing:
            raise DataError(f"missing model tensor: {missing}") from None

    def step(self, grads: ad.GradientMap, learning_rate: float,
             train_embeddings: bool = True) -> "ModelParams":
        """One SGD update; returns new params (tensors are immutable)."""
        updated = {}
        for name, tensor in self.named().items():
            grad = grads.get(name)
            if grad is None or (name == "embedding" and not train_embeddings):
                updated[name] = tensor
            else:
                fresh = ad.Tensor._wrap(tensor.data - learning_rate * grad.data)
                fresh.data.setflags(write=False)
                fresh.name = name
                updated[name] = fresh
        return ModelParams.from_named(updated)


def expected_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    aw, ow = config.aspect_width, config.opinion_width
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, config.dim_w)}
    for tag, n in (("aspect", config.dim_ah), ("opinion", config.dim_oh)):
        for direction in ("fw", "bw"):
            shapes[f"{tag}_{direction}_W"] = (4 * n, config.dim_w)
            shapes[f"{tag}_{direction}_U"] = (4 * n, n)
            shapes[f"{tag}_{direction}_b"] = (4 * n,)
    shapes.update({
        "tha_W1": (aw, aw), "tha_W2": (aw, aw), "tha_W3": (aw, aw), "tha_v": (aw,),
        "stn_W4": (ow, aw), "stn_W5": (ow, ow), "stn_bi_W": (aw, ow), "stn_bi_b": (1,),
        "head_aspect_W": (len(ASPECT_LABELS), aw + ow),
        "head_aspect_b": (len(ASPECT_LABELS),),
        "head_opinion_W": (len(OPINION_LABELS), ow),
        "head_opinion_b": (len(OPINION_LABELS),),
    })
    return shapes


def init_model(config: ModelConfig, vocab_size: int, embeddings: np.ndarray) -> ModelParams:
    """Seeded initialization: Glorot uniform per LSTM gate block, U(-0.2, 0.2)
    for all other weight matrices, zero biases, embedding rows copied."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape != (vocab_size, config.dim_w):
        raise ConfigError(
            f"embedding shape {embeddings.shape} != ({vocab_size}, {config.dim_w})")
    rng = np.random.default_rng(config.seed)

    def uniform(shape, name):
        return ad.Tensor(rng.uniform(-0.2, 0.2, size=shape), name=name)

    def lstm(tag, direction, dim_h):
        def glorot(fan_out, fan_in, blocks, name):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            stacked = np.concatenate(
                [rng.uniform(-bound, bound, size=(fan_out, fan_in)) for _ in range(blocks)])
            return ad.Tensor(stacked, name=name)

        prefix = f"{tag}_{direction}"
        return LstmParams(
            W=glorot(dim_h, config.dim_w, 4, f"{prefix}_W"),
            U=glorot(dim_h, dim_h, 4, f"{prefix}_U"),
            b=ad.zeros(4 * dim_h, name=f"{prefix}_b"),
        )

    aw, ow = config.aspect_width, config.opinion_width
    return ModelParams(
        embedding=ad.Tensor(embeddings, name="embedding"),
        aspect_lstm=BiLstmParams(lstm("aspect", "fw", config.dim_ah),
                                 lstm("aspect", "bw", config.dim_ah)),
        opinion_lstm=BiLstmParams(lstm("opinion", "fw", config.dim_oh),
                                  lstm("opinion", "bw", config.dim_oh)),
        tha=ThaParams(
            W1=uniform((aw, aw), "tha_W1"),
            W2=uniform((aw, aw), "tha_W2"),
            W3=uniform((aw, aw), "tha_W3"),
            v=uniform(aw, "tha_v"),
        ),
        stn=StnParams(
            W4=uniform((ow, aw), "stn_W4"),
            W5=uniform((ow, ow), "stn_W5"),
            W_bi=uniform((aw, ow), "stn_bi_W"),
            b_bi=ad.zeros(1, name="stn_bi_b"),
        ),
        aspect_head_W=uniform((len(ASPECT_LABELS), aw + ow), "head_aspect_W"),
        aspect_head_b=ad.zeros(len(ASPECT_LABELS), name="head_aspect_b"),
        opinion_head_W=uniform((len(OPINION_LABELS), ow), "head_opinion_W"),
        opinion_head_b=ad.zeros(len(OPINION_LABELS), name="head_opinion_b"),
    )


@dataclass
class SentenceOutput:
    """Per-token distributions plus both attention traces for one sentence."""

    aspect_probs: list[ad.Tensor]           # T tensors of shape (3,)
    opinion_probs: list[ad.Tensor]          # T tensors of shape (2,)
    attention: list[ad.Tensor]              # T tensors of shape (T,), row t = weights w_{.,t}
    tha_scores: list[ad.Tensor | None]      # per-position window scores (None when empty)

    @property
    def size(self) -> int:
        return len(self.aspect_probs)

    @property
    def aspect_matrix(self) -> np.ndarray:
        return np.stack([p.data for p in self.aspect_probs])

    @property
    def opinion_matrix(self) -> np.ndarray:
        return np.stack([p.data for p in self.opinion_probs])

    @property
    def attention_matrix(self) -> np.ndarray:
        return np.stack([w.data for w in self.attention])

    @property
    def tha_score_arrays(self) -> list[np.ndarray]:
        return [np.zeros(0) if s is None else s.data for s in self.tha_scores]


def _dropout(x: ad.Tensor, rate: float, rng: np.random.Generator,
             tape: ad.Tape | None) -> ad.Tensor:
    if rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    mask = ad.Tensor(keep / (1.0 - rate))  # inverted dropout: inference needs no rescaling
    return ad.mul(x, mask, tape)


def forward_sentence(params: ModelParams, config: ModelConfig, sentence: Sentence,
                     mode: str = "infer", tape: ad.Tape | None = None,
                     rng: np.random.Generator | None = None) -> SentenceOutput:
    """Run the full pipeline over one sentence.

    ``mode='train'`` applies dropout (requires ``rng``) to the LSTM input
    embeddings, the final aspect feature, and the opinion feature entering
    its head. Recording happens iff ``tape`` is given.
    """
    if mode not in ("train", "infer"):
        raise UsageError(f"mode must be 'train' or 'infer', got {mode!r}")
    rate = config.dropout if mode == "train" else 0.0
    if rate > 0.0 and rng is None:
        raise UsageError("train mode with dropout needs a random generator")
    if sentence.token_ids is None:
        raise DataError("sentence has no token ids; map it through a vocabulary first")
    vocab_size = params.embedding.shape[0]
    for tid in sentence.token_ids:
        if not 0 <= tid < vocab_size:
            raise DataError(f"token id {tid} out of range for vocabulary of {vocab_size}")

    embedded = [ad.select_row(params.embedding, tid, tape) for tid in sentence.token_ids]
    aspect_in = [_dropout(e, rate, rng, tape) for e in embedded]
    opinion_in = [_dropout(e, rate, rng, tape) for e in embedded]
    aspect_hidden = bilstm_encode(aspect_in, params.aspect_lstm, tape)
    opinion_hidden = bilstm_encode(opinion_in, params.opinion_lstm, tape)

    cache = HistoryCache(config.history)
    aspect_probs, opinion_probs, attention, tha_scores = [], [], [], []
    for t in range(len(sentence)):
        if config.use_tha:
            aware, scores = tha_step(aspect_hidden[t], cache, params.tha, tape)
            cache_push(cache, aspect_hidden[t], aware)
        else:
            aware, scores = aspect_hidden[t], None
        if config.use_stn:
            pool = selective_transform(aware, opinion_hidden, params.stn, tape)
        else:
            pool = opinion_hidden
        weights, summary = bilinear_attention(aware, pool, params.stn, tape)

        feature = _dropout(ad.concat((aware, summary), tape), rate, rng, tape)
        aspect_logits = ad.add(ad.matvec(params.aspect_head_W, feature, tape),
                               params.aspect_head_b, tape)
        opinion_feature = _dropout(opinion_hidden[t], rate, rng, tape)
        opinion_logits = ad.add(ad.matvec(params.opinion_head_W, opinion_feature, tape),
                                params.opinion_head_b, tape)

        aspect_probs.append(ad.softmax(aspect_logits, tape))
        opinion_probs.append(ad.softmax(opinion_logits, tape))
        attention.append(weights)
        tha_scores.append(scores)
    return SentenceOutput(aspect_probs, opinion_probs, attention, tha_scores)


def _task_loss(probs: list[ad.Tensor], labels, index: dict[str, int],
               tape: ad.Tape | None) -> ad.Tensor:
    picked = []
    for prob, label in zip(probs, labels):
        try:
            picked.append(ad.pick(prob, index[label], tape))
        except KeyError:
            raise DataError(f"unknown gold label {label!r}") from None
    logs = ad.log(ad.concat(picked, tape), tape, floor=PROBABILITY_FLOOR)
    return ad.scale(ad.mean(logs, tape), -1.0, tape)


def joint_loss(output: SentenceOutput, aspect_labels, opinion_labels,
               tape: ad.Tape | None = None) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Mean token-level cross-entropy per task; returns (joint, aspect, opinion)."""
    if len(aspect_labels) != output.size or len(opinion_labels) != output.size:
        raise UsageError("label sequences must match the sentence length")
    aspect = _task_loss(output.aspect_probs, aspect_labels, ASPECT_INDEX, tape)
    opinion = _task_loss(output.opinion_probs, opinion_labels, OPINION_INDEX, tape)
    return ad.add(aspect, opinion, tape), aspect, opinion
