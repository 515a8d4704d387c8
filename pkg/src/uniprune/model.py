"""Toy LLaMA-style decoder LM with structured pruning hooks.

Pre-norm blocks: RMS norm, rotary attention, SiLU-gated FFN, no biases.
Two mask families control structure:

* head masks, one scalar per attention head, multiply each head's attention
  output before the output projection (equivalent to scaling that head's
  block of ``w_v``);
* channel masks, one scalar per FFN intermediate channel, multiply both the
  gate and up projection outputs before the activation.  Applying the mask on
  each pre-activation path (rather than once on the gated product) is what
  makes fusing the mask into the columns of ``w_gate`` and ``w_up`` exact for
  fractional mask values, since SiLU is nonlinear.

LoRA adapters (``W + left @ right``, ``left`` zero-initialized) attach to all
seven projection matrices of every block, so a model with all-ones masks and
fresh adapters is bit-identical to the dense model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from uniprune.autodiff import Graph

Array = np.ndarray

CAUSAL_NEG = -1e30  # additive score for future positions; finite so checks pass
ROPE_BASE = 10000.0
ADAPTED_MATRICES = ("w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_head: int = 16
    d_hidden: int = 64
    d_ff: int = 172
    vocab_size: int = 256
    seq_len: int = 128
    norm_eps: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("n_layers", "n_heads", "d_head", "d_hidden", "d_ff",
                     "vocab_size", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_head % 2 != 0:
            raise ValueError("d_head must be even for rotary embeddings")

    @property
    def attn_inner(self) -> int:
        # equals d_hidden for the dense defaults; smaller once heads are pruned
        return self.n_heads * self.d_head

    @property
    def head_cost(self) -> int:
        """Parameters freed by removing one attention head (q, k, v, o slices)."""
        return 4 * self.d_hidden * self.d_head

    @property
    def channel_cost(self) -> int:
        """Parameters freed by removing one FFN channel (gate, up, down slices)."""
        return 3 * self.d_hidden

    def param_count(self) -> int:
        per_layer = (4 * self.d_hidden * self.attn_inner
                     + 3 * self.d_hidden * self.d_ff
                     + 2 * self.d_hidden)
        return (2 * self.vocab_size * self.d_hidden
                + self.n_layers * per_layer
                + self.d_hidden)


@dataclass
class LayerParams:
    w_q: Array
    w_k: Array
    w_v: Array
    w_o: Array
    w_gate: Array
    w_up: Array
    w_down: Array
    attn_gain: Array
    ffn_gain: Array


@dataclass
class ModelParams:
    embed: Array            # (vocab, d_hidden)
    layers: list[LayerParams]
    final_gain: Array       # (d_hidden,)
    w_out: Array            # (d_hidden, vocab)

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        dh, ff, inner = cfg.d_hidden, cfg.d_ff, cfg.attn_inner
        std = 0.02
        res_std = std / np.sqrt(2.0 * cfg.n_layers)  # residual branches
        layers = []
        for _ in range(cfg.n_layers):
            layers.append(LayerParams(
                w_q=rng.normal(0.0, std, (dh, inner)),
                w_k=rng.normal(0.0, std, (dh, inner)),
                w_v=rng.normal(0.0, std, (dh, inner)),
                w_o=rng.normal(0.0, res_std, (inner, dh)),
                w_gate=rng.normal(0.0, std, (dh, ff)),
                w_up=rng.normal(0.0, std, (dh, ff)),
                w_down=rng.normal(0.0, res_std, (ff, dh)),
                attn_gain=np.ones(dh),
                ffn_gain=np.ones(dh),
            ))
        return cls(
            embed=rng.normal(0.0, std, (cfg.vocab_size, dh)),
            layers=layers,
            final_gain=np.ones(dh),
            w_out=rng.normal(0.0, std, (dh, cfg.vocab_size)),
        )

    def named_tensors(self) -> Iterator[tuple[str, Array]]:
        yield "embed", self.embed
        for i, layer in enumerate(self.layers):
            for name in (*ADAPTED_MATRICES, "attn_gain", "ffn_gain"):
                yield f"layers.{i}.{name}", getattr(layer, name)
        yield "final_gain", self.final_gain
        yield "w_out", self.w_out

    def copy(self) -> "ModelParams":
        layers = [LayerParams(**{k: np.array(getattr(l, k))
                                 for k in LayerParams.__dataclass_fields__})
                  for l in self.layers]
        return ModelParams(np.array(self.embed), layers,
                           np.array(self.final_gain), np.array(self.w_out))

    def count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


@dataclass
class MaskSet:
    head: Array     # (n_layers, n_heads)
    channel: Array  # (n_layers, d_ff)

    @classmethod
    def ones(cls, cfg: ModelConfig) -> "MaskSet":
        return cls(np.ones((cfg.n_layers, cfg.n_heads)),
                   np.ones((cfg.n_layers, cfg.d_ff)))

    def copy(self) -> "MaskSet":
        return MaskSet(np.array(self.head), np.array(self.channel))

    def validate(self) -> None:
        for arr, kind in ((self.head, "head"), (self.channel, "channel")):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{kind} masks outside [0, 1]")


@dataclass
class LoraPair:
    left: Array   # (d_in, rank), zero-initialized
    right: Array  # (rank, d_out), small gaussian

    def delta(self) -> Array:
        return self.left @ self.right


@dataclass
class LoraSet:
    layers: list[dict[str, LoraPair]]
    rank: int

    @classmethod
    def init(cls, cfg: ModelConfig, rank: int, rng: np.random.Generator) -> "LoraSet":
        if rank < 1:
            raise ValueError("lora rank must be positive")
        dims = {"w_q": (cfg.d_hidden, cfg.attn_inner), "w_k": (cfg.d_hidden, cfg.attn_inner),
                "w_v": (cfg.d_hidden, cfg.attn_inner), "w_o": (cfg.attn_inner, cfg.d_hidden),
                "w_gate": (cfg.d_hidden, cfg.d_ff), "w_up": (cfg.d_hidden, cfg.d_ff),
                "w_down": (cfg.d_ff, cfg.d_hidden)}
        layers = []
        for _ in range(cfg.n_layers):
            layers.append({name: LoraPair(np.zeros((d_in, rank)),
                                          rng.normal(0.0, 0.01, (rank, d_out)))
                           for name, (d_in, d_out) in dims.items()})
        return cls(layers, rank)

    def named_tensors(self) -> Iterator[tuple[str, Array]]:
        for i, layer in enumerate(self.layers):
            for name, pair in layer.items():
                yield f"lora.{i}.{name}.left", pair.left
                yield f"lora.{i}.{name}.right", pair.right

    def copy(self) -> "LoraSet":
        return LoraSet([{k: LoraPair(np.array(p.left), np.array(p.right))
                         for k, p in layer.items()} for layer in self.layers],
                       self.rank)


def apply_lora(params: ModelParams, lora: LoraSet | None) -> ModelParams:
    """Merge adapters into the base weights (W + left @ right); returns a copy."""
    out = params.copy()
    if lora is None:
        return out
    for i, layer in enumerate(lora.layers):
        for name, pair in layer.items():
            base = getattr(out.layers[i], name)
            setattr(out.layers[i], name, base + pair.delta())
    return out


# -- graph assembly ------------------------------------------------------------


def rope_tables(cfg: ModelConfig, seq_len: int | None = None) -> tuple[Array, Array]:
    seq = cfg.seq_len if seq_len is None else seq_len
    half = cfg.d_head // 2
    inv_freq = ROPE_BASE ** (-np.arange(half) / half)
    angles = np.arange(seq)[:, None] * inv_freq
    return np.cos(angles), np.sin(angles)


def causal_bias(seq_len: int) -> Array:
    return np.triu(np.full((seq_len, seq_len), CAUSAL_NEG), k=1)


def add_weight_params(g: Graph, params: ModelParams, trainable: bool = False,
                      prefix: str = "") -> dict[str, int]:
    return {prefix + name: g.parameter(prefix + name, tensor, trainable=trainable)
            for name, tensor in params.named_tensors()}


def add_mask_params(g: Graph, masks: MaskSet, trainable: bool = True) -> dict[str, int]:
    ids = {}
    for i in range(masks.head.shape[0]):
        ids[f"mask_head.{i}"] = g.parameter(f"mask_head.{i}", masks.head[i],
                                            trainable=trainable)
        ids[f"mask_channel.{i}"] = g.parameter(f"mask_channel.{i}", masks.channel[i],
                                               trainable=trainable)
    return ids


def add_lora_params(g: Graph, lora: LoraSet, trainable: bool = True) -> dict[str, int]:
    return {name: g.parameter(name, tensor, trainable=trainable)
            for name, tensor in lora.named_tensors()}


def _effective_weight(g: Graph, weights: dict[str, int], lora_ids: dict[str, int] | None,
                      layer: int, name: str) -> int:
    wid = weights[f"layers.{layer}.{name}"]
    if lora_ids is None:
        return wid
    delta = g.matmul(lora_ids[f"lora.{layer}.{name}.left"],
                     lora_ids[f"lora.{layer}.{name}.right"])
    return g.add(wid, delta)


def attention_block(g: Graph, cfg: ModelConfig, x: int, layer: int,
                    weights: dict[str, int], mask_ids: dict[str, int] | None,
                    lora_ids: dict[str, int] | None, batch_size: int, seq_len: int,
                    rope_cos: Array, rope_sin: Array, bias: Array) -> int:
    b, s, h, dh = batch_size, seq_len, cfg.n_heads, cfg.d_head
    xn = g.rms_norm(x, weights[f"layers.{layer}.attn_gain"], cfg.norm_eps)

    def heads(mat: str) -> int:
        w = _effective_weight(g, weights, lora_ids, layer, mat)
        proj = g.matmul(xn, w)                       # (b, s, h*dh)
        split = g.reshape(proj, (b, s, h, dh))
        return g.transpose(split, (0, 2, 1, 3))      # (b, h, s, dh)

    q = g.rope(heads("w_q"), rope_cos, rope_sin)
    k = g.rope(heads("w_k"), rope_cos, rope_sin)
    v = heads("w_v")
    scores = g.matmul(q, g.transpose(k, (0, 1, 3, 2)))
    probs = g.affine_softmax(scores, 1.0 / np.sqrt(dh), bias)
    ctx = g.matmul(probs, v)                         # (b, h, s, dh)
    if mask_ids is not None:
        mask = g.reshape(mask_ids[f"mask_head.{layer}"], (h, 1, 1))
        ctx = g.mul(ctx, mask)
    merged = g.reshape(g.transpose(ctx, (0, 2, 1, 3)), (b, s, h * dh))
    out = g.matmul(merged, _effective_weight(g, weights, lora_ids, layer, "w_o"))
    return g.add(x, out)


def ffn_block(g: Graph, cfg: ModelConfig, x: int, layer: int,
              weights: dict[str, int], mask_ids: dict[str, int] | None,
              lora_ids: dict[str, int] | None) -> int:
    xn = g.rms_norm(x, weights[f"layers.{layer}.ffn_gain"], cfg.norm_eps)
    gate = g.matmul(xn, _effective_weight(g, weights, lora_ids, layer, "w_gate"))
    up = g.matmul(xn, _effective_weight(g, weights, lora_ids, layer, "w_up"))
    if mask_ids is not None:
        mask = mask_ids[f"mask_channel.{layer}"]
        gate = g.mul(gate, mask)
        up = g.mul(up, mask)
    inner = g.mul(g.silu(gate), up)
    out = g.matmul(inner, _effective_weight(g, weights, lora_ids, layer, "w_down"))
    return g.add(x, out)


def build_lm(g: Graph, cfg: ModelConfig, tokens: int, weights: dict[str, int],
             mask_ids: dict[str, int] | None = None,
             lora_ids: dict[str, int] | None = None,
             batch_size: int = 1, seq_len: int | None = None,
             token_embedding: int | None = None) -> tuple[int, list[int]]:
    """Assemble the forward pass; returns (logits node, per-layer hidden nodes).

    Hidden states are the post-block residual streams.  ``token_embedding``
    lets two branches over the same weights share one lookup.
    """
    seq = cfg.seq_len if seq_len is None else seq_len
    cos, sin = rope_tables(cfg, seq)
    bias = causal_bias(seq)
    x = token_embedding if token_embedding is not None else g.embedding(weights["embed"], tokens)
    hiddens = []
    for layer in range(cfg.n_layers):
        x = attention_block(g, cfg, x, layer, weights, mask_ids, lora_ids,
                            batch_size, seq, cos, sin, bias)
        x = ffn_block(g, cfg, x, layer, weights, mask_ids, lora_ids)
        hiddens.append(x)
    final = g.rms_norm(x, weights["final_gain"], cfg.norm_eps)
    logits = g.matmul(final, weights["w_out"])
    return logits, hiddens


class LmForward:
    """Reusable forward evaluator for a fixed (batch, seq) shape.

    Builds the graph once; ``load`` swaps in parameter values, ``__call__``
    binds tokens and returns (logits, hiddens) as arrays.
    """

    def __init__(self, cfg: ModelConfig, batch_size: int, seq_len: int | None = None,
                 masked: bool = True, lora_rank: int = 0) -> None:
        from uniprune.autodiff import forward as _fwd
        self._fwd = _fwd
        self.cfg = cfg
        self.batch_size = batch_size
        self.seq_len = cfg.seq_len if seq_len is None else seq_len
        self.masked = masked
        self.lora_rank = lora_rank
        g = Graph()
        tokens = g.placeholder("tokens", (batch_size, self.seq_len), integer=True)
        rng = np.random.default_rng(0)
        weights = add_weight_params(g, ModelParams.init(cfg, rng))
        mask_ids = add_mask_params(g, MaskSet.ones(cfg), trainable=False) if masked else None
        lora_ids = None
        if lora_rank > 0:
            lora_ids = add_lora_params(g, LoraSet.init(cfg, lora_rank, rng),
                                       trainable=False)
        self.graph = g
        self.tokens = tokens
        self.logits, self.hiddens = build_lm(g, cfg, tokens, weights, mask_ids,
                                             lora_ids, batch_size, self.seq_len)

    def load(self, params: ModelParams, masks: MaskSet | None = None,
             lora: LoraSet | None = None) -> None:
        for name, tensor in params.named_tensors():
            self.graph.set_param(name, tensor)
        if self.masked:
            m = masks if masks is not None else MaskSet.ones(self.cfg)
            for i in range(self.cfg.n_layers):
                self.graph.set_param(f"mask_head.{i}", m.head[i])
                self.graph.set_param(f"mask_channel.{i}", m.channel[i])
        elif masks is not None:
            raise ValueError("masks given but evaluator built with masked=False")
        if self.lora_rank > 0:
            if lora is None:
                raise ValueError("evaluator built with lora but none given")
            for name, tensor in lora.named_tensors():
                self.graph.set_param(name, tensor)
        elif lora is not None:
            raise ValueError("lora given but evaluator built with lora_rank=0")

    def __call__(self, tokens: Array) -> tuple[Array, list[Array]]:
        values = self._fwd(self.graph, {"tokens": tokens})
        return values[self.logits], [values[h] for h in self.hiddens]


_FORWARD_CACHE: dict[tuple, LmForward] = {}


def forward_lm(cfg: ModelConfig, params: ModelParams, masks: MaskSet | None,
               lora: LoraSet | None, tokens: Array) -> tuple[Array, list[Array]]:
    """One-shot masked forward; caches one evaluator per (config, shape, kind)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError("tokens must be (batch, seq)")
    key = (cfg, tokens.shape, masks is not None, 0 if lora is None else lora.rank)
    ev = _FORWARD_CACHE.get(key)
    if ev is None:
        ev = LmForward(cfg, tokens.shape[0], tokens.shape[1],
                       masked=masks is not None,
                       lora_rank=0 if lora is None else lora.rank)
        if len(_FORWARD_CACHE) > 16:
            _FORWARD_CACHE.clear()
        _FORWARD_CACHE[key] = ev
    ev.load(params, masks, lora)
    return ev(tokens)
