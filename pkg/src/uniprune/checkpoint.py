"""Single-file model container: config, weights, masks, adapters, counts.

Everything rides in one ``.npz`` archive.  Tensors keep their dotted names;
scalars and structure travel in a JSON blob under the ``meta`` key so the
archive is self-describing and format checks stay cheap.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, LayerParams, MaskSet, LoraSet, LoraPair
from .sparsity import SparsityState

FORMAT_TAG = "uniprune-checkpoint-v1"


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    masks: MaskSet | None = None
    lora: LoraSet | None = None
    sparsity: SparsityState | None = None
    extra: dict | None = None   # free-form run metadata, JSON-encodable


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in ckpt.params.named_tensors():
        arrays[name] = tensor
    if ckpt.masks is not None:
        arrays["mask_head"] = ckpt.masks.head
        arrays["mask_channel"] = ckpt.masks.channel
    if ckpt.lora is not None:
        for name, tensor in ckpt.lora.named_tensors():
            arrays[name] = tensor
    meta = {
        "format": FORMAT_TAG,
        "config": dataclasses.asdict(ckpt.config),
        "has_masks": ckpt.masks is not None,
        "lora_rank": 0 if ckpt.lora is None else ckpt.lora.rank,
        "sparsity": None if ckpt.sparsity is None else ckpt.sparsity.as_dict(),
        "extra": ckpt.extra or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # write-then-rename so a crash cannot leave a torn file at the target
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with np.load(path) as data:
        if "meta" not in data:
            raise ValueError(f"{path} is not a model container (no meta entry)")
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported container format {meta.get('format')!r}")
        cfg = ModelConfig(**meta["config"])
        layers = []
        for i in range(cfg.n_layers):
            fields = {name: np.array(data[f"layers.{i}.{name}"])
                      for name in LayerParams.__dataclass_fields__}
            layers.append(LayerParams(**fields))
        params = ModelParams(np.array(data["embed"]), layers,
                             np.array(data["final_gain"]), np.array(data["w_out"]))
        masks = None
        if meta["has_masks"]:
            masks = MaskSet(np.array(data["mask_head"]), np.array(data["mask_channel"]))
        lora = None
        rank = meta["lora_rank"]
        if rank:
            lora_layers = []
            for i in range(cfg.n_layers):
                lora_layers.append({
                    name: LoraPair(np.array(data[f"lora.{i}.{name}.left"]),
                                   np.array(data[f"lora.{i}.{name}.right"]))
                    for name in ("w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down")})
            lora = LoraSet(lora_layers, rank)
        sparsity = None
        if meta["sparsity"] is not None:
            sparsity = SparsityState.from_dict(meta["sparsity"])
    return Checkpoint(cfg, params, masks, lora, sparsity, meta["extra"])
