"""Mask-distribution exports: per-unit values and per-layer histograms."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import MaskSet

Array = np.ndarray

BIN_WIDTH = 0.05
BIN_EDGES = np.round(np.arange(0.0, 1.0 + BIN_WIDTH / 2, BIN_WIDTH), 10)


@dataclass
class MaskStats:
    head_hist: Array        # (n_layers, n_bins); last bin includes 1.0
    channel_hist: Array
    head_mean: Array        # (n_layers,)
    channel_mean: Array
    retained_heads: Array   # units above 0.5, per layer
    retained_channels: Array

    def validate(self, masks: MaskSet) -> None:
        if int(self.head_hist.sum()) != masks.head.size:
            raise ValueError("head histogram mass != mask count")
        if int(self.channel_hist.sum()) != masks.channel.size:
            raise ValueError("channel histogram mass != mask count")

    def as_dict(self) -> dict:
        return {"bin_edges": BIN_EDGES.tolist(),
                "head_hist": self.head_hist.tolist(),
                "channel_hist": self.channel_hist.tolist(),
                "head_mean": self.head_mean.tolist(),
                "channel_mean": self.channel_mean.tolist(),
                "retained_heads": self.retained_heads.tolist(),
                "retained_channels": self.retained_channels.tolist()}


def mask_stats(masks: MaskSet) -> MaskStats:
    def hist(rows: Array) -> Array:
        return np.stack([np.histogram(r, bins=BIN_EDGES)[0] for r in rows])
    stats = MaskStats(
        head_hist=hist(masks.head), channel_hist=hist(masks.channel),
        head_mean=masks.head.mean(axis=1), channel_mean=masks.channel.mean(axis=1),
        retained_heads=(masks.head > 0.5).sum(axis=1),
        retained_channels=(masks.channel > 0.5).sum(axis=1))
    stats.validate(masks)
    return stats


def export_mask_stats(masks: MaskSet, path: str | Path) -> MaskStats:
    """Write one row per prunable unit; histograms ride along in the summary."""
    stats = mask_stats(masks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "layer", "unit", "value"])
        for kind, rows in (("head", masks.head), ("channel", masks.channel)):
            for layer, row in enumerate(rows):
                for unit, value in enumerate(row):
                    writer.writerow([kind, layer, unit, f"{value:.10g}"])
    return stats
