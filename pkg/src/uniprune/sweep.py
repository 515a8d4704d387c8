"""Sweep drivers: one pruning run per value of a single knob.

Used for the decay-rate and proximal-interval studies.  Each run is fully
isolated (fresh trainer state, seeded from the base config), and one failed
run is recorded without aborting the rest.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .corpus import Corpus
from .model import ModelParams
from .pipeline import run_pruning
from .trainer import RunConfig

SWEEPABLE = ("decay_rate", "interval_start", "target_sparsity", "sparsity_lr",
             "sparsity_penalty_lr", "resource_penalty_lr", "seed")


def sweep(parameter: str, values: list, base_cfg: RunConfig, teacher: ModelParams,
          corpus: Corpus, out_dir: str | Path | None = None,
          log_every: int = 0) -> list[dict]:
    """Run the pipeline once per value; returns one report dict per run."""
    if parameter not in SWEEPABLE:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEPABLE}")
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    reports = []
    for value in values:
        if parameter == "interval_start":
            # keep the schedule monotone when sweeping across the default end
            end = min(base_cfg.interval_end, int(value))
            cfg = dataclasses.replace(base_cfg, interval_start=int(value),
                                      interval_end=max(end, 1))
        else:
            cfg = dataclasses.replace(base_cfg, **{parameter: value})
        run_dir = None
        if out_dir is not None:
            run_dir = Path(out_dir) / f"{parameter}_{value}"
        report = {"parameter": parameter, "value": value}
        try:
            cfg.validate()
            res = run_pruning(cfg, teacher, corpus, out_dir=run_dir,
                              log_every=log_every)
            s = res.summary
            report.update({
                "final_loss": s["final_loss"],
                "achieved_sparsity": s["achieved_sparsity"],
                "resource_met": s["resource_met"],
                "masks_converged": s["masks_converged"],
                "constraint_failure": not (s["resource_met"] and s["masks_converged"]),
                "pruned_eval_ppl": s.get("pruned_eval_ppl"),
                "width_variance_trace": [r["ffn_width_var"] for r in res.train.trace],
            })
        except Exception as exc:   # isolate failures per run
            report.update({"error": f"{type(exc).__name__}: {exc}",
                           "constraint_failure": True})
        reports.append(report)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.json", "w") as fh:
            json.dump(reports, fh, indent=1, sort_keys=True)
    return reports
