"""Iteration studies: train one model per ICGA iteration count and compare them."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .data import SceneSample
from .evaluate import evaluate_model
from .train import load_checkpoint, train

STUDY_FIELDS = ["iterations", "psnr", "ssim", "depth_error", "train_seconds"]


def iteration_study(cfg: RunConfig, scenes: list[SceneSample], iterations, out_dir,
                    eval_views=None, log: Callable[[str], None] | None = None) -> list[dict]:
    """Train a fresh model for every entry of ``iterations`` with everything else fixed.

    Each model sees the same seed, scenes, step schedule and training views;
    scores are means over ``scenes`` on ``eval_views`` (default: the scenes'
    target views).  Iteration count 0 trains with alignment bypassed.
    """
    rows = []
    for it in iterations:
        run_cfg = replace(cfg, iterations=int(it), out_dir=str(Path(out_dir) / f"iterations_{it}"))
        t0 = time.perf_counter()
        ckpt = train(run_cfg, scenes, resume=False, log=log)
        seconds = time.perf_counter() - t0
        model, _, _, _ = load_checkpoint(ckpt)
        scored = evaluate_model(model, scenes, run_cfg, views=eval_views)
        row = {"iterations": int(it), "train_seconds": seconds, "scenes": scored}
        for k in ("psnr", "ssim", "depth_error"):
            row[k] = float(np.mean([r[k] for r in scored]))
        rows.append(row)
        if log:
            log(f"iterations={it}: psnr {row['psnr']:.3f}  depth error {row['depth_error']:.4f}")
    return rows


def format_study(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"{'iterations':>10}{'PSNR':>9}{'SSIM':>8}{'depth err':>11}{'train s':>9}\n")
    for r in rows:
        buf.write(f"{r['iterations']:>10d}{r['psnr']:>9.3f}{r['ssim']:>8.3f}"
                  f"{r['depth_error']:>11.4f}{r['train_seconds']:>9.0f}\n")
    return buf.getvalue()


def write_study(rows: list[dict], path) -> None:
    """CSV of the study at ``path`` and the text table beside it (``.txt``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STUDY_FIELDS)
        for r in rows:
            writer.writerow([r["iterations"]] + [f"{r[k]:.6f}" for k in STUDY_FIELDS[1:]])
    path.with_suffix(".txt").write_text(format_study(rows))
