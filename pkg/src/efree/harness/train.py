"""Training loop with CSV logging, rotating checkpoints and exact resume."""
from __future__ import annotations

import csv
import json
import shutil
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..geometry import CameraView
from ..model import EFreeModel, Prediction
from ..tensorcore import OptimizerState, Tensor, adam_step, load_tensors, mse, save_tensors
from .config import RunConfig
from .data import SceneSample, load_dataset
from .metrics import psnr

LOG_FIELDS = ["step", "scene", "loss", "mse", "perceptual", "psnr"]


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# forward helpers shared with evaluation
# ---------------------------------------------------------------------------

def with_bounds(cam: CameraView, cfg: RunConfig) -> CameraView:
    return replace(cam, near=cfg.near, far=cfg.far)


def predict_scene(model: EFreeModel, scene: SceneSample, cfg: RunConfig,
                  iterations: int | None = None) -> Prediction:
    refs = scene.reference_ids
    images = Tensor(scene.images[list(refs)].astype(np.float32))
    cams = [with_bounds(scene.cams[v], cfg) for v in refs]
    return model(images, cams, iterations)


def perceptual_stub(image: Tensor, target: Tensor) -> Tensor:
    """Placeholder perceptual term; contributes nothing."""
    return Tensor(np.zeros((), dtype=image.dtype))


def scene_loss(model: EFreeModel, pred: Prediction, scene: SceneSample, views, cfg: RunConfig):
    """Weighted loss over ``views`` plus a per-term breakdown for logging."""
    total_mse, total_perc, scores = None, None, []
    for v in views:
        cam = with_bounds(scene.cams[v], cfg)
        img, _, _ = model.render(pred.gaussians, cam, cfg.background)
        target = Tensor(scene.images[v].astype(img.dtype))
        m = mse(img, target)
        p = perceptual_stub(img, target)
        total_mse = m if total_mse is None else total_mse + m
        total_perc = p if total_perc is None else total_perc + p
        scores.append(psnr(np.clip(img.data, 0, 1), scene.images[v]))
    n = float(len(views))
    mse_term = total_mse * (1.0 / n)
    perc_term = total_perc * (1.0 / n)
    loss = mse_term * cfg.mse_w + perc_term * cfg.perceptual_w
    parts = {"mse": float(mse_term.item()), "perceptual": float(perc_term.item()),
             "mse_weighted": cfg.mse_w * float(mse_term.item()),
             "perceptual_weighted": cfg.perceptual_w * float(perc_term.item()),
             "psnr": float(np.mean(scores))}
    return loss, parts


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(directory, model: EFreeModel, opt: OptimizerState, step: int,
                    cfg: RunConfig) -> Path:
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    save_tensors(tmp, model.state_dict())
    names = [n for n, _ in model.named_parameters()]
    if opt.m:
        moments = {f"m.{n}": m for n, m in zip(names, opt.m)}
        moments.update({f"v.{n}": v for n, v in zip(names, opt.v)})
        save_tensors(tmp / "optimizer", moments)
    (tmp / "state.json").write_text(json.dumps({"step": step, "adam_step": opt.step}) + "\n")
    cfg.save(tmp / "config.json")
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)
    return directory


def load_checkpoint(directory, cfg: RunConfig | None = None):
    """Returns ``(model, optimizer state, step, config)``."""
    directory = Path(directory)
    if not (directory / "state.json").exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    cfg = cfg or RunConfig.load(directory / "config.json")
    model = EFreeModel(cfg.model_config(), seed=cfg.seed)
    model.load_state_dict(load_tensors(directory))
    state = json.loads((directory / "state.json").read_text())
    opt = OptimizerState(step=int(state["adam_step"]))
    if (directory / "optimizer").exists():
        moments = load_tensors(directory / "optimizer")
        names = [n for n, _ in model.named_parameters()]
        opt.m = [moments[f"m.{n}"] for n in names]
        opt.v = [moments[f"v.{n}"] for n in names]
    return model, opt, int(state["step"]), cfg


def checkpoint_dirs(out_dir) -> list[Path]:
    root = Path(out_dir) / "checkpoints"
    if not root.exists():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("step_")
                  and not p.name.endswith(".tmp"))


def latest_checkpoint(out_dir) -> Path | None:
    dirs = checkpoint_dirs(out_dir)
    return dirs[-1] if dirs else None


def _prune(out_dir, keep: int) -> None:
    for old in checkpoint_dirs(out_dir)[:-keep]:
        shutil.rmtree(old)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def scene_for_step(seed: int, step: int, n: int) -> int:
    return int(np.random.default_rng([seed, step, 7]).integers(n))


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["step"]) < upto]


def train(cfg: RunConfig, scenes: list[SceneSample] | None = None, resume: bool = True,
          log: Callable[[str], None] | None = None, log_every: int = 50) -> Path:
    """Run ``cfg.steps`` optimisation steps; returns the final checkpoint directory."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    scenes = scenes if scenes is not None else load_dataset(cfg.data_dir)
    if not scenes:
        raise ValueError("training needs at least one scene")
    for v in cfg.train_views:
        if v not in scenes[0].target_ids:
            raise ValueError(f"train view {v} is not a target view of the dataset")

    last = latest_checkpoint(out) if resume else None
    if last is not None:
        model, opt, start, _ = load_checkpoint(last, cfg)
    else:
        model, opt, start = EFreeModel(cfg.model_config(), seed=cfg.seed), OptimizerState(), 0
        last = save_checkpoint(out / "checkpoints" / "step_000000", model, opt, 0, cfg)
    params = model.parameters()

    log_path = out / "train_log.csv"
    rows = _read_log(log_path, start)
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
        for step in range(start, cfg.steps):
            idx = scene_for_step(cfg.seed, step, len(scenes))
            scene = scenes[idx]
            pred = predict_scene(model, scene, cfg)
            loss, parts = scene_loss(model, pred, scene, cfg.train_views, cfg)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at step {step}; last good checkpoint: {last}")
            loss.backward()
            for p in params:
                if p.grad is None:  # unused in this configuration (e.g. the refiner at 0 iterations)
                    p.grad = np.zeros_like(p.data)
            if any(not np.isfinite(p.grad).all() for p in params):
                raise TrainingDiverged(f"non-finite gradient at step {step}; last good checkpoint: {last}")
            adam_step(params, opt, cfg.learning_rate)
            writer.writerow({"step": step, "scene": scene.name, "loss": f"{loss.item():.8g}",
                             "mse": f"{parts['mse']:.8g}", "perceptual": f"{parts['perceptual']:.8g}",
                             "psnr": f"{parts['psnr']:.6f}"})
            done = step + 1
            if log and (done % log_every == 0 or done == cfg.steps):
                log(f"step {done:5d}  loss {loss.item():.5f}  psnr {parts['psnr']:.2f}")
            if done % cfg.checkpoint_every == 0 or done == cfg.steps:
                fh.flush()
                last = save_checkpoint(out / "checkpoints" / f"step_{done:06d}", model, opt, done, cfg)
                _prune(out, cfg.keep_checkpoints)
    return last
