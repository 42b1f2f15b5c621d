"""Loss, learning-rate schedule, training loop, and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics, model as model_mod, raygen
from .config import LossWeights, RunConfig
from .scene_io import CameraFrame

log = logging.getLogger(__name__)


def ray_loss(pred_coarse: torch.Tensor, pred_fine: torch.Tensor, gt: torch.Tensor,
             w_coarse: torch.Tensor, w_fine: torch.Tensor, lw: LossWeights,
             n_samples_coarse: int, n_samples_fine: int) -> torch.Tensor:
    """Mean over rays of squared color errors plus the empty-space L1 term.

    The L1 term sums only the per-sample weights; the epipolar slot is
    excluded, so pushing mass onto it is free.
    """
    sq_c = ((pred_coarse - gt) ** 2).sum(dim=-1)
    sq_f = ((pred_fine - gt) ** 2).sum(dim=-1)
    reg = (w_coarse[..., :n_samples_coarse].abs().sum(dim=-1)
           + w_fine[..., :n_samples_fine].abs().sum(dim=-1))
    per_ray = lw.lambda_coarse * sq_c + lw.lambda_fine * sq_f + lw.lambda_w * reg
    return per_ray.mean()


def lr_schedule(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Log-linear interpolation from lr_start down to lr_end."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_start
    frac = step / total_steps
    return math.exp(math.log(lr_start) + frac * (math.log(lr_end) - math.log(lr_start)))


@dataclass
class RayBank:
    """All training rays of a dataset, flattened into tensors."""

    origins: torch.Tensor
    dirs: torch.Tensor
    colors: torch.Tensor

    @classmethod
    def from_frames(cls, frames: list[CameraFrame], dtype=torch.float32) -> "RayBank":
        origins, dirs, colors = [], [], []
        for frame in frames:
            o, d = raygen.camera_ray_grid(frame)
            origins.append(o.reshape(-1, 3))
            dirs.append(d.reshape(-1, 3))
            colors.append(frame.image.reshape(-1, 3))
        return cls(origins=torch.as_tensor(np.concatenate(origins), dtype=dtype),
                   dirs=torch.as_tensor(np.concatenate(dirs), dtype=dtype),
                   colors=torch.as_tensor(np.concatenate(colors), dtype=dtype))

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class TrainResult:
    coarse: model_mod.RayModel
    fine: model_mod.RayModel
    config: RunConfig
    records: list[dict] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    pass


def train(frames: list[CameraFrame], config: RunConfig,
          val_frames: list[CameraFrame] | None = None,
          log_dir: str | Path | None = None) -> TrainResult:
    """Fit the model to the given frames with the configured schedule.

    Deterministic given the seed (serial CPU execution).  Aborts with
    diagnostics if the loss goes non-finite.
    """
    config.validate()
    if not frames:
        raise ValueError("training needs at least one frame")
    lw = config.loss
    if config.train.ablation.no_empty_reg:
        lw = LossWeights(lw.lambda_coarse, lw.lambda_fine, 0.0)

    coarse, fine = model_mod.build_models(config)
    params = list(dict.fromkeys(list(coarse.parameters()) + list(fine.parameters())))
    opt = torch.optim.Adam(params, lr=config.train.lr_start,
                           betas=(config.train.beta1, config.train.beta2))
    gen = torch.Generator().manual_seed(config.seed)
    bank = RayBank.from_frames(frames)
    total = config.train.iterations
    records: list[dict] = []
    writer = _LogWriter(log_dir)

    for step in range(total):
        lr = lr_schedule(step, total, config.train.lr_start, config.train.lr_end)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.randint(len(bank), (config.train.batch_rays,), generator=gen)
        out = model_mod.render_ray_batch(coarse, fine, bank.origins[idx], bank.dirs[idx],
                                         config, jitter=config.sampling.jitter,
                                         generator=gen)
        loss = ray_loss(out["coarse"]["rgb"], out["fine"]["rgb"], bank.colors[idx],
                        out["coarse"]["w"], out["fine"]["w"], lw,
                        config.sampling.d_coarse, out["t_fine"].shape[-1])
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: loss={loss.item()}, "
                f"s range=({out['fine']['s'].min():.3g}, {out['fine']['s'].max():.3g}), "
                f"lr={lr:.3g}")
        opt.zero_grad()
        loss.backward()
        opt.step()

        if step % config.train.log_every == 0 or step == total - 1:
            rec = {"step": step, "lr": lr, "loss": float(loss.item())}
            if val_frames and config.train.val_every and step % config.train.val_every == 0:
                rec["val_psnr"] = evaluate(coarse, fine, val_frames, config)["mean_psnr"]
            records.append(rec)
            writer.write(rec)

    return TrainResult(coarse=coarse, fine=fine, config=config, records=records)


class _LogWriter:
    """One human-readable line and one JSON record per log event."""

    def __init__(self, log_dir: str | Path | None):
        self.dir = Path(log_dir) if log_dir else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
            (self.dir / "log.txt").write_text("")
            (self.dir / "log.jsonl").write_text("")

    def write(self, rec: dict) -> None:
        parts = [f"step {rec['step']:>7d}", f"lr {rec['lr']:.3e}", f"loss {rec['loss']:.6f}"]
        if "val_psnr" in rec:
            parts.append(f"val_psnr {rec['val_psnr']:.2f}")
        line = "  ".join(parts)
        log.info(line)
        if self.dir:
            with open(self.dir / "log.txt", "a") as fh:
                fh.write(line + "\n")
            with open(self.dir / "log.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")


@torch.no_grad()
def render_image(coarse: model_mod.RayModel, fine: model_mod.RayModel,
                 frame: CameraFrame, config: RunConfig, chunk: int = 4096,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Render the fine-pass image and depth map for one camera pose."""
    origins, dirs = raygen.camera_ray_grid(frame)
    o = torch.as_tensor(origins.reshape(-1, 3), dtype=torch.float32)
    d = torch.as_tensor(dirs.reshape(-1, 3), dtype=torch.float32)
    rgb_parts, depth_parts = [], []
    t_e = config.epipolar.t_e
    for lo in range(0, o.shape[0], chunk):
        out = model_mod.render_ray_batch(coarse, fine, o[lo:lo + chunk], d[lo:lo + chunk],
                                         config, jitter=False)
        fine_out = out["fine"]
        rgb_parts.append(fine_out["rgb"])
        from .renderer import render_depth
        depth_parts.append(render_depth(fine_out["w"], out["t_fine"], t_e))
    h, w = frame.height, frame.width
    rgb = torch.cat(rgb_parts).reshape(h, w, 3).clamp(0, 1).numpy()
    depth = torch.cat(depth_parts).reshape(h, w).numpy()
    return rgb, depth


def evaluate(coarse: model_mod.RayModel, fine: model_mod.RayModel,
             frames: list[CameraFrame], config: RunConfig) -> dict:
    """Per-image and mean PSNR/SSIM over a split."""
    rows = []
    for i, frame in enumerate(frames):
        rgb, _ = render_image(coarse, fine, frame, config)
        rows.append({"frame": i,
                     "psnr": metrics.psnr(rgb, frame.image),
                     "ssim": metrics.ssim(rgb, frame.image)})
    return {"rows": rows,
            "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
            "mean_ssim": float(np.mean([r["ssim"] for r in rows]))}


def format_metrics_table(result: dict) -> str:
    lines = [f"{'frame':>6}  {'psnr':>8}  {'ssim':>8}"]
    for row in result["rows"]:
        lines.append(f"{row['frame']:>6}  {row['psnr']:>8.3f}  {row['ssim']:>8.4f}")
    lines.append(f"{'mean':>6}  {result['mean_psnr']:>8.3f}  {result['mean_ssim']:>8.4f}")
    return "\n".join(lines)
