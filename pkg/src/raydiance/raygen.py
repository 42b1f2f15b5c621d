"""Ray generation, distance sampling, and coordinate embeddings.

Single-ray numpy functions carry the contracts; batched torch twins of the
hot ones (stratified sampling, inverse-CDF resampling, frequency encoding)
live here too and are what the training loop uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .scene_io import CameraFrame


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(self.direction)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, got |d| = {norm}")
        if not (0.0 < self.near < self.far):
            raise ValueError("need 0 < near < far")


@dataclass
class RaySamples:
    """Sorted distances along one ray and the corresponding 3D points."""

    t: np.ndarray
    positions: np.ndarray


def rays_from_camera(frame: CameraFrame, u: int, v: int,
                     near: float = 2.0, far: float = 6.0) -> Ray:
    """The ray through pixel (u, v); (0, 0) is the top-left pixel."""
    if not (0 <= u < frame.width and 0 <= v < frame.height):
        raise ValueError(f"pixel ({u}, {v}) outside {frame.width}x{frame.height} image")
    d_cam = np.array([(u + 0.5 - frame.width / 2) / frame.focal,
                      -(v + 0.5 - frame.height / 2) / frame.focal,
                      -1.0])
    d = frame.pose[:3, :3] @ d_cam
    return Ray(origin=frame.pose[:3, 3].copy(), direction=d / np.linalg.norm(d),
               near=near, far=far)


def camera_ray_grid(frame: CameraFrame) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, shape (H, W, 3) each."""
    u, v = np.meshgrid(np.arange(frame.width), np.arange(frame.height))
    d_cam = np.stack([(u + 0.5 - frame.width / 2) / frame.focal,
                      -(v + 0.5 - frame.height / 2) / frame.focal,
                      -np.ones_like(u, dtype=np.float64)], axis=-1)
    dirs = d_cam @ frame.pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(frame.pose[:3, 3], dirs.shape).copy()
    return origins, dirs


def stratified_sample(ray: Ray, n_samples: int, jitter: bool,
                      rng: np.random.Generator | None = None) -> RaySamples:
    """One distance per equal-width bin of [near, far]; midpoints if no jitter."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    edges = np.linspace(ray.near, ray.far, n_samples + 1)
    if jitter:
        if rng is None:
            raise ValueError("jitter=True requires an rng")
        offsets = rng.random(n_samples)
    else:
        offsets = np.full(n_samples, 0.5)
    t = edges[:-1] + offsets * (edges[1:] - edges[:-1])
    return RaySamples(t=t, positions=ray.origin + t[:, None] * ray.direction)


def positional_encoding(x: np.ndarray, num_freqs: int) -> np.ndarray:
    """concat(x, sin(2^j pi x), cos(2^j pi x)) for j = 0 .. num_freqs - 1."""
    x = np.asarray(x, dtype=np.float64)
    terms = [x]
    for j in range(num_freqs):
        scaled = (2.0 ** j) * math.pi * x
        terms.append(np.sin(scaled))
        terms.append(np.cos(scaled))
    return np.concatenate(terms, axis=-1)


def hierarchical_resample(ray: Ray, coarse_w: np.ndarray, n_fine: int,
                          rng: np.random.Generator) -> RaySamples:
    """Draw fine samples by inverse CDF over the coarse bins of [near, far].

    The density is piecewise constant, proportional to ``coarse_w`` on the
    equal-width bins that stratified sampling used.  All-zero weights fall
    back to the uniform density.
    """
    coarse_w = np.asarray(coarse_w, dtype=np.float64)
    if coarse_w.ndim != 1 or coarse_w.size < 1:
        raise ValueError("coarse_w must be a nonempty vector")
    if (coarse_w < 0).any():
        raise ValueError("coarse weights must be nonnegative")
    if n_fine < 2:
        raise ValueError("need at least 2 fine samples")
    u = rng.random(n_fine)
    t = sample_from_bins(torch.linspace(ray.near, ray.far, coarse_w.size + 1, dtype=torch.float64),
                         torch.from_numpy(coarse_w)[None], torch.from_numpy(u)[None])[0].numpy()
    t = np.sort(t)
    return RaySamples(t=t, positions=ray.origin + t[:, None] * ray.direction)


# -- batched torch versions ----------------------------------------------

def sample_from_bins(edges: torch.Tensor, weights: torch.Tensor,
                     u: torch.Tensor) -> torch.Tensor:
    """Inverse-CDF draws from a per-row piecewise-constant density.

    edges: (D+1,) shared bin edges; weights: (R, D) nonnegative;
    u: (R, N) uniforms in [0, 1).  Returns (R, N) unsorted distances.
    """
    total = weights.sum(dim=-1, keepdim=True)
    uniform = torch.full_like(weights, 1.0 / weights.shape[-1])
    pdf = torch.where(total > 0, weights / total.clamp_min(1e-30), uniform)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    cdf[..., -1] = 1.0
    idx = torch.searchsorted(cdf, u.contiguous(), right=True).clamp(1, weights.shape[-1]) - 1
    cdf_lo = torch.gather(cdf, -1, idx)
    cdf_hi = torch.gather(cdf, -1, idx + 1)
    frac = (u - cdf_lo) / (cdf_hi - cdf_lo).clamp_min(1e-30)
    lo = edges[idx]
    hi = edges[idx + 1]
    return lo + frac * (hi - lo)


def stratified_sample_batch(n_rays: int, n_samples: int, near: float, far: float,
                            jitter: bool, generator: torch.Generator | None = None,
                            dtype=torch.float32) -> torch.Tensor:
    """(R, D) stratified distances shared across a ray batch."""
    edges = torch.linspace(near, far, n_samples + 1, dtype=dtype)
    if jitter:
        offsets = torch.rand(n_rays, n_samples, generator=generator, dtype=dtype)
    else:
        offsets = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    return edges[:-1] + offsets * (edges[1:] - edges[:-1])


def resample_batch(coarse_w: torch.Tensor, n_fine: int, near: float, far: float,
                   jitter: bool = True,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Batched inverse-CDF resampling over the coarse bins; rows sorted.

    With jitter off the draws are the midpoints of equal CDF strata, so
    evaluation renders are deterministic regardless of global RNG state.
    """
    n_rays, n_coarse = coarse_w.shape
    edges = torch.linspace(near, far, n_coarse + 1, dtype=coarse_w.dtype)
    if jitter:
        u = torch.rand(n_rays, n_fine, generator=generator, dtype=coarse_w.dtype)
    else:
        mid = (torch.arange(n_fine, dtype=coarse_w.dtype) + 0.5) / n_fine
        u = mid.expand(n_rays, n_fine)
    t = sample_from_bins(edges, coarse_w, u)
    return torch.sort(t, dim=-1).values


def encode_points(positions: torch.Tensor, num_freqs: int) -> torch.Tensor:
    """Torch twin of positional_encoding, applied along the last axis."""
    terms = [positions]
    for j in range(num_freqs):
        scaled = (2.0 ** j) * math.pi * positions
        terms.append(torch.sin(scaled))
        terms.append(torch.cos(scaled))
    return torch.cat(terms, dim=-1)


def embed_ray_batch(origins: torch.Tensor, dirs: torch.Tensor, t: torch.Tensor,
                    freq_position: int, freq_direction: int) -> torch.Tensor:
    """Per-sample embedding: PE(position) ++ PE(direction), shape (R, D, E).

    The direction embedding is computed once per ray and repeated at every
    sample along it.
    """
    positions = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    pos_emb = encode_points(positions, freq_position)
    dir_emb = encode_points(dirs, freq_direction)
    dir_emb = dir_emb[:, None, :].expand(-1, t.shape[1], -1)
    return torch.cat([pos_emb, dir_emb], dim=-1)
