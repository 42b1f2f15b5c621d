"""Softmax surface weights, color/depth expectation, and the two test oracles.

The rendering step turns raw per-sample coefficients into a probability
simplex over the D samples plus one extra slot for a virtual far-away
("epipolar") point, then takes expectations of color and distance under it.
``volume_render_oracle`` (classical alpha compositing) and
``indicator_oracle`` (exact first-intersection target) exist for tests and
comparisons only; the rendering path never uses them.

All functions accept torch tensors or numpy arrays and return the same kind.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .scene_io import MISS, SyntheticScene, analytic_ray_color

EPIPOLAR = -1  # indicator_oracle index for rays that hit nothing


def _wrap(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def surface_weights(s, s_e: float, theta_alpha: float = 10.0):
    """softmax(theta_alpha * concat(s, s_e)) along the last axis.

    Computed in the max-subtracted form, so huge coefficients cannot
    overflow.  Output has one more entry than ``s``; the last one is the
    epipolar slot.
    """
    s, to_numpy = _wrap(s)
    if not torch.isfinite(s).all():
        raise ValueError("raw coefficients must be finite")
    z = torch.cat([s, torch.full_like(s[..., :1], s_e)], dim=-1) * theta_alpha
    w = torch.softmax(z, dim=-1)
    return w.numpy() if to_numpy else w


def normalized_weights(s, s_e: float):
    """Direct normalization concat(s, s_e) / (sum(s) + s_e); ablation of the softmax."""
    s, to_numpy = _wrap(s)
    z = torch.cat([s, torch.full_like(s[..., :1], s_e)], dim=-1)
    w = z / z.sum(dim=-1, keepdim=True).clamp_min(1e-30)
    return w.numpy() if to_numpy else w


def render_color(w, colors, epipolar_color):
    """Expected color: sum_i w_i c_i + w_e c_e.

    ``w`` may have D+1 entries (last = epipolar) or D entries (ablation
    without the epipolar slot, in which case ``epipolar_color`` is ignored).
    """
    w, to_numpy = _wrap(w)
    colors, _ = _wrap(colors)
    n = colors.shape[-2]
    out = (w[..., :n, None] * colors).sum(dim=-2)
    if w.shape[-1] == n + 1:
        c_e = torch.as_tensor(np.asarray(epipolar_color, dtype=np.float64)).to(w.dtype)
        out = out + w[..., n, None] * c_e
    elif w.shape[-1] != n:
        raise ValueError(f"weights ({w.shape[-1]}) must have D or D+1 entries for D={n}")
    return out.numpy() if to_numpy else out


def render_depth(w, t, t_e: float):
    """Expected distance: sum_i w_i t_i + w_e t_e (same slot rules as color)."""
    w, to_numpy = _wrap(w)
    t, _ = _wrap(t)
    n = t.shape[-1]
    out = (w[..., :n] * t).sum(dim=-1)
    if w.shape[-1] == n + 1:
        out = out + w[..., n] * t_e
    elif w.shape[-1] != n:
        raise ValueError(f"weights ({w.shape[-1]}) must have D or D+1 entries for D={n}")
    return out.numpy() if to_numpy else out


def volume_render_oracle(sigma, colors, delta):
    """Classical alpha-compositing quadrature, the comparison baseline.

    C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i,
    T_i = exp(-sum_{j<i} sigma_j delta_j).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    tau = sigma * delta
    transmittance = np.exp(-np.concatenate([[0.0], np.cumsum(tau[:-1])]))
    weights = transmittance * (1.0 - np.exp(-tau))
    return weights @ colors


def volume_render_weights(sigma, delta):
    """The per-sample compositing weights of volume_render_oracle."""
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    tau = sigma * delta
    transmittance = np.exp(-np.concatenate([[0.0], np.cumsum(tau[:-1])]))
    return transmittance * (1.0 - np.exp(-tau))


def indicator_oracle(scene: SyntheticScene, origin, direction, t):
    """Ground-truth one-hot target: which sample carries the radiance.

    Returns (index, color).  ``index`` is the sample nearest to the analytic
    first-intersection depth (ties to the lower index) or EPIPOLAR when the
    ray misses everything, in which case the color is the background.
    """
    t = np.asarray(t, dtype=np.float64)
    color, depth = analytic_ray_color(scene, np.asarray(origin), np.asarray(direction))
    if depth == MISS:
        return EPIPOLAR, color
    gaps = np.abs(t - depth)
    return int(np.argmin(gaps)), color  # argmin takes the first (lower) index on ties


# -- depth map export -----------------------------------------------------

def save_depth_png(depth: np.ndarray, path: str | Path,
                   save_raw: bool = False) -> None:
    """16-bit grayscale PNG plus a text sidecar with the (min, max) scale."""
    from PIL import Image

    depth = np.asarray(depth, dtype=np.float64)
    lo, hi = float(depth.min()), float(depth.max())
    scale = hi - lo if hi > lo else 1.0
    quantized = np.round((depth - lo) / scale * 65535.0).astype(np.uint16)
    path = Path(path)
    Image.fromarray(quantized).save(path)
    path.with_suffix(path.suffix + ".scale.txt").write_text(f"min: {lo}\nmax: {hi}\n")
    if save_raw:
        np.save(path.with_suffix(".npy"), depth.astype(np.float32))


def load_depth_png(path: str | Path) -> np.ndarray:
    """Inverse of save_depth_png (up to 16-bit quantization)."""
    from PIL import Image

    path = Path(path)
    quantized = np.asarray(Image.open(path), dtype=np.float64)
    lines = path.with_suffix(path.suffix + ".scale.txt").read_text().splitlines()
    lo = float(lines[0].split(":")[1])
    hi = float(lines[1].split(":")[1])
    return lo + quantized / 65535.0 * (hi - lo)
