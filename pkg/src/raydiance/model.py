"""The full per-ray model and the coarse-to-fine rendering driver."""

from __future__ import annotations

import torch
from torch import nn

from . import raygen, renderer
from .config import RunConfig
from .encoder import RayFeatureExtractor
from .heads import GeometryHead, RadianceHead


class RayModel(nn.Module):
    """Feature extractor + geometry/radiance heads + weight normalization.

    forward maps per-sample embeddings (R, D, E) to a dict with the raw
    coefficients ``s`` (R, D), colors ``c`` (R, D, 3), simplex weights ``w``
    (R, D+1; or R, D without the epipolar slot), and the rendered ``rgb``.
    """

    def __init__(self, config: RunConfig):
        super().__init__()
        self.cfg = config
        flags = config.train.ablation
        enc_cfg = config.encoder
        if flags.no_conv_extractor:
            # pointwise layers only: same depth, no down/up path
            enc_cfg = type(enc_cfg)(width=enc_cfg.width, updown_layers=0,
                                    kernel=1, depth_total=enc_cfg.depth_total)
        self.extractor = RayFeatureExtractor(enc_cfg, config.sampling.embed_dim)
        self.geometry = GeometryHead(
            enc_cfg.width, gru_hidden=config.heads.gru_hidden,
            mlp_hidden=config.heads.geo_hidden,
            use_recurrence=not flags.no_recurrence,
            reverse_scan=config.heads.reverse_scan)
        self.radiance = RadianceHead(enc_cfg.width, config.radiance_hidden)
        self.no_softmax = flags.no_softmax
        self.no_epipolar = flags.no_epipolar
        self.s_e = config.s_e
        self.register_buffer("epipolar_color",
                             torch.tensor(config.epipolar.color, dtype=torch.float32))
        theta = torch.tensor(float(config.epipolar.theta_alpha))
        if config.epipolar.learnable_theta_alpha:
            self.theta_alpha = nn.Parameter(theta)
        else:
            self.register_buffer("theta_alpha", theta)

    def reset_parameters(self, seed: int) -> None:
        self.extractor.reset_parameters(seed)
        gen = torch.Generator().manual_seed(seed + 1)
        for p in self.geometry.parameters():
            _default_init(p, gen)
        for p in self.radiance.parameters():
            _default_init(p, gen)

    def weights(self, s: torch.Tensor) -> torch.Tensor:
        if self.no_epipolar:
            return torch.softmax(self.theta_alpha * s, dim=-1)
        if self.no_softmax:
            return renderer.normalized_weights(s, self.s_e)
        z = torch.cat([s, torch.full_like(s[..., :1], self.s_e)], dim=-1)
        return torch.softmax(self.theta_alpha * z, dim=-1)

    def forward(self, embeddings: torch.Tensor) -> dict[str, torch.Tensor]:
        feats = self.extractor(embeddings)
        s = self.geometry(feats)
        c = self.radiance(feats)
        w = self.weights(s)
        rgb = renderer.render_color(w, c, self.epipolar_color.to(embeddings.dtype))
        return {"s": s, "c": c, "w": w, "rgb": rgb}


def _default_init(param: torch.Tensor, gen: torch.Generator) -> None:
    with torch.no_grad():
        if param.ndim >= 2:
            bound = 1.0 / param.shape[-1] ** 0.5
            param.uniform_(-bound, bound, generator=gen)
        else:
            param.zero_()


def build_models(config: RunConfig, seed: int | None = None,
                 dtype=torch.float32) -> tuple[RayModel, RayModel]:
    """Coarse and fine models; one shared instance when configured so."""
    seed = config.seed if seed is None else seed
    coarse = RayModel(config).to(dtype)
    coarse.reset_parameters(seed)
    if config.train.share_coarse_fine:
        return coarse, coarse
    fine = RayModel(config).to(dtype)
    fine.reset_parameters(seed + 1000)
    return coarse, fine


def render_ray_batch(coarse: RayModel, fine: RayModel,
                     origins: torch.Tensor, dirs: torch.Tensor, config: RunConfig,
                     jitter: bool, generator: torch.Generator | None = None,
                     fixed_coarse_t: torch.Tensor | None = None,
                     fixed_fine_t: torch.Tensor | None = None,
                     ) -> dict[str, torch.Tensor]:
    """Coarse pass, inverse-CDF resampling, fine pass for a batch of rays.

    Resampling draws from the coarse sample weights (epipolar slot
    excluded) and is detached from the graph; ``fixed_*_t`` pin the sample
    distances, which the finite-difference checks rely on.
    """
    smp = config.sampling
    n_rays = origins.shape[0]
    dtype = origins.dtype

    if fixed_coarse_t is not None:
        t_c = fixed_coarse_t
    else:
        t_c = raygen.stratified_sample_batch(n_rays, smp.d_coarse, smp.near, smp.far,
                                             jitter, generator, dtype=dtype)
    emb_c = raygen.embed_ray_batch(origins, dirs, t_c, smp.freq_position, smp.freq_direction)
    out_c = coarse(emb_c)

    if fixed_fine_t is not None:
        t_f = fixed_fine_t
    else:
        sample_w = out_c["w"][:, :smp.d_coarse].detach()
        t_f = raygen.resample_batch(sample_w, smp.d_fine, smp.near, smp.far,
                                    jitter, generator)
        if smp.fine_union:
            t_f = torch.sort(torch.cat([t_c.detach(), t_f], dim=-1), dim=-1).values
    emb_f = raygen.embed_ray_batch(origins, dirs, t_f, smp.freq_position, smp.freq_direction)
    out_f = fine(emb_f)

    return {"coarse": out_c, "fine": out_f, "t_coarse": t_c, "t_fine": t_f}
