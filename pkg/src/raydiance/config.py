"""Configuration records for the whole pipeline.

Every knob lives in one of the dataclasses below.  Configs round-trip
through flat JSON (``RunConfig.to_dict`` / ``from_dict``) and single keys
can be overridden with dotted ``section.key=value`` strings, which is what
the CLI exposes.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a config value fails validation; names the failing key."""


_GRAMMAR_RE = re.compile(r"^W(\d+)U(\d+)K(\d+)D(\d+)$")


@dataclass
class EncoderConfig:
    """Shape of the U-shaped 1D convolutional ray feature extractor.

    The compact string form ``W{width}U{updown}K{kernel}D{depth}`` is
    accepted anywhere an encoder config is expected.  ``updown_layers``
    counts downsampling and upsampling layers together (U4 = 2 down + 2 up)
    and the pointwise stage gets the remaining ``depth_total - updown_layers``
    kernel-1 layers.
    """

    width: int = 64
    updown_layers: int = 4
    kernel: int = 3
    depth_total: int = 8

    @property
    def point_layers(self) -> int:
        return self.depth_total - self.updown_layers

    @property
    def down_layers(self) -> int:
        return self.updown_layers // 2

    @property
    def grammar(self) -> str:
        return f"W{self.width}U{self.updown_layers}K{self.kernel}D{self.depth_total}"

    @classmethod
    def from_grammar(cls, text: str) -> "EncoderConfig":
        m = _GRAMMAR_RE.match(text.strip())
        if m is None:
            raise ConfigError(f"encoder.grammar: cannot parse {text!r}, expected W<w>U<u>K<k>D<d>")
        cfg = cls(width=int(m.group(1)), updown_layers=int(m.group(2)),
                  kernel=int(m.group(3)), depth_total=int(m.group(4)))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.width < 1:
            raise ConfigError("encoder.width: must be >= 1")
        if self.updown_layers < 0 or self.updown_layers % 2 != 0:
            raise ConfigError("encoder.updown_layers: must be even and >= 0")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("encoder.kernel: must be odd and >= 1")
        if self.point_layers < 1:
            raise ConfigError("encoder.depth_total: must exceed updown_layers")


@dataclass
class SamplingConfig:
    """Per-ray distance sampling and coordinate embedding."""

    d_coarse: int = 32
    d_fine: int = 32
    near: float = 2.0
    far: float = 6.0
    jitter: bool = True
    fine_union: bool = False      # fine pass also keeps the coarse samples
    freq_position: int = 10       # frequency bands for sample positions
    freq_direction: int = 4       # frequency bands for the ray direction

    def validate(self) -> None:
        if self.d_coarse < 2:
            raise ConfigError("sampling.d_coarse: must be >= 2")
        if self.d_fine < 2:
            raise ConfigError("sampling.d_fine: must be >= 2")
        if not (0.0 < self.near < self.far):
            raise ConfigError("sampling.near/far: need 0 < near < far")
        if self.freq_position < 0 or self.freq_direction < 0:
            raise ConfigError("sampling.freq_*: must be >= 0")

    @property
    def embed_dim(self) -> int:
        return 3 * (2 * self.freq_position + 1) + 3 * (2 * self.freq_direction + 1)


@dataclass
class EpipolarConfig:
    """The virtual far-away sample that absorbs rays hitting nothing."""

    s_e: float | None = None          # None -> 1 / d_coarse at build time
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    t_e: float = 120.0
    theta_alpha: float = 10.0
    learnable_theta_alpha: bool = False

    def validate(self, far: float) -> None:
        if self.s_e is not None and self.s_e <= 0:
            raise ConfigError("epipolar.s_e: must be > 0")
        if any(not (0.0 <= v <= 1.0) for v in self.color):
            raise ConfigError("epipolar.color: components must be in [0, 1]")
        if self.t_e <= far:
            raise ConfigError("epipolar.t_e: must exceed sampling.far")
        if self.theta_alpha <= 0:
            raise ConfigError("epipolar.theta_alpha: must be > 0")


@dataclass
class HeadsConfig:
    """Widths of the geometry and radiance heads."""

    gru_hidden: int = 64
    geo_hidden: int = 64
    radiance_hidden: int | None = None   # None -> encoder width // 2
    reverse_scan: bool = False           # scan back-to-front (ablation only)

    def validate(self) -> None:
        if self.gru_hidden < 1 or self.geo_hidden < 1:
            raise ConfigError("heads.gru_hidden/geo_hidden: must be >= 1")
        if self.radiance_hidden is not None and self.radiance_hidden < 1:
            raise ConfigError("heads.radiance_hidden: must be >= 1")


@dataclass
class LossWeights:
    lambda_coarse: float = 0.1
    lambda_fine: float = 1.0
    lambda_w: float = 0.01

    def validate(self) -> None:
        if min(self.lambda_coarse, self.lambda_fine, self.lambda_w) < 0:
            raise ConfigError("loss.lambda_*: must be >= 0")


@dataclass
class AblationFlags:
    """Component switch-offs used by the ablation experiments.

    no_conv_extractor  -> pointwise layers only, no down/up path
    no_recurrence      -> per-sample linear head instead of the GRU
    no_softmax         -> direct normalization s / (sum(s) + s_e)
    no_epipolar        -> drop the epipolar slot, softmax over samples only
    no_empty_reg       -> lambda_w forced to 0
    """

    no_conv_extractor: bool = False
    no_recurrence: bool = False
    no_softmax: bool = False
    no_epipolar: bool = False
    no_empty_reg: bool = False

    def tag(self) -> str:
        names = {
            "no_conv_extractor": "w/o rho_F",
            "no_recurrence": "w/o rho_G",
            "no_softmax": "w/o alpha",
            "no_epipolar": "w/o beta",
            "no_empty_reg": "w/o L_e",
        }
        active = [names[f.name] for f in dataclasses.fields(self) if getattr(self, f.name)]
        return ", ".join(active) if active else "full"


# CLI / config-file spellings of the ablation variants.
ABLATION_VARIANTS = {
    "no_rho_F": "no_conv_extractor",
    "no_rho_G": "no_recurrence",
    "no_alpha": "no_softmax",
    "no_beta": "no_epipolar",
    "no_L_e": "no_empty_reg",
    "no_conv_extractor": "no_conv_extractor",
    "no_recurrence": "no_recurrence",
    "no_softmax": "no_softmax",
    "no_epipolar": "no_epipolar",
    "no_empty_reg": "no_empty_reg",
}


@dataclass
class TrainConfig:
    lr_start: float = 2e-3
    lr_end: float = 2e-5
    beta1: float = 0.8
    beta2: float = 0.888
    batch_rays: int = 1024
    iterations: int = 5000
    log_every: int = 100
    val_every: int = 0               # 0 disables periodic validation PSNR
    share_coarse_fine: bool = True
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        if not (self.lr_start >= self.lr_end > 0):
            raise ConfigError("train.lr_start/lr_end: need lr_start >= lr_end > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("train.beta1/beta2: must be in [0, 1)")
        if self.batch_rays < 1:
            raise ConfigError("train.batch_rays: must be >= 1")
        if self.iterations < 0:
            raise ConfigError("train.iterations: must be >= 0")


@dataclass
class RunConfig:
    """Everything one run needs: network shape, sampling, loss, schedule, data."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    epipolar: EpipolarConfig = field(default_factory=EpipolarConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""                # path to a Blender-format dataset root
    out_dir: str = "runs/default"
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        self.sampling.validate()
        self.epipolar.validate(self.sampling.far)
        self.heads.validate()
        self.loss.validate()
        self.train.validate()
        return self

    @property
    def s_e(self) -> float:
        return self.epipolar.s_e if self.epipolar.s_e is not None else 1.0 / self.sampling.d_coarse

    @property
    def radiance_hidden(self) -> int:
        h = self.heads.radiance_hidden
        return h if h is not None else max(1, self.encoder.width // 2)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["encoder"] = self.encoder.grammar
        d["epipolar"]["color"] = list(self.epipolar.color)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = {k: v for k, v in data.items() if not k.startswith("_")}
        cfg = cls()
        if "encoder" in data:
            enc = data.pop("encoder")
            cfg.encoder = EncoderConfig.from_grammar(enc) if isinstance(enc, str) \
                else _fill(EncoderConfig(), enc, "encoder")
        for section, typ in (("sampling", SamplingConfig), ("epipolar", EpipolarConfig),
                             ("heads", HeadsConfig), ("loss", LossWeights)):
            if section in data:
                setattr(cfg, section, _fill(typ(), data.pop(section), section))
        if "train" in data:
            tr = dict(data.pop("train"))
            abl = tr.pop("ablation", {})
            cfg.train = _fill(TrainConfig(), tr, "train")
            cfg.train.ablation = _fill(AblationFlags(), abl, "train.ablation")
        for key in ("dataset", "out_dir", "seed"):
            if key in data:
                setattr(cfg, key, data.pop(key))
        if data:
            raise ConfigError(f"unknown config keys: {sorted(data)}")
        if isinstance(cfg.epipolar.color, list):
            cfg.epipolar.color = tuple(cfg.epipolar.color)
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def apply_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings on top of this config."""
        d = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r}: expected section.key=value")
            dotted, raw = item.split("=", 1)
            keys = dotted.split(".")
            node = d
            for k in keys[:-1]:
                if not isinstance(node, dict) or k not in node:
                    raise ConfigError(f"override {dotted!r}: no such config key")
                node = node[k]
            leaf = keys[-1]
            if not isinstance(node, dict) or leaf not in node:
                raise ConfigError(f"override {dotted!r}: no such config key")
            node[leaf] = _parse_value(raw, node[leaf])
        return RunConfig.from_dict(d)


def _fill(obj: Any, values: dict[str, Any], section: str) -> Any:
    names = {f.name for f in dataclasses.fields(obj)}
    for k, v in values.items():
        if k not in names:
            raise ConfigError(f"{section}.{k}: unknown config key")
        if isinstance(v, list):
            v = tuple(v)
        setattr(obj, k, v)
    return obj


def _parse_value(raw: str, current: Any) -> Any:
    """Parse an override string, guided by the current value's type."""
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float) or current is None:
        try:
            return float(raw)
        except ValueError:
            pass
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw
