"""Run configuration: dataclasses, INI-style parsing, validation, overrides.

The on-disk format is a plain sectioned key/value file ([model], [optimizer],
[run]); any value can be overridden on the command line with
section.key=value pairs. Everything is validated before any compute starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .hilbert import ALL_VARIANTS


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    widths: tuple = (32, 64, 128, 256)
    depths: tuple = (1, 1, 2, 1)
    scan_variant: str = "hilbert-bidir"
    use_hybrid: bool = True
    use_freq_info: bool = True
    use_spatial: bool = True
    state_dim: int = 8
    fpn_width: int = 32
    num_classes: int = 1
    in_channels: int = 1
    image_size: int = 64
    reg_loss_weight: float = 1.0
    ctr_loss_weight: float = 1.0

    def validate(self):
        if len(self.widths) != 4 or len(self.depths) != 4:
            raise ConfigError(
                f"widths/depths must list exactly 4 stages, got "
                f"{len(self.widths)}/{len(self.depths)}; e.g. widths = 32,64,128,256"
            )
        if any(b < a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"stage widths must be non-decreasing, got {self.widths}")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"stage depths must be >= 1, got {self.depths}")
        if self.scan_variant not in ALL_VARIANTS:
            raise ConfigError(
                f"unknown scan variant {self.scan_variant!r}; choose one of "
                f"{', '.join(ALL_VARIANTS)}"
            )
        if self.image_size % 64 != 0:
            raise ConfigError(
                f"image_size must be divisible by 64 (stem stride 4, three stage "
                f"halvings, one extra pyramid level), got {self.image_size}"
            )
        if self.state_dim < 1 or self.fpn_width < 1 or self.num_classes < 1:
            raise ConfigError("state_dim, fpn_width and num_classes must be >= 1")
        if not self.use_hybrid and (self.use_freq_info or self.use_spatial):
            # Branch toggles only have meaning inside the hybrid block.
            pass


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    cosine_floor: float = 0.01

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.weight_decay < 1:
            raise ConfigError(f"weight decay must be in [0, 1), got {self.weight_decay}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie strictly inside (0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    dataset_size: int = 200
    classes_by_type: bool = False
    augment_hflip: bool = True
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    output_dir: str = "runs/default"

    def validate(self):
        self.model.validate()
        self.optimizer.validate()
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.dataset_size < 10:
            raise ConfigError(
                f"dataset_size must be >= 10 to populate all three splits, "
                f"got {self.dataset_size}"
            )
        if not 0 <= self.score_thresh < 1:
            raise ConfigError(f"score_thresh must be in [0, 1), got {self.score_thresh}")
        if not 0 < self.nms_iou <= 1:
            raise ConfigError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        if self.classes_by_type and self.model.num_classes != 2:
            raise ConfigError(
                "classes_by_type labels blobs and speckles separately; set "
                "model.num_classes = 2 to match"
            )


_SECTIONS = {"model": ModelConfig, "optimizer": OptimConfig, "run": RunConfig}


def _parse_value(raw: str, ftype):
    raw = raw.strip()
    if ftype is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is tuple:
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}


def _assign(cfg: RunConfig, section: str, key: str, raw: str):
    if section == "run":
        target = cfg
    elif section in ("model", "optimizer"):
        target = getattr(cfg, section)
    else:
        raise ConfigError(f"unknown config section [{section}]")
    types = _field_types(type(target))
    if key not in types or key in ("model", "optimizer"):
        raise ConfigError(
            f"unknown key {key!r} in section [{section}]; known keys: "
            f"{', '.join(k for k in types if k not in ('model', 'optimizer'))}"
        )
    ftype = types[key]
    if isinstance(ftype, str):
        ftype = _TYPE_NAMES.get(ftype, str)
    setattr(target, key, _parse_value(raw, ftype))


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional INI file plus overrides.

    Overrides are section.key=value strings, applied after the file.
    """
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found or unreadable: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _assign(cfg, section, key, raw)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override {item!r} must look like section.key=value"
            )
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _assign(cfg, section.strip(), key.strip(), raw)
    cfg.validate()
    return cfg
