"""Training configuration and its flat text file format.

Config files are plain `key = value` lines; `#` starts a comment; blank lines
are skipped. Unknown keys are rejected so typos cannot silently fall back to
defaults. Serialization round-trips: parse(serialize(cfg)) == cfg.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .losses import LossWeights
from .networks import NetworkSpec

SUPERVISION_MODES = ("nir_only", "both")
INPUT_MODES = ("concat", "ori")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    learning_rate: float = 0.0002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    warmup_epochs: int = 15
    joint_epochs: int = 10
    seed: int = 0
    eta: float = 0.008
    supervision_mode: str = "nir_only"
    input_mode: str = "concat"
    image_height: int = 384
    image_width: int = 512
    flip_probability: float = 0.5
    use_stn: bool = True
    use_aux: bool = True

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    def validate(self) -> None:
        self.network.validate()
        w = self.weights
        for name in ("cycle_weight", "reconstruction_weight", "adversarial_weight",
                     "discriminator_weight", "appearance_weight", "smoothness_weight",
                     "lr_weight", "aux_weight"):
            if getattr(w, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(w, name)}")
        if not 0.0 <= w.ssim_alpha <= 1.0:
            raise ConfigError(f"ssim_alpha must be in [0, 1], got {w.ssim_alpha}")
        if w.ssim_window % 2 != 1 or w.ssim_window < 3:
            raise ConfigError(f"ssim_window must be odd and >= 3, got {w.ssim_window}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_epochs < 0 or self.joint_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.supervision_mode not in SUPERVISION_MODES:
            raise ConfigError(f"supervision_mode must be one of {SUPERVISION_MODES}, got {self.supervision_mode!r}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(f"flip_probability must be in [0, 1], got {self.flip_probability}")
        div = 1 << max(2, self.network.num_smn_scales)
        if self.image_height % div or self.image_width % div:
            raise ConfigError(f"image size {self.image_height}x{self.image_width} must be divisible by {div}")
        if not self.use_stn and self.warmup_epochs > 0:
            raise ConfigError("use_stn = false requires warmup_epochs = 0 (warmup trains only the translation stack)")


# key -> (owner, attribute, type); owner picks the sub-dataclass
_KEYS: dict[str, tuple[str, str, type]] = {
    "cycle_weight": ("weights", "cycle_weight", float),
    "reconstruction_weight": ("weights", "reconstruction_weight", float),
    "adversarial_weight": ("weights", "adversarial_weight", float),
    "discriminator_weight": ("weights", "discriminator_weight", float),
    "appearance_weight": ("weights", "appearance_weight", float),
    "smoothness_weight": ("weights", "smoothness_weight", float),
    "lr_weight": ("weights", "lr_weight", float),
    "aux_weight": ("weights", "aux_weight", float),
    "ssim_alpha": ("weights", "ssim_alpha", float),
    "ssim_window": ("weights", "ssim_window", int),
    "learning_rate": ("", "learning_rate", float),
    "adam_beta1": ("", "adam_beta1", float),
    "adam_beta2": ("", "adam_beta2", float),
    "adam_eps": ("", "adam_eps", float),
    "batch_size": ("", "batch_size", int),
    "warmup_epochs": ("", "warmup_epochs", int),
    "joint_epochs": ("", "joint_epochs", int),
    "seed": ("", "seed", int),
    "eta": ("", "eta", float),
    "supervision_mode": ("", "supervision_mode", str),
    "input_mode": ("", "input_mode", str),
    "image_height": ("", "image_height", int),
    "image_width": ("", "image_width", int),
    "flip_probability": ("", "flip_probability", float),
    "use_stn": ("", "use_stn", bool),
    "use_aux": ("", "use_aux", bool),
    "base_width": ("network", "base_width", int),
    "num_residual_blocks": ("network", "num_residual_blocks", int),
    "num_smn_scales": ("network", "num_smn_scales", int),
}


def _owner(cfg: TrainConfig, owner: str):
    return cfg if owner == "" else getattr(cfg, owner)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
    return str(v)


def _parse_value(key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw == "true":
                return True
            if raw == "false":
                return False
            raise ValueError("expected true or false")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for key, (owner, attr, _) in _KEYS.items():
        lines.append(f"{key} = {format_value(getattr(_owner(cfg, owner), attr))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base if base is not None else TrainConfig()
    cfg = replace(cfg, weights=replace(cfg.weights), network=replace(cfg.network))
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        owner, attr, typ = _KEYS[key]
        setattr(_owner(cfg, owner), attr, _parse_value(key, raw, typ))
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_config(cfg))
