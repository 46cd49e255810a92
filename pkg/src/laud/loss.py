"""SR loss with the pyramid detail term, summed over RUDP steps."""

from dataclasses import asdict, dataclass, field
from typing import List, Optional

from . import ops
from .errors import ConfigError
from .model import LaudConfig, parameter_count

DEFAULT_WEIGHT_SERIES = (1.0, 3.0, 10.0, 30.0, 100.0)


def default_weights(k):
    if k <= len(DEFAULT_WEIGHT_SERIES):
        return list(DEFAULT_WEIGHT_SERIES[:k])
    return list(DEFAULT_WEIGHT_SERIES) + [DEFAULT_WEIGHT_SERIES[-1]] * (k - len(DEFAULT_WEIGHT_SERIES))


@dataclass
class LossConfig:
    lam: float = 1.0
    weights: Optional[List[float]] = field(default_factory=lambda: [1.0, 3.0, 10.0])
    detail_norm: str = "l1"
    detail_enabled: bool = True
    # False supervises only the last step, with weight 1
    rudp_all_steps: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.detail_norm not in ("l1", "l2"):
            raise ConfigError(f"detail_norm must be 'l1' or 'l2', got {self.detail_norm!r}")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ConfigError(f"step weights must be positive, got {self.weights}")

    def weights_for(self, k):
        if self.weights is None:
            return default_weights(k)
        if len(self.weights) != k:
            raise ConfigError(f"{len(self.weights)} step weights given for {k} RUDP steps")
        return list(self.weights)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad loss config: {exc}") from None


@dataclass
class LossReport:
    sr_loss: List[float]
    detail_loss: List[Optional[float]]
    step_loss: List[float]
    weights: List[float]
    lam: float
    total: float

    def to_dict(self):
        return {
            "sr": self.sr_loss,
            "detail": self.detail_loss,
            "step": self.step_loss,
            "weights": self.weights,
            "lambda": self.lam,
            "total": self.total,
        }


def _detail_norm(config):
    return ops.l1_loss if config.detail_norm == "l1" else ops.l2_loss


def step_loss(sr, detail, hr, d_gt, config):
    """``l1(sr, hr) + lambda * norm(detail, d_gt)``; returns ``(loss, sr_term, detail_term)``."""
    sr_term = ops.l1_loss(sr, hr)
    if not config.detail_enabled:
        return sr_term, sr_term, None
    if detail is None or d_gt is None:
        raise ConfigError("detail loss enabled but detail prediction or target is missing")
    d_term = _detail_norm(config)(detail, d_gt)
    return ops.add(sr_term, ops.scale(d_term, config.lam)), sr_term, d_term


def total_loss(trace, hr, d_gt, config):
    """Weighted sum of per-step losses. Returns ``(loss_tensor, LossReport)``."""
    k = len(trace.sr_images)
    weights = config.weights_for(k)
    if not config.rudp_all_steps:
        weights = [0.0] * (k - 1) + [1.0]
    total = None
    srs, dets, steps = [], [], []
    for i in range(k):
        detail = trace.detail_images[i] if trace.detail_images else None
        lk, s_term, d_term = step_loss(trace.sr_images[i], detail, hr, d_gt, config)
        srs.append(s_term.item())
        dets.append(None if d_term is None else d_term.item())
        steps.append(lk.item())
        if weights[i] == 0.0:
            continue
        term = ops.scale(lk, weights[i])
        total = term if total is None else ops.add(total, term)
    report = LossReport(srs, dets, steps, weights, config.lam, total.item())
    return total, report


ABLATION_VARIANTS = ("M1", "M2", "M3", "M4")


def matched_channels(base, rudp_steps):
    """Channel width for a ``rudp_steps`` model whose size best matches ``base``."""
    target = parameter_count(base)
    best, best_err = base.channels, None
    c = 1
    while True:
        cfg = LaudConfig(**{**base.to_dict(), "rudp_steps": rudp_steps, "channels": c})
        n = parameter_count(cfg)
        err = abs(n - target)
        if best_err is None or err < best_err:
            best, best_err = c, err
        if n > target:
            break
        c += 1
    return best


def ablation_variant(name, base=None):
    """Model and loss settings for the ablation rows.

    M1: K=1, no detail loss. M2: K=1 with detail loss. M3: K=3 without, M4:
    K=3 with (the full method). K=1 variants are widened so their parameter
    count matches the K=3 model built from ``base``.
    """
    base = base or LaudConfig()
    key = str(name).upper()
    if key not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}; expected one of {ABLATION_VARIANTS}")
    full = LaudConfig(**{**base.to_dict(), "rudp_steps": 3})
    rudp = key in ("M3", "M4")
    detail = key in ("M2", "M4")
    if rudp:
        model_cfg = full
    else:
        model_cfg = LaudConfig(**{**full.to_dict(), "rudp_steps": 1, "channels": matched_channels(full, 1)})
    loss_cfg = LossConfig(lam=1.0, weights=default_weights(model_cfg.rudp_steps), detail_enabled=detail)
    return model_cfg, loss_cfg
