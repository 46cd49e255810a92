"""Training loop, validation, and the ablation / K-sweep / bench experiments."""

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import metrics
from .data import crop_to_multiple, iterate_batches, load_manifest, make_lr
from .errors import ConfigError, NumericError
from .loss import LossConfig, ablation_variant, default_weights, total_loss
from .model import LaudConfig, LaudModel, parameter_count, save_checkpoint
from .optim import OptimizerState, optimizer_step, lr_schedule
from .resample import bicubic_resize
from .tensor import Tensor

log = logging.getLogger(__name__)

MILESTONES = (0.5, 0.8, 0.9, 0.96)


@dataclass
class TrainConfig:
    model: LaudConfig = field(default_factory=LaudConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 25
    batch: int = 16
    initial_lr: float = 2e-4
    milestones: List[float] = field(default_factory=lambda: list(MILESTONES))
    seed: int = 0
    train: Optional[str] = None
    val: Optional[str] = None
    crop: Optional[int] = 128
    augment: bool = True
    checkpoint_dir: Optional[str] = None
    log_every: int = 1
    val_every: int = 0
    grad_clip: Optional[float] = None
    preset: str = "paper"

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", "paper")
        base = preset_config(preset)
        model = dict(base.model.to_dict(), **d.pop("model", {}))
        loss = dict(base.loss.to_dict(), **d.pop("loss", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return replace(base, model=LaudConfig.from_dict(model), loss=LossConfig.from_dict(loss), **d)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from None


def preset_config(name):
    """``paper``: the pretraining protocol. ``micro``: a desk-sized stand-in."""
    if name == "paper":
        return TrainConfig(preset="paper")
    if name == "micro":
        return TrainConfig(
            model=LaudConfig(scale=2, rudp_steps=3, residual_blocks=2, channels=32),
            loss=LossConfig(),
            epochs=50,
            batch=4,
            initial_lr=1e-3,
            crop=32,
            log_every=1,
            preset="micro",
        )
    raise ConfigError(f"unknown preset {name!r}; expected 'micro' or 'paper'")


@dataclass
class RunLog:
    records: List[dict] = field(default_factory=list)

    def append(self, record):
        if self.records and record["step"] < self.records[-1]["step"]:
            raise ValueError("run log steps must be monotone")
        self.records.append(record)

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class TrainResult:
    model: LaudModel
    checkpoint: bytes
    best_checkpoint: Optional[bytes]
    log: RunLog
    val: Optional[dict] = None


def _seed_streams(seed):
    init, shuffle, crop, aug = np.random.SeedSequence(seed).spawn(4)
    return init, tuple(np.random.default_rng(s) for s in (shuffle, crop, aug))


def super_resolve(model, lr_image):
    """Final SR output for one ``(3, h, w)`` LR image as a ``(3, H, W)`` array."""
    trace = model.forward(Tensor(np.asarray(lr_image, dtype=np.float64)[None]))
    return trace.output.data[0]


def evaluate(model, manifest, rounding=True):
    """Mean Y-channel PSNR/SSIM of the model on full (divisibility-cropped) images."""
    s = model.config.scale
    report = metrics.MetricReport(scale=s, border_crop=s)
    for i, entry in enumerate(manifest.entries):
        hr = crop_to_multiple(manifest.image(i), s)
        sr = super_resolve(model, make_lr(hr, s))
        report.add(entry["hr"], *metrics.evaluate_pair(sr, hr, s, rounding))
    return report


def bicubic_baseline(hr_images, scale, rounding=True):
    """Mean PSNR/SSIM of bicubic upsampling of the bicubic-downscaled images."""
    report = metrics.MetricReport(scale=scale, border_crop=scale)
    for i, hr in enumerate(hr_images):
        hr = crop_to_multiple(np.asarray(hr), scale)
        lr = make_lr(hr, scale)
        up = bicubic_resize(lr, hr.shape[-2], hr.shape[-1])
        report.add(str(i), *metrics.evaluate_pair(up, hr, scale, rounding))
    return report


def _grad_norm(params):
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def _write(path, data):
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as f:
        f.write(data)


def train(config, train_manifest=None, val_manifest=None, model=None, on_step=None):
    """Optimize a LaUD model per ``config``.

    Manifests may be passed directly (e.g. in-memory datasets); otherwise they
    are loaded from ``config.train`` / ``config.val``. ``on_step`` is called
    with ``(step, model, report)`` after every update.
    """
    s = config.model.scale
    if train_manifest is None:
        if not config.train:
            raise ConfigError("no training dataset configured")
        train_manifest = load_manifest(config.train, scale=s)
    if val_manifest is None and config.val:
        val_manifest = load_manifest(config.val, scale=s, split="val")
    if train_manifest.scale != s:
        train_manifest = replace(train_manifest, scale=s)
    train_manifest.check(min_size=config.crop)
    if val_manifest is not None:
        val_manifest.check(min_size=s)
    config.loss.weights_for(config.model.rudp_steps)

    init_seed, rngs = _seed_streams(config.seed)
    if model is None:
        model = LaudModel(config.model, seed=init_seed)
    params = model.parameters()
    state = OptimizerState(lr=config.initial_lr)
    runlog = RunLog()
    ckdir = config.checkpoint_dir
    if ckdir:
        os.makedirs(ckdir, exist_ok=True)

    best_psnr, best_ckpt, last_val = -math.inf, None, None
    step = 0
    last_good = model.state_dict()

    def validate():
        nonlocal best_psnr, best_ckpt, last_val
        rep = evaluate(model, val_manifest)
        last_val = {"psnr": rep.mean_psnr, "ssim": rep.mean_ssim}
        if rep.mean_psnr > best_psnr:
            best_psnr = rep.mean_psnr
            best_ckpt = save_checkpoint(model, {"step": step, "val_psnr": rep.mean_psnr})
            if ckdir:
                _write(os.path.join(ckdir, "best.laud"), best_ckpt)
        return last_val

    for epoch in range(config.epochs):
        state.lr = lr_schedule(epoch, config.epochs, config.initial_lr, config.milestones)
        for batch in iterate_batches(train_manifest, config.batch, crop=config.crop, augment=config.augment, rngs=rngs):
            trace = model.forward(Tensor(batch.lr))
            loss, report = total_loss(trace, batch.hr, batch.d_gt, config.loss)
            if not np.isfinite(report.total):
                diag = {"step": step, "epoch": epoch, "lr": state.lr, "loss": report.to_dict()}
                if ckdir:
                    probe = LaudModel(config.model, seed=0)
                    probe.load_state_dict(last_good)
                    _write(os.path.join(ckdir, "last_good.laud"), save_checkpoint(probe))
                    _write(os.path.join(ckdir, "nan_diagnostics.json"), json.dumps(diag, indent=2, default=str))
                raise NumericError(f"non-finite loss at step {step}: {report.to_dict()}", diag)
            loss.backward()
            for p in params:
                # heads the loss never touches (e.g. the detail head with the
                # detail term off) get a zero gradient, which Adam leaves in place
                if p.grad is None:
                    p.grad = np.zeros(p.shape)
            if config.grad_clip:
                norm = _grad_norm(params)
                if norm > config.grad_clip:
                    for p in params:
                        p.grad *= config.grad_clip / norm
            last_good = {n: a.copy() for n, a in model.state_dict().items()}
            optimizer_step(params, state)
            model.zero_grad()
            step += 1
            record = None
            if config.log_every and step % config.log_every == 0:
                record = {"step": step, "epoch": epoch, "lr": state.lr, "loss": report.to_dict()}
            if val_manifest is not None and config.val_every and step % config.val_every == 0:
                record = record or {"step": step, "epoch": epoch, "lr": state.lr, "loss": report.to_dict()}
                record["val"] = validate()
            if record is not None:
                runlog.append(record)
            if on_step is not None:
                on_step(step, model, report)
        log.debug("epoch %d done, step %d, lr %g", epoch, step, state.lr)

    if val_manifest is not None and len(val_manifest) and config.epochs > 0:
        validate()
    final = save_checkpoint(model, {"step": step})
    if ckdir:
        _write(os.path.join(ckdir, "final.laud"), final)
        _write(os.path.join(ckdir, "runlog.jsonl"), runlog.to_jsonl())
    return TrainResult(model, final, best_ckpt, runlog, last_val)


# --- experiments -----------------------------------------------------------


def _median(xs):
    return float(np.median(xs)) if xs else float("nan")


def _compare(base, variants, seeds, train_manifest, val_manifest, progress):
    rows = []
    for name, model_cfg, loss_cfg in variants:
        runs = []
        for seed in seeds:
            cfg = replace(base, model=model_cfg, loss=loss_cfg, seed=seed, checkpoint_dir=None)
            t0 = time.perf_counter()
            res = train(cfg, train_manifest, val_manifest)
            run = {"seed": seed, "psnr": res.val["psnr"], "ssim": res.val["ssim"], "seconds": time.perf_counter() - t0}
            runs.append(run)
            if progress:
                progress(name, run)
        rows.append(
            {
                "variant": name,
                "params": parameter_count(model_cfg),
                "runs": runs,
                "median_psnr": _median([r["psnr"] for r in runs]),
                "median_ssim": _median([r["ssim"] for r in runs]),
            }
        )
    deltas = {}
    for a in rows:
        for b in rows:
            if a is not b:
                deltas[f"{a['variant']}-{b['variant']}"] = {
                    "psnr": a["median_psnr"] - b["median_psnr"],
                    "ssim": a["median_ssim"] - b["median_ssim"],
                }
    return {"rows": rows, "deltas": deltas, "seeds": list(seeds)}


def _need_val(val_manifest):
    if val_manifest is None or not len(val_manifest):
        raise ConfigError("experiments compare validation PSNR; a non-empty validation set is required")


def run_ablation(base, variants=("M1", "M2", "M3", "M4"), seeds=(0, 1, 2), train_manifest=None, val_manifest=None, progress=None):
    """Train every ablation variant for every seed; data order depends only on the seed."""
    if not seeds:
        raise ConfigError("run_ablation needs at least one seed")
    train_manifest = train_manifest or load_manifest(base.train, scale=base.model.scale)
    val_manifest = val_manifest or (load_manifest(base.val, scale=base.model.scale) if base.val else None)
    _need_val(val_manifest)
    specs = []
    for v in variants:
        model_cfg, loss_cfg = ablation_variant(v, base.model)
        loss_cfg = replace(loss_cfg, lam=base.loss.lam, detail_norm=base.loss.detail_norm)
        specs.append((v.upper(), model_cfg, loss_cfg))
    return _compare(base, specs, list(seeds), train_manifest, val_manifest, progress)


def run_k_sweep(base, k_values=(1, 2, 3), seeds=(0, 1, 2), train_manifest=None, val_manifest=None, progress=None):
    if not seeds:
        raise ConfigError("run_k_sweep needs at least one seed")
    train_manifest = train_manifest or load_manifest(base.train, scale=base.model.scale)
    val_manifest = val_manifest or (load_manifest(base.val, scale=base.model.scale) if base.val else None)
    _need_val(val_manifest)
    specs = []
    for k in k_values:
        model_cfg = replace(base.model, rudp_steps=int(k))
        specs.append((f"K={k}", model_cfg, replace(base.loss, weights=default_weights(int(k)))))
    return _compare(base, specs, list(seeds), train_manifest, val_manifest, progress)


def format_table(table):
    rows = table["rows"]
    width = max(len("variant"), *(len(r["variant"]) for r in rows))
    lines = [f"{'variant':<{width}}  {'params':>10}  {'median PSNR':>11}  {'median SSIM':>11}  runs"]
    for r in rows:
        lines.append(
            f"{r['variant']:<{width}}  {r['params']:>10d}  {r['median_psnr']:>11.4f}  {r['median_ssim']:>11.4f}  {len(r['runs'])}"
        )
    if table.get("deltas"):
        lines.append("")
        for key, d in table["deltas"].items():
            lines.append(f"{key:<{2 * width + 1}}  dPSNR {d['psnr']:+.4f}  dSSIM {d['ssim']:+.5f}")
    return "\n".join(lines) + "\n"


# --- bench -----------------------------------------------------------------


def timed(fn, warmup, iters, clock=time.perf_counter):
    """Mean seconds per call of ``fn`` over ``iters`` calls after ``warmup`` untimed calls."""
    for _ in range(warmup):
        fn()
    t0 = clock()
    for _ in range(iters):
        fn()
    return (clock() - t0) / iters


def _graph_bytes(root):
    seen, stack, total = set(), [root], 0
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            total += t.data.nbytes
            stack.extend(t._parents)
    return total


def bench(model_config, loss_config=None, batch=2, lr_size=16, warmup=10, iters=100, dry=False, seed=0):
    """Parameter count, memory estimate, and train-step / inference timing."""
    loss_config = loss_config or LossConfig(weights=default_weights(model_config.rudp_steps))
    n_params = parameter_count(model_config)
    out = {"param_count": n_params, "config": model_config.to_dict()}
    if dry:
        return out
    model = LaudModel(model_config, seed=seed)
    rng = np.random.default_rng(seed)
    s = model_config.scale
    lr = Tensor(rng.random((batch, model_config.in_channels, lr_size, lr_size)))
    hr = rng.random((batch, model_config.in_channels, lr_size * s, lr_size * s))
    d_gt = rng.random(hr.shape) - 0.5
    single = Tensor(lr.data[:1])
    state = OptimizerState(lr=1e-4)
    params = model.parameters()

    def train_step():
        loss, _ = total_loss(model.forward(lr), hr, d_gt, loss_config)
        loss.backward()
        optimizer_step(params, state)
        model.zero_grad()

    loss, _ = total_loss(model.forward(lr), hr, d_gt, loss_config)
    activation_bytes = _graph_bytes(loss)
    del loss
    param_bytes = sum(p.data.nbytes for p in params)
    out.update(
        {
            "peak_memory_estimate": param_bytes + 8 * n_params + 16 * n_params + activation_bytes,
            "memory_breakdown": {
                "parameters": param_bytes,
                "gradients": 8 * n_params,
                "optimizer_state": 16 * n_params,
                "activations": activation_bytes,
            },
            "time_per_train_step": timed(train_step, warmup, iters),
            "time_per_inference": timed(lambda: model.forward(single), warmup, iters),
            "warmup_iterations": warmup,
            "timed_iterations": iters,
            "train_input_shape": list(lr.shape),
        }
    )
    return out
