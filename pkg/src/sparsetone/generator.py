"""Single-forward-pass sparse perturbation generator.

A Wave-U-Net-style encoder-decoder maps a waveform to two length-N head
outputs: perturbation magnitudes (hard-clipped into [-eps, +eps]) and
perturbation position scores (sigmoid, then binary-quantized into a 0/1
mask). The perturbation is their elementwise product, so it is exactly zero
off the mask support and bounded by eps on it.

During training the quantization is applied randomly (one uniform draw per
example, quantize when t >= 0.5) with a straight-through gradient; at
inference it is always applied.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import AudioClip, split_clips
from .losses import (AttackConfig, adversarial_loss, magnitude_loss,
                     overall_loss, quantization_loss, sparsity_loss)
from .models import Classifier


@dataclass
class GeneratorConfig:
    """Capacity and quantization settings of the perturbation generator.

    `invert_quantization` selects which side of the threshold becomes a
    perturbed position. The printed rule used by `quantize_mask` by default
    (score >= gamma -> 0) points opposite the pass-through branch and the
    straight-through gradient, so training defaults to the inverted rule
    (score >= gamma -> 1); flip it to train against the printed rule.
    """

    epsilon: float = 0.05
    gamma: float = 0.5
    depth: int = 4
    base_channels: int = 24
    kernel_size: int = 15
    seed: int = 0
    invert_quantization: bool = True

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")


@dataclass
class GeneratorTrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 5
    batch_size: int = 8
    seed: int = 0
    max_train_clips: int | None = None
    max_val_clips: int | None = None


@dataclass
class PerturbationFactors:
    """Factorized perturbation: delta = magnitudes * mask.

    pre_mask holds the continuous position scores in [0, 1]; mask is binary
    at inference and may be continuous on training pass-through batches.
    """

    pre_mask: torch.Tensor
    mask: torch.Tensor
    magnitudes: torch.Tensor
    delta: torch.Tensor

    def support_indices(self) -> list[np.ndarray]:
        """Per-example indices of nonzero mask entries."""
        m = self.mask.detach().cpu().numpy()
        if m.ndim == 1:
            m = m[None, :]
        return [np.flatnonzero(row != 0.0) for row in m]


class _Decoder(nn.Module):
    """Up-sampling path: linear interpolation + skip concatenation per level."""

    def __init__(self, enc_channels, bottleneck_ch, kernel_size):
        super().__init__()
        self.convs = nn.ModuleList()
        in_ch = bottleneck_ch
        for ch in reversed(enc_channels):
            self.convs.append(nn.Conv1d(in_ch + ch, ch, kernel_size,
                                        padding=kernel_size // 2))
            in_ch = ch
        self.out = nn.Conv1d(in_ch, 1, 1)

    def forward(self, h, skips):
        for conv, skip in zip(self.convs, reversed(skips)):
            h = F.interpolate(h, size=skip.shape[-1], mode="linear", align_corners=True)
            h = F.leaky_relu(conv(torch.cat([h, skip], dim=1)), 0.2)
        return self.out(h).squeeze(1)


class WaveUNetGenerator(nn.Module):
    """Shared down-sampling path feeding two independent up-sampling heads.

    Down-sampling halves the time axis by discarding every other step;
    up-sampling linearly interpolates back while concatenating the skip
    features from the matching encoder level. Head 1 emits raw perturbation
    magnitudes, head 2 raw position scores; both have the input's length.
    """

    def __init__(self, cfg: GeneratorConfig, input_length: int):
        super().__init__()
        self.cfg = cfg
        self.input_length = input_length
        ch = [cfg.base_channels * (i + 1) for i in range(cfg.depth)]
        self.enc = nn.ModuleList()
        in_ch = 1
        for c in ch:
            self.enc.append(nn.Conv1d(in_ch, c, cfg.kernel_size, padding=cfg.kernel_size // 2))
            in_ch = c
        bottleneck_ch = cfg.base_channels * (cfg.depth + 1)
        self.bottleneck = nn.Conv1d(in_ch, bottleneck_ch, cfg.kernel_size,
                                    padding=cfg.kernel_size // 2)
        self.magnitude_head = _Decoder(ch, bottleneck_ch, cfg.kernel_size)
        self.position_head = _Decoder(ch, bottleneck_ch, cfg.kernel_size)
        # start with the mask mostly on: the misclassification gradient then
        # shapes the positions before the sparsity pressure switches them off
        with torch.no_grad():
            self.position_head.out.bias.fill_(
                2.0 if cfg.invert_quantization else -2.0)

    def forward(self, x):
        """Map (batch, n) waveforms to (raw magnitudes, raw position scores)."""
        if x.ndim != 2:
            raise ValueError(f"expected (batch, samples) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.input_length:
            raise ValueError(f"expected input length {self.input_length}, got {x.shape[1]}")
        n = x.shape[1]
        pad = (-n) % (2 ** self.cfg.depth)
        h = F.pad(x, (0, pad)).unsqueeze(1)
        skips = []
        for conv in self.enc:
            h = F.leaky_relu(conv(h), 0.2)
            skips.append(h)
            h = h[:, :, ::2]
        h = F.leaky_relu(self.bottleneck(h), 0.2)
        raw_mag = self.magnitude_head(h, skips)[:, :n]
        raw_pos = self.position_head(h, skips)[:, :n]
        return raw_mag, raw_pos


class MagnitudeOnlyGenerator(WaveUNetGenerator):
    """Ablated variant without the position head: the perturbation is dense."""

    def __init__(self, cfg: GeneratorConfig, input_length: int):
        super().__init__(cfg, input_length)
        del self.position_head

    def forward(self, x):
        if x.ndim != 2:
            raise ValueError(f"expected (batch, samples) input, got shape {tuple(x.shape)}")
        n = x.shape[1]
        pad = (-n) % (2 ** self.cfg.depth)
        h = F.pad(x, (0, pad)).unsqueeze(1)
        skips = []
        for conv in self.enc:
            h = F.leaky_relu(conv(h), 0.2)
            skips.append(h)
            h = h[:, :, ::2]
        h = F.leaky_relu(self.bottleneck(h), 0.2)
        return self.magnitude_head(h, skips)[:, :n], None


def build_generator(cfg: GeneratorConfig, input_length: int,
                    factorized: bool = True) -> WaveUNetGenerator:
    """Construct a generator with seeded initial parameters."""
    torch.manual_seed(cfg.seed)
    cls = WaveUNetGenerator if factorized else MagnitudeOnlyGenerator
    return cls(cfg, input_length)


def clip_magnitudes(raw, epsilon: float):
    """Hard-clip raw magnitude outputs into [-epsilon, +epsilon]."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if isinstance(raw, torch.Tensor):
        return raw.clamp(-epsilon, epsilon)
    return np.clip(np.asarray(raw, dtype=np.float64), -epsilon, epsilon)


def _hard_mask(pre_mask, gamma, invert):
    # printed rule: score >= gamma -> 0, score < gamma -> 1; invert flips it
    if isinstance(pre_mask, torch.Tensor):
        hit = pre_mask >= gamma
        return (hit if invert else ~hit).to(pre_mask.dtype)
    hit = np.asarray(pre_mask) >= gamma
    return (hit if invert else ~hit).astype(np.float64)


def quantize_mask(pre_mask, gamma: float, training: bool = False, rng=None,
                  invert: bool = False):
    """Binary-quantize position scores into a 0/1 mask.

    Inference (`training=False`) is a pure threshold: by default scores
    >= gamma map to 0 and scores < gamma map to 1 (`invert=True` flips the
    rule). In training mode one uniform t in [0, 1) is drawn per example;
    rows with t >= 0.5 are quantized with a straight-through (identity)
    gradient, the rest pass the continuous scores through unchanged.
    """
    if not training:
        return _hard_mask(pre_mask, gamma, invert)
    if rng is None:
        raise ValueError("training-mode quantization needs an rng")
    is_tensor = isinstance(pre_mask, torch.Tensor)
    x = pre_mask if is_tensor else torch.as_tensor(np.asarray(pre_mask, dtype=np.float64))
    squeeze = x.ndim == 1
    if squeeze:
        x = x.unsqueeze(0)
    t = rng.uniform(0.0, 1.0, size=x.shape[0])
    apply_q = torch.as_tensor(t >= 0.5, device=x.device).view(-1, 1)
    hard = _hard_mask(x, gamma, invert)
    quantized = x + (hard - x).detach()      # straight-through: identity backward
    out = torch.where(apply_q, quantized, x)
    if squeeze:
        out = out.squeeze(0)
    return out if is_tensor else out.numpy()


def compose_adversarial(x, raw_mag, raw_pos, cfg: GeneratorConfig,
                        mode: str = "infer", rng=None):
    """Turn raw head outputs into (PerturbationFactors, x_adv).

    Applies sigmoid to the position scores, clips the magnitudes to
    [-eps, +eps], quantizes the mask per `mode`, multiplies, and clamps the
    perturbed waveform back into [-1, 1].
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    magnitudes = clip_magnitudes(raw_mag, cfg.epsilon)
    if mode == "train" and isinstance(raw_mag, torch.Tensor):
        # straight-through clip: saturated magnitudes keep receiving gradient,
        # otherwise coordinates that cross the bound freeze there for good
        magnitudes = raw_mag + (magnitudes - raw_mag).detach()
    if raw_pos is None:
        pre_mask = torch.ones_like(magnitudes)
        mask = torch.ones_like(magnitudes)
    else:
        pre_mask = torch.sigmoid(raw_pos)
        mask = quantize_mask(pre_mask, cfg.gamma, training=(mode == "train"),
                             rng=rng, invert=cfg.invert_quantization)
    delta = magnitudes * mask
    x_adv = (x + delta).clamp(-1.0, 1.0)
    return PerturbationFactors(pre_mask, mask, magnitudes, delta), x_adv


def generate(generator: WaveUNetGenerator, x, mode: str = "infer", rng=None):
    """Craft a perturbation for waveform(s) x in a single forward pass.

    x may be a 1-D waveform or a (batch, n) array/tensor with amplitudes in
    [-1, 1]. Returns (PerturbationFactors, x_adv) with x_adv clamped into
    [-1, 1]. In infer mode the mask is exactly binary and the delta support
    equals the mask support.
    """
    param = next(generator.parameters())
    is_tensor = isinstance(x, torch.Tensor)
    xt = x if is_tensor else torch.as_tensor(np.asarray(x), dtype=param.dtype)
    squeeze = xt.ndim == 1
    if squeeze:
        xt = xt.unsqueeze(0)
    if mode == "infer":
        generator.eval()
        with torch.no_grad():
            raw_mag, raw_pos = generator(xt)
            factors, x_adv = compose_adversarial(xt, raw_mag, raw_pos,
                                                 generator.cfg, mode, rng)
    else:
        raw_mag, raw_pos = generator(xt)
        factors, x_adv = compose_adversarial(xt, raw_mag, raw_pos,
                                             generator.cfg, mode, rng)
    if squeeze:
        factors = PerturbationFactors(factors.pre_mask.squeeze(0), factors.mask.squeeze(0),
                                      factors.magnitudes.squeeze(0), factors.delta.squeeze(0))
        x_adv = x_adv.squeeze(0)
    if not is_tensor:
        x_adv = x_adv.detach().cpu().numpy()
    return factors, x_adv


def _val_metrics(generator, threat, clips, batch_size=16):
    """Infer-mode attack metrics over clips: ASR, mean sparsity %, mean SNR dB."""
    from .evaluation import snr_db, sparsity_pct

    successes, sparsities, snrs = 0, [], []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start:start + batch_size]
        x = np.stack([c.samples for c in chunk])
        factors, x_adv = generate(generator, x, mode="infer")
        preds = threat.predict(x_adv)
        delta = factors.delta.cpu().numpy()
        for i, clip in enumerate(chunk):
            if int(preds[i]) != clip.label:
                successes += 1
                sparsities.append(sparsity_pct(delta[i], delta.shape[1]))
                if np.any(delta[i] != 0.0):
                    snrs.append(snr_db(clip.samples, delta[i]))
    n = len(clips)
    return {
        "asr": successes / n if n else 0.0,
        "sparsity_pct": float(np.mean(sparsities)) if sparsities else None,
        "snr_db": float(np.mean(snrs)) if snrs else None,
    }


def train_generator(generator: WaveUNetGenerator, threat: Classifier,
                    corpus: list[AudioClip], attack_cfg: AttackConfig,
                    train_cfg: GeneratorTrainConfig,
                    loss_variant: str = "full") -> WaveUNetGenerator:
    """Optimize the generator against a frozen threat classifier.

    Minimizes the weighted sum of the misclassification margin, the
    magnitude norm, the mask l1 norm, and the quantization gap over the
    train split; logs per-epoch validation ASR/sparsity/SNR and returns the
    best-validation-ASR checkpoint. `loss_variant` selects the ablations:
    "full", "no_magnitude_loss", "no_sparsity_loss", "no_quantization_loss",
    or "no_factorization" (magnitude-only generator, l1 on the magnitudes,
    quantization term dropped).
    """
    train = split_clips(corpus, "train")
    val = split_clips(corpus, "val")
    if not train or not val:
        raise ValueError("corpus must contain nonempty train and val splits")
    if threat.class_count < 2:
        raise ValueError("threat model must be a multi-class classifier")
    if {c.label for c in corpus} - set(range(threat.class_count)):
        raise ValueError("corpus labels exceed the threat model's class count")
    if train_cfg.max_train_clips is not None:
        train = train[:train_cfg.max_train_clips]
    if train_cfg.max_val_clips is not None:
        val = val[:train_cfg.max_val_clips]

    no_factorization = loss_variant == "no_factorization"
    if no_factorization and not isinstance(generator, MagnitudeOnlyGenerator):
        raise ValueError("no_factorization training needs a MagnitudeOnlyGenerator")
    cfg = attack_cfg
    if loss_variant == "no_magnitude_loss":
        cfg = AttackConfig(**{**_cfg_dict(cfg), "lambda_m": 0.0})
    elif loss_variant == "no_sparsity_loss":
        cfg = AttackConfig(**{**_cfg_dict(cfg), "lambda_s": 0.0})
    elif loss_variant == "no_quantization_loss":
        cfg = AttackConfig(**{**_cfg_dict(cfg), "lambda_q": 0.0})
    elif loss_variant not in ("full", "no_factorization"):
        raise ValueError(f"unknown loss variant {loss_variant!r}")

    threat.net.eval()
    for p in threat.net.parameters():
        p.requires_grad_(False)
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    opt = torch.optim.Adam(generator.parameters(), lr=train_cfg.learning_rate)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=train_cfg.lr_decay_every,
                                            gamma=train_cfg.lr_decay)
    best_asr, best_state, best_epoch = -1.0, None, -1
    history = []
    for epoch in range(train_cfg.epochs):
        generator.train()
        epoch_losses = []
        for idx in _gen_batches(len(train), train_cfg.batch_size, rng):
            chunk = [train[i] for i in idx]
            x = torch.as_tensor(np.stack([c.samples for c in chunk]), dtype=torch.float32)
            y = torch.as_tensor([c.label for c in chunk], dtype=torch.long)
            raw_mag, raw_pos = generator(x)
            factors, x_adv = compose_adversarial(x, raw_mag, raw_pos, generator.cfg,
                                                 mode="train", rng=rng)
            logits = threat.net(x_adv)
            l_adv = adversarial_loss(logits, y, cfg.confidence)
            if no_factorization:
                l_mag = magnitude_loss(factors.magnitudes)
                l_spa = sparsity_loss(factors.magnitudes)
                loss = l_adv + cfg.lambda_m * l_mag + cfg.lambda_s * l_spa
            else:
                l_mag = magnitude_loss(factors.magnitudes)
                l_spa = sparsity_loss(factors.mask)
                # the mask is the quantization target, not a gradient path
                l_qua = quantization_loss(factors.pre_mask, factors.mask.detach())
                loss = overall_loss(l_adv, l_mag, l_spa, l_qua, cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.item()))
        sched.step()
        generator.eval()
        metrics = _val_metrics(generator, threat, val)
        history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                        **{f"val_{k}": v for k, v in metrics.items()}})
        if metrics["asr"] > best_asr:
            best_asr, best_epoch = metrics["asr"], epoch
            best_state = copy.deepcopy(generator.state_dict())
    generator.load_state_dict(best_state)
    generator.eval()
    generator.train_history = history
    generator.best_val_asr = best_asr
    generator.best_epoch = best_epoch
    return generator


def _cfg_dict(cfg: AttackConfig) -> dict:
    from dataclasses import asdict as _asdict
    return _asdict(cfg)


def _gen_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def save_generator(generator: WaveUNetGenerator, out_dir, threat_id: str = "") -> Path:
    """Write `weights` + `meta.json` into a generator checkpoint directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(generator.state_dict(), out_dir / "weights")
    meta = {
        "config": asdict(generator.cfg),
        "input_length": generator.input_length,
        "factorized": not isinstance(generator, MagnitudeOnlyGenerator),
        "threat_model": threat_id,
        "best_val_asr": getattr(generator, "best_val_asr", None),
        "best_epoch": getattr(generator, "best_epoch", None),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2))
    return out_dir


def load_generator(ckpt_dir) -> WaveUNetGenerator:
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"not a generator checkpoint (no meta.json): {ckpt_dir}")
    meta = json.loads(meta_path.read_text())
    cfg = GeneratorConfig(**meta["config"])
    gen = build_generator(cfg, meta["input_length"], factorized=meta.get("factorized", True))
    gen.load_state_dict(torch.load(ckpt_dir / "weights", weights_only=True))
    gen.eval()
    gen.best_val_asr = meta.get("best_val_asr")
    gen.best_epoch = meta.get("best_epoch")
    return gen
