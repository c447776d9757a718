"""End-to-end speech emotion classifiers operating on raw waveforms.

Two train-from-scratch conv-recurrent topologies are provided: a 3-conv-block
network with a 2-layer LSTM (`emo18_style`) and a 4-conv-block network with 2
stacked LSTM layers (`zhao19_style`). Both map a (batch, n_samples) waveform
to class logits. Other architectures (e.g. pre-trained foundation models) can
be plugged in behind the same Classifier wrapper.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .corpus import AudioClip, split_clips

ARCHITECTURES = ("emo18_style", "zhao19_style")
RECURRENT_HIDDEN = 128


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-3
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


class _ConvRecurrentNet(nn.Module):
    """Conv feature extractor over raw audio followed by an LSTM and a linear head."""

    def __init__(self, channels, kernel_size, pool, class_count, input_length):
        super().__init__()
        blocks = []
        in_ch = 1
        for ch in channels:
            blocks += [nn.Conv1d(in_ch, ch, kernel_size, padding=kernel_size // 2),
                       nn.ReLU(), nn.MaxPool1d(pool)]
            in_ch = ch
        self.conv = nn.Sequential(*blocks)
        self.downsample = pool ** len(channels)
        self.lstm = nn.LSTM(in_ch, RECURRENT_HIDDEN, num_layers=2, batch_first=True)
        self.head = nn.Linear(RECURRENT_HIDDEN, class_count)
        self.input_length = input_length

    def forward(self, x):
        if x.ndim != 2:
            raise ValueError(f"expected (batch, samples) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.input_length:
            raise ValueError(f"expected input length {self.input_length}, got {x.shape[1]}")
        # pad so every pooling stage sees a full window
        pad = (-x.shape[1]) % self.downsample
        if pad:
            x = nn.functional.pad(x, (0, pad))
        h = self.conv(x.unsqueeze(1))
        out, _ = self.lstm(h.permute(0, 2, 1))
        # mean readout: local evidence counts wherever it occurs in the clip
        return self.head(out.mean(dim=1))


def _build_net(architecture_id, class_count, input_length, base_width):
    if architecture_id == "emo18_style":
        return _ConvRecurrentNet((base_width, 2 * base_width, 4 * base_width),
                                 kernel_size=8, pool=4,
                                 class_count=class_count, input_length=input_length)
    if architecture_id == "zhao19_style":
        return _ConvRecurrentNet((base_width, base_width, 2 * base_width, 2 * base_width),
                                 kernel_size=3, pool=4,
                                 class_count=class_count, input_length=input_length)
    raise ValueError(f"unknown architecture_id {architecture_id!r}")


@dataclass
class Classifier:
    """A waveform-in, logits-out emotion classifier plus its metadata."""

    architecture_id: str
    class_count: int
    input_length: int
    net: nn.Module
    metadata: dict = field(default_factory=dict)

    def logits(self, waveforms):
        """Forward pass returning (batch, class_count) logits.

        Differentiable with respect to the input; callers that only need
        predictions should use `predict`. A single waveform may be passed
        as a 1-D array.
        """
        x = waveforms if isinstance(waveforms, torch.Tensor) else torch.as_tensor(
            np.asarray(waveforms), dtype=next(self.net.parameters()).dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x.unsqueeze(0)
        self.net.eval()
        out = self.net(x)
        return out.squeeze(0) if squeeze else out

    def predict(self, waveforms) -> np.ndarray:
        with torch.no_grad():
            out = self.logits(waveforms)
        if out.ndim == 1:
            return np.asarray(int(out.argmax().item()))
        return out.argmax(dim=1).cpu().numpy()

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def build_classifier(architecture_id: str, class_count: int, input_length: int,
                     base_width: int = 64, seed: int | None = None) -> Classifier:
    """Construct an untrained classifier with the named topology.

    `base_width` scales the conv channel widths; the default matches the
    stock recipes, smaller values trade accuracy headroom for CPU speed.
    """
    if class_count < 2:
        raise ValueError("class_count must be at least 2")
    if seed is not None:
        torch.manual_seed(seed)
    net = _build_net(architecture_id, class_count, input_length, base_width)
    clf = Classifier(architecture_id, class_count, input_length, net,
                     metadata={"base_width": base_width, "seed": seed})
    clf.metadata["parameter_count"] = clf.parameter_count
    return clf


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _stack(clips: list[AudioClip]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.stack([c.samples for c in clips]), dtype=torch.float32)
    y = torch.as_tensor([c.label for c in clips], dtype=torch.long)
    return x, y


def evaluate_uar(model: Classifier, clips: list[AudioClip], batch_size: int = 32) -> float:
    """UAR of the model's predictions over the given clips."""
    preds = []
    with torch.no_grad():
        for start in range(0, len(clips), batch_size):
            x, _ = _stack(clips[start:start + batch_size])
            preds.extend(model.net(x).argmax(dim=1).tolist())
    return uar(preds, [c.label for c in clips])


def train_classifier(model: Classifier, corpus: list[AudioClip], cfg: TrainConfig) -> Classifier:
    """Train with cross-entropy/Adam, keeping the epoch with best validation UAR.

    The corpus must contain nonempty train and val splits. Per-epoch history
    (train loss, val UAR) is stored in `model.metadata["history"]`.
    """
    train = split_clips(corpus, "train")
    val = split_clips(corpus, "val")
    if not train or not val:
        raise ValueError("corpus must contain nonempty train and val splits")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model.net.train()
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.learning_rate)
    ce = nn.CrossEntropyLoss()
    best_uar, best_state, best_epoch = -1.0, None, -1
    history = []
    for epoch in range(cfg.epochs):
        model.net.train()
        losses = []
        for idx in _batches(len(train), cfg.batch_size, rng):
            x, y = _stack([train[i] for i in idx])
            opt.zero_grad()
            loss = ce(model.net(x), y)
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
        model.net.eval()
        val_uar = evaluate_uar(model, val)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_uar": val_uar})
        if val_uar > best_uar:
            best_uar, best_epoch = val_uar, epoch
            best_state = copy.deepcopy(model.net.state_dict())
    model.net.load_state_dict(best_state)
    model.net.eval()
    model.metadata.update({
        "history": history, "val_uar": best_uar, "best_epoch": best_epoch,
        "train_config": {"batch_size": cfg.batch_size, "learning_rate": cfg.learning_rate,
                         "epochs": cfg.epochs, "seed": cfg.seed},
    })
    return model


def uar(predictions, truths, n_classes: int | None = None) -> float:
    """Unweighted average recall: the mean of per-class recalls.

    Robust to class imbalance. When `n_classes` is given, every class index
    in range must occur in `truths` (recall is undefined otherwise).
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths must have equal length")
    if predictions.size == 0:
        raise ValueError("uar of empty inputs is undefined")
    classes = np.unique(truths)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(classes.tolist()))
        if missing:
            raise ValueError(f"recall undefined for classes with no truth instances: {missing}")
    recalls = [float(np.mean(predictions[truths == c] == c)) for c in classes]
    return float(np.mean(recalls))


def save_checkpoint(model: Classifier, out_dir) -> Path:
    """Write `weights` + `meta.json` into a checkpoint directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.net.state_dict(), out_dir / "weights")
    meta = {
        "architecture_id": model.architecture_id,
        "class_count": model.class_count,
        "input_length": model.input_length,
        "seed": model.metadata.get("seed"),
        "base_width": model.metadata.get("base_width", 64),
        "val_uar": model.metadata.get("val_uar"),
        "parameter_count": model.metadata.get("parameter_count"),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2))
    return out_dir


def load_checkpoint(ckpt_dir) -> Classifier:
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"not a classifier checkpoint (no meta.json): {ckpt_dir}")
    meta = json.loads(meta_path.read_text())
    model = build_classifier(meta["architecture_id"], meta["class_count"],
                             meta["input_length"], base_width=meta.get("base_width", 64))
    state = torch.load(ckpt_dir / "weights", weights_only=True)
    model.net.load_state_dict(state)
    model.net.eval()
    model.metadata.update(meta)
    return model
