"""Named experiment presets.

`demos_like` and `iemocap_like` carry the published attack settings for the
two reference corpora (their audio is licensed and must be supplied as a
manifest); the synthetic presets are self-contained and runnable anywhere.
All capacity/epoch numbers in the synthetic presets are sized for a single
CPU core.
"""

from __future__ import annotations

import copy

_BASE = {
    "seed": 7,
    "corpus": {"dir": "corpus", "sample_rate": 16000, "duration_s": 0.5},
    "model": {"dir": "threat", "architecture": "emo18_style", "base_width": 32,
              "batch_size": 8, "learning_rate": 1e-3, "epochs": 10},
    "attack": {"epsilon": 0.05, "gamma": 0.5, "confidence": 0.0,
               "lambda_m": 1e-3, "lambda_s": 1e-4, "lambda_q": 1e-4,
               "k": 16, "max_iters": 20},
    "generator": {"dir": "generator", "threat_model": "threat",
                  "depth": 4, "base_channels": 8, "kernel_size": 5,
                  "epochs": 20, "learning_rate": 1e-4, "lr_decay": 0.5,
                  "lr_decay_every": 5, "batch_size": 8},
    "eval": {"dir": "attack", "attacker": "generator", "split": "test",
             "victims": [], "formats": ["markdown", "csv", "json"]},
}


def _merged(**overrides) -> dict:
    cfg = copy.deepcopy(_BASE)
    for section, vals in overrides.items():
        if isinstance(vals, dict):
            cfg.setdefault(section, {}).update(vals)
        else:
            cfg[section] = vals
    return cfg


PRESETS = {
    # published settings for the licensed corpora; point corpus.manifest at
    # the prepared CSV before use
    "demos_like": _merged(
        corpus={"duration_s": 6.0, "manifest": None},
        model={"base_width": 64, "epochs": 30},
        attack={"epsilon": 0.05},
        generator={"base_channels": 24, "kernel_size": 15},
    ),
    # same, with the smaller bound and loss weights scaled down by 10x
    "iemocap_like": _merged(
        corpus={"duration_s": 8.7, "manifest": None},
        model={"base_width": 64, "epochs": 30},
        attack={"epsilon": 0.01, "lambda_m": 1e-4, "lambda_s": 1e-5,
                "lambda_q": 1e-5},
        generator={"base_channels": 24, "kernel_size": 15},
    ),
    # 200-clip demo corpus, fast to prepare and attack
    "synthetic": _merged(
        corpus={"synthetic": {"classes": 4, "n_per_class": 50}},
        model={"epochs": 8},
        generator={"epochs": 8, "max_train_clips": 120, "max_val_clips": 40},
    ),
    # full synthetic experiment: 1000 clips, 200-clip test split
    "synthetic_full": _merged(
        corpus={"synthetic": {"classes": 4, "n_per_class": 250}},
        model={"epochs": 10},
        generator={"epochs": 20, "max_train_clips": 240, "max_val_clips": 80},
    ),
    # minutes-scale smoke run
    "synthetic_smoke": _merged(
        corpus={"synthetic": {"classes": 2, "n_per_class": 16},
                "duration_s": 0.25},
        model={"base_width": 8, "epochs": 2},
        generator={"depth": 3, "base_channels": 4, "epochs": 2},
        eval={"limit": 8},
    ),
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
