"""Experiment orchestration: corpus preparation, model/generator training,
attack runs, ablations, and report emission from a declarative config.

A config is a nested dict (usually parsed from YAML) with `corpus`, `model`,
`attack`, `generator`, and `eval` sections; relative artifact directories
resolve against the SPARSETONE_OUT environment variable when set, else the
current working directory. The top-level seed feeds every stochastic
component through fixed per-role offsets, so a rerun with the same config
reproduces every non-timing report value bitwise.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from .baselines import ATTACKS, AttackResult, write_results_jsonl
from .corpus import (AudioClip, load_corpus, load_manifest, split_clips,
                     synthesize_corpus, export_corpus)
from .evaluation import (EvaluationReport, render_report, summarize_results,
                         transfer_matrix)
from .generator import (GeneratorConfig, GeneratorTrainConfig, build_generator,
                        generate, load_generator, save_generator, train_generator)
from .losses import AttackConfig
from .models import (Classifier, TrainConfig, build_classifier, load_checkpoint,
                     save_checkpoint, train_classifier)

ENV_OUT_ROOT = "SPARSETONE_OUT"

# fixed seed offsets per stochastic role
SEED_CORPUS = 0
SEED_MODEL = 1
SEED_GENERATOR = 3
SEED_ATTACK = 4
SEED_NOISE_CONTROL = 5

ABLATION_VARIANTS = ("no_factorization", "no_magnitude_loss",
                     "no_sparsity_loss", "no_quantization_loss")

BASELINE_DELTA_TOL = 1e-12


class ExperimentError(RuntimeError):
    """A prerequisite artifact is missing or a config section is invalid."""


def resolve_path(path) -> Path:
    path = Path(path)
    if path.is_absolute():
        return path
    root = os.environ.get(ENV_OUT_ROOT)
    return (Path(root) / path) if root else path


def _section(config: dict, name: str) -> dict:
    if name not in config or not isinstance(config[name], dict):
        raise ExperimentError(f"config is missing the '{name}' section")
    return config[name]


def attack_config_from(config: dict) -> AttackConfig:
    att = dict(_section(config, "attack"))
    att.setdefault("seed", int(config.get("seed", 0)) + SEED_ATTACK)
    return AttackConfig(**att)


def generator_configs_from(config: dict, input_length: int):
    gen = dict(_section(config, "generator"))
    gen.pop("threat_model", None)
    gen.pop("dir", None)
    att = attack_config_from(config)
    train_keys = ("epochs", "learning_rate", "lr_decay", "lr_decay_every",
                  "batch_size", "max_train_clips", "max_val_clips")
    train_kwargs = {k: gen.pop(k) for k in train_keys if k in gen}
    train_kwargs.setdefault("seed", int(config.get("seed", 0)) + SEED_GENERATOR)
    gcfg = GeneratorConfig(epsilon=att.epsilon, gamma=att.gamma, **gen)
    return gcfg, GeneratorTrainConfig(**train_kwargs), input_length


def corpus_target_len(config: dict) -> int:
    corpus = _section(config, "corpus")
    rate = int(corpus.get("sample_rate", 16000))
    duration = corpus.get("duration_s")
    if duration is None:
        raise ExperimentError("corpus section needs duration_s")
    return int(round(float(duration) * rate))


def prepare_corpus(config: dict) -> Path:
    """Materialize the corpus as WAVs plus manifest; returns the manifest path.

    Synthetic corpora are generated from the seed (idempotent: a rerun writes
    identical bytes). Manifest-based corpora are preprocessed (resample,
    peak-normalize, unify length) and re-exported.
    """
    corpus_cfg = _section(config, "corpus")
    out_dir = resolve_path(corpus_cfg.get("dir", "corpus"))
    rate = int(corpus_cfg.get("sample_rate", 16000))
    duration = float(corpus_cfg["duration_s"])
    if "synthetic" in corpus_cfg:
        syn = corpus_cfg["synthetic"]
        clips = synthesize_corpus(int(config.get("seed", 0)) + SEED_CORPUS,
                                  int(syn["n_per_class"]), int(syn["classes"]),
                                  duration, rate)
        class_names = syn.get("class_names") or [f"class{k}" for k in
                                                 range(int(syn["classes"]))]
        return export_corpus(clips, out_dir, class_names)
    if "manifest" in corpus_cfg:
        src = resolve_path(corpus_cfg["manifest"])
        if not src.exists():
            raise ExperimentError(f"corpus manifest not found: {src}")
        manifest = load_manifest(src, class_names=corpus_cfg.get("class_names"),
                                 target_duration_s=duration, sample_rate=rate)
        clips = load_corpus(manifest, normalize=corpus_cfg.get("normalize", True))
        return export_corpus(clips, out_dir, manifest.class_names)
    raise ExperimentError("corpus section needs either 'synthetic' or 'manifest'")


def load_prepared_corpus(config: dict) -> tuple[list[AudioClip], list[str]]:
    corpus_cfg = _section(config, "corpus")
    out_dir = resolve_path(corpus_cfg.get("dir", "corpus"))
    manifest_path = out_dir / "manifest.csv"
    if not manifest_path.exists():
        raise ExperimentError(
            f"prepared corpus not found at {out_dir} (run the prepare step first)")
    manifest = load_manifest(manifest_path,
                             target_duration_s=float(corpus_cfg["duration_s"]),
                             sample_rate=int(corpus_cfg.get("sample_rate", 16000)))
    # prepared WAVs are already normalized and length-unified
    return load_corpus(manifest, normalize=False), manifest.class_names


def train_model_command(config: dict) -> Path:
    """Train the configured classifier on the prepared corpus; returns ckpt dir."""
    model_cfg = _section(config, "model")
    clips, class_names = load_prepared_corpus(config)
    target_len = corpus_target_len(config)
    seed = int(model_cfg.get("seed", int(config.get("seed", 0)) + SEED_MODEL))
    model = build_classifier(model_cfg.get("architecture", "emo18_style"),
                             len(class_names), target_len,
                             base_width=int(model_cfg.get("base_width", 64)),
                             seed=seed)
    tcfg = TrainConfig(batch_size=int(model_cfg.get("batch_size", 8)),
                       learning_rate=float(model_cfg.get("learning_rate", 1e-3)),
                       epochs=int(model_cfg.get("epochs", 30)), seed=seed)
    model = train_classifier(model, clips, tcfg)
    out_dir = resolve_path(model_cfg.get("dir", "threat"))
    save_checkpoint(model, out_dir)
    _write_history_log(out_dir / "train_log.jsonl", model.metadata["history"])
    return out_dir


def _write_history_log(path: Path, history: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")


def _load_threat(config: dict) -> tuple[Classifier, str]:
    gen_cfg = _section(config, "generator")
    threat_dir = resolve_path(gen_cfg.get("threat_model", "threat"))
    if not (threat_dir / "meta.json").exists():
        raise ExperimentError(
            f"threat model checkpoint not found at {threat_dir} "
            "(train it with the train-model step first)")
    return load_checkpoint(threat_dir), threat_dir.name


def train_generator_command(config: dict, loss_variant: str = "full",
                            out_dir=None) -> Path:
    """Train the perturbation generator against the threat model checkpoint."""
    clips, _ = load_prepared_corpus(config)
    threat, threat_id = _load_threat(config)
    target_len = corpus_target_len(config)
    gcfg, tcfg, _ = generator_configs_from(config, target_len)
    factorized = loss_variant != "no_factorization"
    gen = build_generator(gcfg, target_len, factorized=factorized)
    att = attack_config_from(config)
    gen = train_generator(gen, threat, clips, att, tcfg, loss_variant=loss_variant)
    if out_dir is None:
        out_dir = _section(config, "generator").get("dir", "generator")
    out_dir = resolve_path(out_dir)
    save_generator(gen, out_dir, threat_id=threat_id)
    _write_history_log(out_dir / "train_log.jsonl", gen.train_history)
    return out_dir


def generator_attack_results(generator, threat: Classifier,
                             clips: list[AudioClip]) -> list[AttackResult]:
    """Run the generator one clip at a time, timing the single-invocation path."""
    results = []
    for clip in clips:
        x64 = clip.samples.astype(np.float64)
        original = int(threat.predict(clip.samples))
        t0 = time.perf_counter()
        factors, x_adv = generate(generator, clip.samples, mode="infer")
        wall = time.perf_counter() - t0
        pred = int(threat.predict(x_adv))
        results.append(AttackResult(
            clip_id=clip.clip_id, original_pred=original, adversarial_pred=pred,
            success=(pred != clip.label),
            delta=(x_adv.astype(np.float64) - x64),
            iterations_used=1, wall_clock_s=wall, true_label=clip.label))
    return results


def baseline_attack_results(attacker: str, threat: Classifier,
                            clips: list[AudioClip], cfg: AttackConfig) -> list[AttackResult]:
    attack_fn = ATTACKS[attacker]
    return [attack_fn(threat, clip.samples, clip.label, cfg, clip_id=clip.clip_id)
            for clip in clips]


def adversarial_pairs(clips: list[AudioClip],
                      results: list[AttackResult]) -> list[tuple[AudioClip, np.ndarray]]:
    by_id = {c.clip_id: c for c in clips}
    pairs = []
    for r in results:
        clip = by_id[r.clip_id]
        x_adv = np.clip(clip.samples.astype(np.float64) + r.delta, -1.0, 1.0)
        pairs.append((clip, x_adv.astype(np.float32)))
    return pairs


def matched_noise_pairs(clips: list[AudioClip], results: list[AttackResult],
                        rng) -> list[tuple[AudioClip, np.ndarray]]:
    """Random-noise control: per example, same support size and peak as delta.

    Noise places +-peak values (random sign) on a fresh random support of the
    same cardinality, giving a control attack with matched infinity norm and
    sparsity for transfer comparisons.
    """
    by_id = {c.clip_id: c for c in clips}
    pairs = []
    for r in results:
        clip = by_id[r.clip_id]
        n = r.delta.shape[0]
        support_size = int(np.sum(r.delta != 0.0))
        noise = np.zeros(n)
        if support_size:
            peak = float(np.max(np.abs(r.delta)))
            idx = rng.choice(n, size=support_size, replace=False)
            noise[idx] = peak * rng.choice([-1.0, 1.0], size=support_size)
        x_ctrl = np.clip(clip.samples.astype(np.float64) + noise, -1.0, 1.0)
        pairs.append((clip, x_ctrl.astype(np.float32)))
    return pairs


def _load_victims(config: dict, threat_dir_name: str) -> list[tuple[str, Classifier]]:
    victims = []
    for path in _section(config, "eval").get("victims", []):
        vdir = resolve_path(path)
        if not (vdir / "meta.json").exists():
            raise ExperimentError(f"victim checkpoint not found at {vdir}")
        if vdir.name == threat_dir_name:
            continue
        victims.append((vdir.name, load_checkpoint(vdir)))
    return victims


def attack_command(config: dict, limit: int | None = None) -> tuple[Path, EvaluationReport]:
    """Run the configured attacker(s) over a split and write results + reports.

    Emits one JSONL of per-example results per attacker plus report.md/csv/json
    in the eval output directory. The white-box row comes from the attack
    outcomes; additional victims are evaluated as black-box transfer.
    """
    eval_cfg = _section(config, "eval")
    clips, _ = load_prepared_corpus(config)
    threat, threat_id = _load_threat(config)
    split = eval_cfg.get("split", "test")
    subset = split_clips(clips, split)
    limit = limit if limit is not None else eval_cfg.get("limit")
    if limit:
        subset = subset[:int(limit)]
    if not subset:
        raise ExperimentError(f"no clips in split {split!r}")
    attacker_id = eval_cfg.get("attacker", "generator")
    attackers = (["generator", "pgd", "sparsefool", "onepixel"]
                 if attacker_id == "all" else [attacker_id])
    cfg = attack_config_from(config)
    victims = _load_victims(config, threat_id)
    out_dir = resolve_path(eval_cfg.get("dir", "attack"))
    out_dir.mkdir(parents=True, exist_ok=True)

    report = EvaluationReport()
    for attacker in attackers:
        if attacker == "generator":
            gen_dir = resolve_path(_section(config, "generator").get("dir", "generator"))
            if not (gen_dir / "meta.json").exists():
                raise ExperimentError(
                    f"generator checkpoint not found at {gen_dir} "
                    "(train it with the train-generator step first)")
            generator = load_generator(gen_dir)
            results = generator_attack_results(generator, threat, subset)
            tol = 0.0
        elif attacker in ATTACKS:
            results = baseline_attack_results(attacker, threat, subset, cfg)
            tol = BASELINE_DELTA_TOL
        else:
            raise ExperimentError(f"unknown attacker {attacker!r}")
        write_results_jsonl(results, out_dir / f"results_{attacker}.jsonl")
        clips_by_id = {c.clip_id: c for c in subset}
        report.rows.append(summarize_results(results, clips_by_id, threat_id,
                                             attacker, threat_id, split,
                                             delta_tol=tol))
        if victims:
            pairs = adversarial_pairs(subset, results)
            report.rows.extend(transfer_matrix(pairs, victims, threat_id,
                                               attacker, split, delta_tol=tol))
    write_report_files(report, out_dir, eval_cfg.get("formats"))
    if eval_cfg.get("plots"):
        from .plots import plot_attack_examples
        gen_dir = resolve_path(_section(config, "generator").get("dir", "generator"))
        if (gen_dir / "meta.json").exists():
            generator = load_generator(gen_dir)
            plot_attack_examples(generator, subset[:4], out_dir / "plots")
    return out_dir, report


def write_report_files(report: EvaluationReport, out_dir: Path,
                       formats=None) -> list[Path]:
    formats = formats or ["markdown", "csv", "json"]
    ext = {"markdown": "md", "csv": "csv", "json": "json"}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out_dir / f"report.{ext[fmt]}"
        path.write_text(render_report(report, fmt), encoding="utf-8")
        written.append(path)
    return written


def run_ablation(config: dict, variants=ABLATION_VARIANTS,
                 epochs: int | None = None) -> tuple[Path, EvaluationReport]:
    """Train and evaluate the ablated generator variants next to the full run.

    Requires the full generator checkpoint (the comparison baseline) to exist.
    Each variant is trained with the same data/seed and evaluated on the same
    split; the report carries one row per variant plus the full run.
    """
    eval_cfg = _section(config, "eval")
    gen_dir = resolve_path(_section(config, "generator").get("dir", "generator"))
    if not (gen_dir / "meta.json").exists():
        raise ExperimentError(
            f"baseline generator checkpoint not found at {gen_dir}; "
            "run train-generator before the ablation")
    clips, _ = load_prepared_corpus(config)
    threat, threat_id = _load_threat(config)
    split = eval_cfg.get("split", "test")
    subset = split_clips(clips, split)
    out_dir = resolve_path(eval_cfg.get("dir", "attack")) / "ablation"
    out_dir.mkdir(parents=True, exist_ok=True)

    if epochs is not None:
        config = dict(config)
        config["generator"] = dict(config["generator"], epochs=int(epochs))

    report = EvaluationReport()
    clips_by_id = {c.clip_id: c for c in subset}
    full_gen = load_generator(gen_dir)
    results = generator_attack_results(full_gen, threat, subset)
    report.rows.append(summarize_results(results, clips_by_id, threat_id,
                                         "generator", threat_id, split))
    for variant in variants:
        if variant not in ABLATION_VARIANTS:
            raise ExperimentError(f"unknown ablation variant {variant!r}")
        vdir = train_generator_command(config, loss_variant=variant,
                                       out_dir=out_dir / variant)
        gen = load_generator(vdir)
        results = generator_attack_results(gen, threat, subset)
        report.rows.append(summarize_results(results, clips_by_id, threat_id,
                                             f"generator[{variant}]", threat_id,
                                             split))
    write_report_files(report, out_dir, eval_cfg.get("formats"))
    return out_dir, report


def speed_benchmark(generator, threat: Classifier, clips: list[AudioClip],
                    cfg: AttackConfig, n_examples: int = 100) -> dict:
    """Mean per-example wall clock: one generator forward vs full-budget PGD.

    PGD runs its whole iteration budget (no early stop) so the comparison is
    against the stated step count; both sides run one example at a time.
    """
    subset = clips[:n_examples]
    if len(subset) < n_examples:
        raise ValueError(f"need at least {n_examples} clips, got {len(subset)}")
    from dataclasses import replace
    gen_times, pgd_times = [], []
    full_budget = replace(cfg, early_stop=False)
    for clip in subset:
        t0 = time.perf_counter()
        generate(generator, clip.samples, mode="infer")
        gen_times.append(time.perf_counter() - t0)
    for clip in subset:
        t0 = time.perf_counter()
        ATTACKS["pgd"](threat, clip.samples, clip.label, full_budget,
                       clip_id=clip.clip_id)
        pgd_times.append(time.perf_counter() - t0)
    return {
        "generator_mean_s": float(np.mean(gen_times)),
        "pgd_mean_s": float(np.mean(pgd_times)),
        "speedup": float(np.mean(pgd_times) / np.mean(gen_times)),
        "n_examples": len(subset),
        "pgd_steps": full_budget.max_iters,
    }
