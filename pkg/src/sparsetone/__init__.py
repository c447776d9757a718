"""Sparse adversarial perturbation lab for end-to-end speech emotion classifiers.

Builds small conv-recurrent emotion classifiers on raw waveforms, attacks
them with a single-forward-pass factorized sparse perturbation generator and
with iterative sparse baselines (sparse PGD, 1-D SparseFool, one-sample DE),
and evaluates success rate, SNR, sparsity, speed, and cross-model transfer.
"""

from .corpus import (AudioClip, CorpusManifest, load_manifest, load_corpus,
                     pad_or_trim, resample, synthesize_corpus, export_corpus)
from .losses import (AttackConfig, adversarial_loss, magnitude_loss,
                     sparsity_loss, quantization_loss, overall_loss)
from .models import (Classifier, TrainConfig, build_classifier,
                     train_classifier, uar, save_checkpoint, load_checkpoint)
from .generator import (GeneratorConfig, GeneratorTrainConfig, PerturbationFactors,
                        WaveUNetGenerator, build_generator, clip_magnitudes,
                        quantize_mask, generate, train_generator,
                        save_generator, load_generator)
from .baselines import (AttackResult, sparse_pgd, sparsefool_1d, one_pixel_1d,
                        write_results_jsonl, read_results_jsonl)
from .evaluation import (EvaluationReport, ReportRow, snr_db, sparsity_pct,
                         attack_success_rate, transfer_matrix, render_report,
                         parse_report_csv, parse_report_json)

__version__ = "0.1.0"
