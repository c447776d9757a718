"""Attack metrics and report assembly.

Quality of an attack is summarized by attack success rate (ASR), the
peak-ratio signal-to-noise of the perturbation in dB, the percentage of
perturbed positions (sparsity), and per-example wall-clock speed. SNR and
sparsity are averaged over successful examples only; cells without any
successful example render as "--".
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .baselines import AttackResult
from .models import Classifier


def snr_db(x, delta) -> float:
    """20 * log10 of the original peak over the perturbation peak."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    peak_delta = float(np.max(np.abs(delta)))
    if peak_delta == 0.0:
        raise ValueError("SNR undefined for an all-zero perturbation")
    peak_x = float(np.max(np.abs(x)))
    return 20.0 * math.log10(peak_x / peak_delta)


def sparsity_pct(delta, n: int, tol: float = 0.0) -> float:
    """Percentage of perturbed positions: 100 * |{i : |delta_i| > tol}| / n."""
    if n <= 0:
        raise ValueError("n must be positive")
    delta = np.asarray(delta)
    return 100.0 * float(np.sum(np.abs(delta) > tol)) / n


def attack_success_rate(results: list[AttackResult]) -> float:
    """Fraction of attacked examples whose prediction ends up wrong."""
    if not results:
        raise ValueError("attack_success_rate of an empty result list is undefined")
    return float(np.mean([bool(r.success) for r in results]))


@dataclass
class ReportRow:
    """Aggregated metrics for one (threat, attacker, victim, split) cell.

    `asr` counts every evaluated example in its denominator; `asr_clean`
    restricts it to examples the victim classified correctly before the
    attack. Metric fields are None (rendered "--") when no example in the
    cell succeeded.
    """

    threat_model: str
    attacker: str
    victim_model: str
    split: str
    asr: float
    asr_clean: float | None = None
    mean_snr_db: float | None = None
    mean_sparsity_pct: float | None = None
    mean_support_count: float | None = None
    mean_speed_s: float | None = None
    n_examples: int = 0

    def __post_init__(self):
        if not (0.0 <= self.asr <= 1.0):
            raise ValueError(f"asr {self.asr} outside [0, 1]")


@dataclass
class EvaluationReport:
    rows: list[ReportRow] = field(default_factory=list)

    def sorted_rows(self) -> list[ReportRow]:
        return sorted(self.rows, key=lambda r: (r.threat_model, r.attacker,
                                                r.victim_model, r.split))

    def __eq__(self, other):
        if not isinstance(other, EvaluationReport):
            return NotImplemented
        return [asdict(r) for r in self.sorted_rows()] == [asdict(r) for r in other.sorted_rows()]


def summarize_results(results: list[AttackResult], clips_by_id: dict,
                      threat_model: str, attacker: str, victim_model: str,
                      split: str, delta_tol: float = 0.0,
                      include_speed: bool = True) -> ReportRow:
    """Aggregate per-example results into one report row.

    SNR needs the original waveforms, looked up by clip id. `delta_tol` is
    the nonzero threshold for sparsity (0 for exactly-sparse generators, a
    tiny positive value to absorb float rounding in iterative attacks).
    """
    if not results:
        raise ValueError("cannot summarize an empty result list")
    asr = attack_success_rate(results)
    clean = [r for r in results if r.original_pred == r.true_label]
    asr_clean = (float(np.mean([r.success for r in clean])) if clean else None)
    snrs, sparsities, supports = [], [], []
    for r in results:
        if not r.success:
            continue
        n = r.delta.shape[0]
        sparsities.append(sparsity_pct(r.delta, n, tol=delta_tol))
        supports.append(float(np.sum(np.abs(r.delta) > delta_tol)))
        if np.any(r.delta != 0.0):
            snrs.append(snr_db(clips_by_id[r.clip_id].samples, r.delta))
    return ReportRow(
        threat_model=threat_model, attacker=attacker, victim_model=victim_model,
        split=split, asr=asr, asr_clean=asr_clean,
        mean_snr_db=float(np.mean(snrs)) if snrs else None,
        mean_sparsity_pct=float(np.mean(sparsities)) if sparsities else None,
        mean_support_count=float(np.mean(supports)) if supports else None,
        mean_speed_s=(float(np.mean([r.wall_clock_s for r in results]))
                      if include_speed else None),
        n_examples=len(results),
    )


def transfer_matrix(adv_examples, victims: list[tuple[str, Classifier]],
                    threat_model: str, attacker: str, split: str,
                    delta_tol: float = 0.0, batch_size: int = 32) -> list[ReportRow]:
    """Evaluate crafted examples against each victim in a black-box manner.

    `adv_examples` is a list of (clip, x_adv) pairs. Per victim, success is
    a prediction flip between the clean and the adversarial waveform; the
    secondary `asr_clean` counts flips among clips the victim got right.
    """
    if not adv_examples:
        raise ValueError("transfer_matrix needs at least one adversarial example")
    n = adv_examples[0][0].samples.shape[0]
    for _, x_adv in adv_examples:
        if np.asarray(x_adv).shape[0] != n:
            raise ValueError("adversarial examples must share one input length")
    rows = []
    x_clean = np.stack([c.samples for c, _ in adv_examples])
    x_adv = np.stack([np.asarray(a, dtype=np.float32) for _, a in adv_examples])
    labels = np.asarray([c.label for c, _ in adv_examples])
    for victim_name, victim in victims:
        if victim.input_length != n:
            raise ValueError(f"victim {victim_name} expects input length "
                             f"{victim.input_length}, examples have {n}")
        preds_clean, preds_adv = [], []
        for start in range(0, len(adv_examples), batch_size):
            preds_clean.extend(victim.predict(x_clean[start:start + batch_size]).tolist())
            preds_adv.extend(victim.predict(x_adv[start:start + batch_size]).tolist())
        preds_clean = np.asarray(preds_clean)
        preds_adv = np.asarray(preds_adv)
        flips = preds_adv != preds_clean
        correct = preds_clean == labels
        snrs, sparsities, supports = [], [], []
        for i in np.flatnonzero(flips):
            delta = x_adv[i].astype(np.float64) - x_clean[i].astype(np.float64)
            sparsities.append(sparsity_pct(delta, n, tol=delta_tol))
            supports.append(float(np.sum(np.abs(delta) > delta_tol)))
            if np.any(delta != 0.0):
                snrs.append(snr_db(x_clean[i], delta))
        rows.append(ReportRow(
            threat_model=threat_model, attacker=attacker, victim_model=victim_name,
            split=split, asr=float(np.mean(flips)),
            asr_clean=float(np.mean(flips[correct])) if correct.any() else None,
            mean_snr_db=float(np.mean(snrs)) if snrs else None,
            mean_sparsity_pct=float(np.mean(sparsities)) if sparsities else None,
            mean_support_count=float(np.mean(supports)) if supports else None,
            mean_speed_s=None,
            n_examples=len(adv_examples),
        ))
    return rows


_COLUMNS = [
    ("Threat Model", "threat_model"), ("Attacker", "attacker"),
    ("Victim", "victim_model"), ("Split", "split"),
    ("ASR (%)", "asr"), ("ASR-clean (%)", "asr_clean"),
    ("SNR (dB)", "mean_snr_db"), ("Sparsity (%)", "mean_sparsity_pct"),
    ("Support (#)", "mean_support_count"), ("Speed (s)", "mean_speed_s"),
    ("N", "n_examples"),
]
_PERCENT_FIELDS = {"asr", "asr_clean"}


def _cell(row: ReportRow, attr: str) -> str:
    val = getattr(row, attr)
    if val is None:
        return "--"
    if isinstance(val, str):
        return val
    if attr in _PERCENT_FIELDS:
        return f"{100.0 * val:.2f}"
    if attr == "n_examples":
        return str(val)
    if attr == "mean_speed_s":
        return f"{val:.4f}"
    return f"{val:.2f}"


def render_report(report: EvaluationReport, fmt: str = "markdown") -> str:
    """Render an EvaluationReport deterministically as markdown, csv, or json.

    Rows are ordered by (threat, attacker, victim, split); absent metric
    cells render as "--" in the tabular formats and null in json.
    """
    rows = report.sorted_rows()
    if not rows:
        raise ValueError("cannot render an empty report")
    if fmt == "markdown":
        header = "| " + " | ".join(name for name, _ in _COLUMNS) + " |"
        sep = "|" + "|".join(["---"] * len(_COLUMNS)) + "|"
        lines = [header, sep]
        for r in rows:
            lines.append("| " + " | ".join(_cell(r, attr) for _, attr in _COLUMNS) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([attr for _, attr in _COLUMNS])
        for r in rows:
            writer.writerow([("--" if getattr(r, attr) is None else getattr(r, attr))
                             for _, attr in _COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([asdict(r) for r in rows], indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> EvaluationReport:
    """Inverse of render_report(..., 'csv')."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = []
    for rec in reader:
        if not rec:
            continue
        kwargs = {}
        for attr, cell in zip(header, rec):
            if cell == "--":
                kwargs[attr] = None
            elif attr in ("threat_model", "attacker", "victim_model", "split"):
                kwargs[attr] = cell
            elif attr == "n_examples":
                kwargs[attr] = int(cell)
            else:
                kwargs[attr] = float(cell)
        rows.append(ReportRow(**kwargs))
    return EvaluationReport(rows)


def parse_report_json(text: str) -> EvaluationReport:
    return EvaluationReport([ReportRow(**rec) for rec in json.loads(text)])
