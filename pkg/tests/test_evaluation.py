"""Metric oracles, aggregation rules, transfer evaluation, and report formats."""

import math

import numpy as np
import pytest

from sparsetone.baselines import AttackResult, sparse_pgd
from sparsetone.corpus import AudioClip
from sparsetone.evaluation import (EvaluationReport, ReportRow,
                                   attack_success_rate, parse_report_csv,
                                   parse_report_json, render_report, snr_db,
                                   sparsity_pct, summarize_results,
                                   transfer_matrix)
from sparsetone.losses import AttackConfig

from helpers import linear_classifier

TOL = 1e-9


def _result(clip_id="c", orig=0, adv=1, success=True, delta=None, n=16,
            iters=1, wall=0.1, y=0):
    if delta is None:
        delta = np.zeros(n)
        delta[3] = 0.01
    return AttackResult(clip_id, orig, adv, success, np.asarray(delta, dtype=np.float64),
                        iters, wall, y)


class TestSnrDb:
    def test_ten_to_one_peak_ratio(self):
        x = np.zeros(100)
        x[10] = 0.5
        delta = np.zeros(100)
        delta[50] = 0.05
        assert abs(snr_db(x, delta) - 20.0) < TOL

    def test_equal_peaks(self):
        x = np.array([0.3, -0.1])
        delta = np.array([0.0, -0.3])
        assert abs(snr_db(x, delta) - 0.0) < TOL

    def test_zero_delta_rejected(self):
        with pytest.raises(ValueError):
            snr_db(np.ones(4), np.zeros(4))

    @pytest.mark.parametrize("c", [2.0, 10.0])
    def test_scaling_law(self, c):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.9, 0.9, 64)
        delta = rng.uniform(-0.05, 0.05, 64)
        drop = snr_db(x, delta) - snr_db(x, c * delta)
        assert abs(drop - 20.0 * math.log10(c)) < TOL


class TestSparsityPct:
    def test_hundred_of_sixteen_hundred(self):
        delta = np.zeros(1600)
        delta[:100] = 0.01
        assert abs(sparsity_pct(delta, 1600) - 6.25) < TOL

    def test_zero_delta(self):
        assert sparsity_pct(np.zeros(10), 10) == 0.0

    def test_fully_dense(self):
        assert sparsity_pct(np.full(10, 1e-3), 10) == 100.0

    def test_invariant_to_nonzero_rescaling(self):
        rng = np.random.default_rng(1)
        delta = rng.uniform(-1, 1, 50) * (rng.uniform(size=50) > 0.5)
        for c in (0.5, 3.0, 1e-4):
            assert sparsity_pct(c * delta, 50) == sparsity_pct(delta, 50)

    def test_tolerance_absorbs_rounding(self):
        delta = np.array([1e-13, 0.01, 0.0])
        assert sparsity_pct(delta, 3, tol=1e-12) == pytest.approx(100.0 / 3)


class TestAttackSuccessRate:
    def test_quarter(self):
        results = [_result(success=(i < 50)) for i in range(200)]
        assert abs(attack_success_rate(results) - 0.25) < TOL

    def test_all_success(self):
        assert attack_success_rate([_result(success=True)] * 3) == 1.0

    def test_none_success_and_absent_cells(self):
        results = [_result(success=False) for _ in range(4)]
        assert attack_success_rate(results) == 0.0
        clips = {"c": AudioClip(np.full(16, 0.5, dtype=np.float32), 16000, 0, "c", "test")}
        row = summarize_results(results, clips, "t", "a", "v", "test")
        assert row.mean_snr_db is None
        assert row.mean_sparsity_pct is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            attack_success_rate([])


class TestSummarize:
    def test_mean_snr_is_arithmetic_mean_over_successes(self):
        rng = np.random.default_rng(2)
        clips, results, per_example = {}, [], []
        for i in range(6):
            x = rng.uniform(-0.8, 0.8, 32).astype(np.float32)
            delta = np.zeros(32)
            delta[rng.integers(32)] = rng.uniform(0.01, 0.05)
            cid = f"c{i}"
            clips[cid] = AudioClip(x, 16000, 0, cid, "test")
            success = i % 2 == 0
            results.append(_result(clip_id=cid, success=success, delta=delta, n=32))
            if success:
                per_example.append(snr_db(x, delta))
        row = summarize_results(results, clips, "t", "a", "v", "test")
        assert abs(row.mean_snr_db - float(np.mean(per_example))) < TOL

    def test_asr_clean_restricted_to_initially_correct(self):
        clips = {f"c{i}": AudioClip(np.full(8, 0.1, dtype=np.float32), 16000, 0,
                                    f"c{i}", "test") for i in range(4)}
        results = [
            _result(clip_id="c0", orig=0, adv=1, success=True, y=0),
            _result(clip_id="c1", orig=0, adv=0, success=False, y=0),
            _result(clip_id="c2", orig=1, adv=1, success=True, y=0,
                    delta=np.zeros(16)),     # was already wrong
            _result(clip_id="c3", orig=0, adv=1, success=True, y=0),
        ]
        row = summarize_results(results, clips, "t", "a", "v", "test")
        assert abs(row.asr - 0.75) < TOL
        assert abs(row.asr_clean - 2.0 / 3.0) < TOL


class TestTransferMatrix:
    def _clips_and_advs(self, model, n=24, count=8, seed=3, flip_half=True):
        rng = np.random.default_rng(seed)
        pairs = []
        for i in range(count):
            x = rng.uniform(-0.6, 0.6, n)
            label = int(model.predict(x.astype(np.float64)))
            clip = AudioClip(x.astype(np.float32), 16000, label, f"c{i}", "test")
            pairs.append((clip, x.copy()))
        return pairs

    def test_identity_examples_never_transfer(self):
        rng = np.random.default_rng(4)
        model = linear_classifier(rng.normal(size=(3, 24)), np.zeros(3))
        pairs = self._clips_and_advs(model)
        rows = transfer_matrix(pairs, [("m", model)], "t", "gen", "test")
        assert rows[0].asr == 0.0

    def test_duplicated_victim_gives_identical_rows(self):
        rng = np.random.default_rng(5)
        model = linear_classifier(rng.normal(size=(2, 24)), np.zeros(2))
        pairs = self._clips_and_advs(model)
        noisy = [(c, np.clip(a + rng.uniform(-0.05, 0.05, a.size), -1, 1))
                 for c, a in pairs]
        rows = transfer_matrix(noisy, [("v1", model), ("v2", model)], "t", "gen", "test")
        a, b = rows
        assert (a.asr, a.mean_snr_db, a.mean_sparsity_pct) == (
            b.asr, b.mean_snr_db, b.mean_sparsity_pct)

    def test_whitebox_row_matches_attack_results(self):
        rng = np.random.default_rng(6)
        model = linear_classifier(rng.normal(size=(2, 32)), np.zeros(2))
        cfg = AttackConfig(epsilon=0.3, k=4, max_iters=6)
        pairs, results = [], []
        for i in range(10):
            x = rng.uniform(-0.6, 0.6, 32)
            y = int(model.predict(x))     # attack the model's own prediction
            r = sparse_pgd(model, x, y, cfg, clip_id=f"c{i}")
            clip = AudioClip(x.astype(np.float32), 16000, y, f"c{i}", "test")
            pairs.append((clip, x + r.delta))
            results.append(r)
        whitebox_asr = attack_success_rate(results)
        rows = transfer_matrix(pairs, [("threat", model)], "threat", "pgd", "test")
        assert abs(rows[0].asr - whitebox_asr) < TOL

    def test_input_length_mismatch_rejected(self):
        rng = np.random.default_rng(7)
        model = linear_classifier(rng.normal(size=(2, 24)), np.zeros(2))
        other = linear_classifier(rng.normal(size=(2, 48)), np.zeros(2))
        pairs = self._clips_and_advs(model)
        with pytest.raises(ValueError, match="length"):
            transfer_matrix(pairs, [("bad", other)], "t", "gen", "test")


class TestRenderReport:
    def _report(self):
        rows = [
            ReportRow("emo18", "pgd", "emo18", "test", asr=0.5, asr_clean=0.55,
                      mean_snr_db=17.5, mean_sparsity_pct=6.25,
                      mean_support_count=100.0, mean_speed_s=1.1, n_examples=200),
            ReportRow("emo18", "onepixel", "emo18", "test", asr=0.0, asr_clean=0.0,
                      mean_snr_db=None, mean_sparsity_pct=None,
                      mean_support_count=None, mean_speed_s=24.9, n_examples=200),
        ]
        return EvaluationReport(rows)

    def test_markdown_header_and_absent_cells(self):
        text = render_report(self._report(), "markdown")
        header = text.splitlines()[0]
        for name in ("SNR (dB)", "Sparsity (%)", "Speed (s)", "ASR (%)"):
            assert name in header
        onepixel_line = [l for l in text.splitlines() if "onepixel" in l][0]
        assert "--" in onepixel_line

    def test_rendering_is_deterministic(self):
        report = self._report()
        for fmt in ("markdown", "csv", "json"):
            assert render_report(report, fmt) == render_report(report, fmt)

    def test_rows_sorted_regardless_of_insertion_order(self):
        report = self._report()
        flipped = EvaluationReport(list(reversed(report.rows)))
        assert render_report(report, "csv") == render_report(flipped, "csv")

    def test_csv_round_trip(self):
        report = self._report()
        back = parse_report_csv(render_report(report, "csv"))
        assert back == report

    def test_json_round_trip(self):
        report = self._report()
        back = parse_report_json(render_report(report, "json"))
        assert back == report

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            render_report(self._report(), "xml")

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            render_report(EvaluationReport([]), "markdown")
