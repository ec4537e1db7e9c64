import csv
import json

import numpy as np
import pytest

from wheezenmf.dataset import CorpusItem, synth_ambient_noise, synth_corpus, write_corpus
from wheezenmf.evaluation import (
    BENCH_HEADER,
    EXPERIMENT_HEADER,
    MEAN_KIND,
    NA,
    ConfusionCounts,
    ExperimentRecord,
    run_scaling_benchmark,
    run_snr_sweep,
    score,
    sweep_means,
    write_csv,
    write_json,
)
from wheezenmf.exceptions import InvalidInputError
from wheezenmf.pipeline import STAGES, PipelineConfig
from wheezenmf.spectral import AudioBuffer

SR = 8000


class TestScore:
    def test_all_positive(self):
        c = score([1] * 5, [1] * 5)
        assert (c.tp, c.fn, c.fp, c.tn) == (5, 0, 0, 0)

    def test_complement(self):
        labels = [1, 0, 1, 1, 0]
        c = score([1 - v for v in labels], labels)
        assert c.tp == 0 and c.tn == 0 and c.total == 5

    def test_string_labels(self):
        c = score([1, 0, 1], ["wheeze", "normal", "normal"])
        assert (c.tp, c.fn, c.fp, c.tn) == (1, 0, 1, 1)

    def test_reference_row(self):
        c = ConfusionCounts(tp=15, fn=1, fp=2, tn=6)
        assert c.se == pytest.approx(93.75, abs=1e-12)
        assert c.sp == pytest.approx(75.0, abs=1e-12)
        assert c.acc == pytest.approx(87.5, abs=1e-12)

    def test_undefined(self):
        c = ConfusionCounts(tp=3, fn=1)
        assert c.sp is None and c.se == 75.0
        assert ConfusionCounts().acc is None

    def test_identities(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pred, true = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
            c = score(pred, true)
            assert c.total == 30
            assert c.acc * c.total / 100 == pytest.approx(c.tp + c.tn, abs=1e-12)
            for v in (c.se, c.sp, c.acc):
                assert v is None or 0 <= v <= 100

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            score([1, 0], [1])

    def test_non_binary(self):
        with pytest.raises(InvalidInputError):
            score([2], [1])
        with pytest.raises(InvalidInputError):
            score([1], ["maybe"])

    def test_negative_counts(self):
        with pytest.raises(InvalidInputError):
            ConfusionCounts(tp=-1)


def forced_corpus():
    # pure tones versus white noise, with a whisper of noise in both channels
    t = np.arange(3 * SR) / SR
    rng = np.random.default_rng(1)
    items = []
    for i, f in enumerate((300.0, 550.0, 800.0)):
        items.append(CorpusItem(AudioBuffer(0.3 * np.sin(2 * np.pi * f * t), SR),
                                synth_ambient_noise("broadband", 3.0, SR, seed=i), "wheeze", "broadband", i))
    for i in range(3):
        items.append(CorpusItem(AudioBuffer(0.1 * rng.standard_normal(len(t)), SR),
                                synth_ambient_noise("broadband", 3.0, SR, seed=10 + i), "normal", "broadband", 10 + i))
    return items


class TestSweep:
    def test_forced_cases(self):
        records = run_snr_sweep(forced_corpus(), snr_grid=(60.0,))
        mean = sweep_means(records)[60.0]
        assert mean.acc == 100.0 and mean.counts.total == 6

    def test_single_class_is_not_applicable(self):
        items = [it for it in forced_corpus() if it.label == "wheeze"]
        records = run_snr_sweep(items, snr_grid=(60.0,))
        for r in records:
            assert r.sp is None and r.se is not None
            assert r.row()[7] == NA

    def test_shape_and_means(self):
        items = synth_corpus(2, 2, duration_s=2.0, seed=2, noise_kinds=("siren", "babble"))
        records = run_snr_sweep(items, snr_grid=(0.0, 10.0))
        assert [(r.noise_kind, r.snr_db) for r in records] == [
            ("siren", 0.0), ("babble", 0.0), (MEAN_KIND, 0.0),
            ("siren", 10.0), ("babble", 10.0), (MEAN_KIND, 10.0)]
        for snr, mean in sweep_means(records).items():
            cells = [r for r in records if r.snr_db == snr and r.noise_kind != MEAN_KIND]
            assert mean.acc == pytest.approx(np.mean([c.acc for c in cells]), abs=1e-12)
            assert mean.counts.total == sum(c.counts.total for c in cells)

    def test_deterministic(self):
        items = synth_corpus(1, 1, duration_s=2.0, seed=3)
        assert run_snr_sweep(items, snr_grid=(0.0,)) == run_snr_sweep(items, snr_grid=(0.0,))

    def test_failures_are_counted(self):
        items = forced_corpus()[:2]
        # too short for the default window count: the item fails, the sweep goes on
        items.append(CorpusItem(AudioBuffer(np.ones(3000), SR), AudioBuffer(np.ones(3000), SR),
                                "normal", "broadband", 99))
        records = run_snr_sweep(items, snr_grid=(60.0,))
        mean = sweep_means(records)[60.0]
        assert mean.n_failed == 1 and mean.counts.total == 2

    def test_manifest_input(self, tmp_path):
        items = synth_corpus(1, 1, duration_s=2.0, seed=4)
        manifest = write_corpus(items, tmp_path)
        a = run_snr_sweep(manifest, snr_grid=(5.0,))
        assert [r.counts.total for r in a if r.noise_kind == MEAN_KIND] == [2]

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            run_snr_sweep([])

    def test_outputs(self, tmp_path):
        rec = ExperimentRecord.from_counts("siren", -5, ConfusionCounts(tp=2, fn=0, fp=0, tn=0))
        path = write_csv([rec], tmp_path / "s.csv")
        rows = list(csv.reader(path.open()))
        assert tuple(rows[0]) == EXPERIMENT_HEADER
        assert rows[1] == ["siren", "-5", "2", "0", "0", "0", "100", NA, "100", "0"]
        data = json.loads(write_json([rec], tmp_path / "s.json").read_text())
        assert data[0]["sp"] is None and data[0]["counts"]["tp"] == 2


@pytest.fixture(scope="module")
def records():
    cfg = PipelineConfig().with_overrides(max_iter=5)
    return run_scaling_benchmark([60], [2], cfg, repeats=1)


class TestBenchmark:
    def test_baseline_included(self, records):
        assert {r.threads for r in records} == {1, 2}
        assert {r.stage for r in records} == {*STAGES, "total"}
        for r in records:
            if r.threads == 1:
                assert r.speedup == 1.0 and r.efficiency == 1.0
            assert r.efficiency == pytest.approx(r.speedup / r.threads)

    def test_stage_times_add_up(self, records):
        for p in (1, 2):
            rs = {r.stage: r.wall_time_s for r in records if r.threads == p}
            assert abs(sum(rs[s] for s in STAGES) - rs["total"]) <= 0.05 * rs["total"]

    def test_csv(self, records, tmp_path):
        rows = list(csv.reader(write_csv(records, tmp_path / "b.csv").open()))
        assert tuple(rows[0]) == BENCH_HEADER and len(rows) == 1 + len(records)

    def test_bad_args(self):
        with pytest.raises(InvalidInputError):
            run_scaling_benchmark([60], [1], repeats=0)
        with pytest.raises(InvalidInputError):
            run_scaling_benchmark([10], [1], repeats=1)
