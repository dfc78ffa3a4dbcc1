"""Benchmark harness: config parsing, records, experiment drivers, reports, CLI."""

import json
from pathlib import Path

import numpy as np
import pytest

import fitadapt.cli as cli
import fitadapt.config as cfgmod
import fitadapt.experiments as ex
from fitadapt.errors import InvalidStateError
from fitadapt.objectives import MetricRecord
from fitadapt.records import RunRecord, read_records, write_records, write_timings
from fitadapt.report import make_report


def tiny_config(**overrides):
    base = {
        "source.n": 100,
        "target.n": 40,
        "source.series_length_raw": 150,
        "target.series_length_raw": 150,
        "train.learning_rate": 0.01,
        "train.batch_size": 16,
        "train.max_epochs": 3,
        "train.patience": 2,
        "bench.folds": 2,
        "bench.seeds": (0, 1),
        "bench.injection_fracs": (0.0, 0.1),
        "stress.offsets": (0.0, 5.0),
        "stress.noise_std": 0.0,
    }
    base.update(overrides)
    return cfgmod.default_config().with_overrides(**base)


@pytest.fixture(scope="module")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="module")
def cv_records(tiny_cfg):
    ctx = ex.ExperimentContext(tiny_cfg)
    records = []
    for method in ("transfer", ex.FLAGSHIP_METHOD):
        records += ex.run_cv(tiny_cfg, method, ctx=ctx)
    return records


class TestConfig:
    def test_defaults_round_trip_through_text(self, tmp_path):
        path = tmp_path / "default.cfg"
        cfgmod.write_default_config(path)
        cfg = cfgmod.load_config(path)
        assert cfg.hash == cfgmod.default_config().hash

    def test_unknown_key_is_named_in_error(self):
        with pytest.raises(ValueError, match="unknown config key: bench.fold_count"):
            cfgmod.parse_config_text("bench.fold_count = 3")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            cfgmod.parse_config_text("bench.folds = 3\nbench.folds = 4")

    def test_bad_value_names_key(self):
        with pytest.raises(ValueError, match="bench.folds"):
            cfgmod.parse_config_text("bench.folds = three")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="key = value"):
            cfgmod.parse_config_text("just some words")

    def test_comments_and_blanks_ignored(self):
        mapping = cfgmod.parse_config_text("# comment\n\nbench.folds = 5  # trailing\n")
        assert mapping["bench.folds"] == 5

    def test_every_key_documented(self):
        for key, spec in cfgmod.REGISTRY.items():
            assert spec.doc.strip(), f"{key} lacks documentation"

    def test_hash_stable_and_sensitive(self):
        a = cfgmod.default_mapping()
        b = cfgmod.default_mapping()
        assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
        b["bench.folds"] = 7
        assert cfgmod.config_hash(a) != cfgmod.config_hash(b)

    def test_validation_names_offending_key(self):
        with pytest.raises(ValueError, match="bench.split_train_frac"):
            tiny_config(**{"bench.split_train_frac": 1.5})

    def test_seed_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        cfgmod.write_default_config(path)
        cfg = cfgmod.load_config(path, seed_override=42)
        assert cfg.seeds == (42,)

    def test_lambda_sum_validated(self):
        with pytest.raises(ValueError):
            tiny_config(**{"train.lambda1": 0.9, "train.lambda2": 0.3})


class TestRecords:
    def _record(self):
        return RunRecord(
            kind="cv",
            method="transfer",
            fold=1,
            seed=3,
            config_hash="abc",
            metrics=MetricRecord(1.0, 0.5, 0.2, 0.7, False, 0.1, 0.05),
            stop_epoch=4,
            best_epoch=2,
            wall_time_s=1.234,
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_records(path, [self._record()])
        (loaded,) = read_records(path)
        assert loaded.method == "transfer" and loaded.metrics.corr == 0.7
        assert loaded.kind == "cv" and loaded.best_epoch == 2

    def test_wall_time_not_serialized(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_records(path, [self._record()])
        assert "wall_time" not in path.read_text()

    def test_timings_sidecar(self, tmp_path):
        path = tmp_path / "t.jsonl"
        write_timings(path, [self._record()])
        row = json.loads(path.read_text())
        assert row["wall_time_s"] == 1.234

    def test_schema_version_enforced(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_records(path, [self._record()])
        obj = json.loads(path.read_text())
        obj["schema_version"] = 0
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(ValueError):
            read_records(path)

    def test_degenerate_corr_serializes_as_null(self, tmp_path):
        rec = self._record()
        rec.metrics = MetricRecord(1.0, 0.5, 0.2, None, True, 0.1, 0.05)
        path = tmp_path / "r.jsonl"
        write_records(path, [rec])
        assert json.loads(path.read_text())["metrics"]["corr"] is None
        (loaded,) = read_records(path)
        assert loaded.metrics.corr is None and loaded.metrics.corr_degenerate


class TestSplits:
    def test_train_test_disjoint_and_exhaustive(self, tiny_cfg):
        for fold in range(3):
            tr, te = ex.split_target(tiny_cfg, 40, seed=0, fold=fold)
            assert len(np.intersect1d(tr, te)) == 0
            assert len(tr) + len(te) == 40
            assert len(tr) == 28  # 70% of 40

    def test_folds_differ(self, tiny_cfg):
        tr0, _ = ex.split_target(tiny_cfg, 40, seed=0, fold=0)
        tr1, _ = ex.split_target(tiny_cfg, 40, seed=0, fold=1)
        assert not np.array_equal(tr0, tr1)


class TestRunCV:
    def test_record_count_and_shape(self, tiny_cfg, cv_records):
        transfer = [r for r in cv_records if r.method == "transfer"]
        assert len(transfer) == len(tiny_cfg.seeds) * tiny_cfg.folds
        assert {(r.seed, r.fold) for r in transfer} == {(s, f) for s in (0, 1) for f in (0, 1)}
        for r in transfer:
            assert r.kind == "cv" and r.metrics is not None
            assert r.config_hash == tiny_cfg.hash
            assert r.truth_hist is not None and r.pred_hist is not None

    def test_unknown_method_rejected(self, tiny_cfg):
        with pytest.raises(ValueError, match="unknown method"):
            ex.run_cv(tiny_cfg, "gradient_boosting")

    def test_deterministic_record_files(self, tiny_cfg, tmp_path):
        a = ex.run_cv(tiny_cfg, "in_domain_supervised")
        b = ex.run_cv(tiny_cfg, "in_domain_supervised")
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_records(pa, a)
        write_records(pb, b)
        assert pa.read_bytes() == pb.read_bytes()

    def test_injection_bookkeeping_records_source_equivalent(self, tiny_cfg, cv_records):
        flagship = [r for r in cv_records if r.method == ex.FLAGSHIP_METHOD][0]
        n_train = round(0.7 * tiny_cfg.target_n)
        expected = flagship.injection_frac * n_train / tiny_cfg.source_n
        assert flagship.injection_frac_source == pytest.approx(expected)


class TestLeakageGuard:
    def test_fold_test_partition_is_stripped(self, tiny_cfg):
        ctx = ex.ExperimentContext(tiny_cfg)
        data = ctx.domain_data(0)
        fold = ex.prepare_fold(ctx, data, seed=0, fold=0)
        assert not fold.target_test_inputs.has_labels
        with pytest.raises(InvalidStateError):
            _ = fold.target_test_inputs.y

    def test_pipelines_reject_labeled_test_partition(self, tiny_cfg):
        ctx = ex.ExperimentContext(tiny_cfg)
        data = ctx.domain_data(0)
        fold = ex.prepare_fold(ctx, data, seed=0, fold=0)
        poisoned = ex.FoldData(
            fold.target_train,
            fold.target_test_labeled,  # labels left attached
            fold.target_test_labeled,
            fold.train_idx,
            fold.test_idx,
        )
        with pytest.raises(InvalidStateError):
            ex.run_method(ctx, "transfer", data, poisoned, seed=0, fold=0)

    def test_training_scaler_fitted_on_train_only(self, tiny_cfg):
        ctx = ex.ExperimentContext(tiny_cfg)
        data = ctx.domain_data(0)
        fold = ex.prepare_fold(ctx, data, seed=0, fold=0)
        assert fold.target_test_inputs.meta_scale is fold.target_train.meta_scale


class TestInjectionSweep:
    def test_grid_and_error_cells(self):
        cfg = tiny_config(**{"bench.injection_fracs": (0.0, 0.1, 50.0), "bench.folds": 1})
        records = ex.injection_sweep(cfg)
        assert len(records) == 3 * 2  # ratios x seeds
        failed = [r for r in records if r.error]
        assert {r.injection_frac for r in failed} == {50.0}
        assert all(r.metrics is None for r in failed)
        ok = [r for r in records if not r.error]
        assert all(r.metrics is not None for r in ok)

    def test_requires_two_seeds(self):
        cfg = tiny_config(**{"bench.seeds": (0,)})
        with pytest.raises(ValueError, match="2 seeds"):
            ex.injection_sweep(cfg)


@pytest.fixture(scope="module")
def ablation_records():
    cfg = tiny_config(**{"bench.folds": 1})
    return ex.ablation(cfg)


class TestAblation:
    def test_three_paired_arms(self, ablation_records):
        records = ablation_records
        arms = {r.arm for r in records}
        assert arms == {"full", "coarse_only", "fine_only"}
        by_arm = {arm: {(r.seed, r.fold) for r in records if r.arm == arm} for arm in arms}
        assert by_arm["full"] == by_arm["coarse_only"] == by_arm["fine_only"]

    def test_record_count(self, ablation_records):
        assert len(ablation_records) == 3 * 2 * 1  # arms x seeds x folds


@pytest.fixture(scope="module")
def stress_records():
    cfg = tiny_config(**{"bench.folds": 1, "stress.offsets": (0.0, 6.0), "stress.noise_std": 0.0})
    return ex.stress_test(cfg)


class TestStress:
    def test_methods_paired_per_shift(self, stress_records):
        records = stress_records
        for offset in (0.0, 6.0):
            cell = [r for r in records if r.shift_offset == offset]
            methods = {r.method for r in cell}
            assert methods == {ex.FLAGSHIP_METHOD, "dann"}
            by_m = {m: {(r.seed, r.fold) for r in cell if r.method == m} for m in methods}
            assert by_m[ex.FLAGSHIP_METHOD] == by_m["dann"]

    def test_kl_recorded_and_grows_with_offset(self, stress_records):
        records = stress_records
        kl0 = np.mean([r.kl_source_target for r in records if r.shift_offset == 0.0])
        kl6 = np.mean([r.kl_source_target for r in records if r.shift_offset == 6.0])
        assert kl0 >= 0.0 and kl6 > kl0

    def test_zero_shift_matches_unshifted_baseline_kl(self):
        cfg = tiny_config(**{"stress.noise_std": 0.0})
        ctx = ex.ExperimentContext(cfg)
        baseline = ex.label_shift_kl(
            ctx.domain_data(0).source_proc.y, ctx.domain_data(0).target_raw.y, cfg.report_bins
        )
        from fitadapt.cohort import ShiftSpec

        shifted = ctx.domain_data(0, ShiftSpec(0.0, 0.0))
        kl = ex.label_shift_kl(shifted.source_proc.y, shifted.target_raw.y, cfg.report_bins)
        assert kl == pytest.approx(baseline, abs=1e-12)


class TestReport:
    def test_single_record_has_zero_std(self, tmp_path, cv_records):
        files = make_report(cv_records[:1], tmp_path)
        rows = (tmp_path / "method_comparison.csv").read_text().splitlines()
        assert len(rows) == 2
        cells = rows[1].split(",")
        assert cells[0] == "transfer" and cells[1] == "1"
        assert float(cells[3]) == 0.0  # r2 std over a single run

    def test_aggregation_matches_hand_computation(self, tmp_path):
        base = RunRecord(
            kind="cv", method="m", fold=0, seed=0, config_hash="h",
            metrics=MetricRecord(4.0, 1.0, 0.1, 0.5, False, 0.1, 0.1),
        )
        import copy

        r2 = copy.deepcopy(base)
        r2.metrics = MetricRecord(6.0, 2.0, 0.2, 0.6, False, 0.1, 0.1)
        r3 = copy.deepcopy(base)
        r3.metrics = MetricRecord(8.0, 3.0, 0.3, 0.7, False, 0.1, 0.1)
        make_report([base, r2, r3], tmp_path)
        row = (tmp_path / "method_comparison.csv").read_text().splitlines()[1].split(",")
        # columns: method, n, r2 mean/std, corr mean/std, mse mean/std, mae mean/std
        # tables carry 6 significant digits
        assert float(row[2]) == pytest.approx(0.2, abs=1e-5)
        assert float(row[3]) == pytest.approx(np.std([0.1, 0.2, 0.3]), abs=1e-5)
        assert float(row[6]) == pytest.approx(6.0, abs=1e-5)
        assert float(row[7]) == pytest.approx(np.std([4.0, 6.0, 8.0]), abs=1e-5)
        assert float(row[8]) == pytest.approx(2.0, abs=1e-5)  # mae mean

    def test_rerun_is_byte_identical(self, tmp_path, cv_records):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        files_a = make_report(cv_records, out_a)
        files_b = make_report(cv_records, out_b)
        assert files_a == files_b
        for name in files_a:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            make_report([], tmp_path)

    def test_sweep_quantiles_ordered(self, tmp_path):
        cfg = tiny_config(**{"bench.injection_fracs": (0.0, 0.1), "bench.folds": 1})
        records = ex.injection_sweep(cfg)
        make_report(records, tmp_path)
        rows = (tmp_path / "injection_sweep.csv").read_text().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            q25, q50, q75 = float(cells[5]), float(cells[6]), float(cells[7])
            assert q25 <= q50 <= q75

    def test_histogram_json_written_per_method(self, tmp_path, cv_records):
        make_report(cv_records, tmp_path)
        for method in ("transfer", ex.FLAGSHIP_METHOD):
            payload = json.loads((tmp_path / "histograms" / f"{method}.json").read_text())
            assert payload["method"] == method
            run = payload["runs"][0]
            assert len(run["truth"]["mass"]) == len(run["truth"]["bin_edges"]) - 1

    def test_figures_rendered(self, tmp_path, cv_records):
        make_report(cv_records, tmp_path)
        assert (tmp_path / "method_comparison.png").stat().st_size > 0
        assert (tmp_path / f"hist_{ex.FLAGSHIP_METHOD}.png").stat().st_size > 0


class TestCli:
    def _write_cfg(self, tmp_path) -> Path:
        path = tmp_path / "tiny.cfg"
        lines = [
            "source.n = 60",
            "target.n = 30",
            "source.series_length_raw = 150",
            "target.series_length_raw = 150",
            "train.learning_rate = 0.01",
            "train.batch_size = 16",
            "train.max_epochs = 2",
            "train.patience = 1",
            "bench.folds = 1",
            "bench.seeds = 0",
        ]
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_write_config_round_trip(self, tmp_path):
        dest = tmp_path / "default.cfg"
        assert cli.main(["write-config", str(dest)]) == 0
        assert cfgmod.load_config(dest).hash == cfgmod.default_config().hash

    def test_synth_writes_cohorts_and_summary(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        from fitadapt.cohort import load_sample_set

        silver = load_sample_set(out / "synth" / "source_silver.npz")
        assert silver.label_grade == "silver" and silver.n == 60
        summary = json.loads((out / "synth" / "summary.json").read_text())
        assert summary["silver_bias_mean"] < 0

    def test_pretrain_saves_checkpoint(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["pretrain", "--config", str(cfg), "--out", str(out)]) == 0
        from fitadapt.networks import load_checkpoint

        model = load_checkpoint(out / "pretrained.pt")
        assert model.cfg.recurrent_units == 32
        assert (out / "pretrain_trace.jsonl").read_text().strip()

    def test_adapt_then_report(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["adapt", "--config", str(cfg), "--out", str(out)]) == 0
        records = read_records(out / "records" / "cv_dual_adv.jsonl")
        assert len(records) == 1
        assert cli.main(["report", "--out", str(out)]) == 0
        assert (out / "report" / "method_comparison.csv").exists()

    def test_baseline_runs_and_bad_method_rejected(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["baseline", "--method", "transfer", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "records" / "cv_transfer.jsonl").exists()
        assert cli.main(["baseline", "--method", "nope", "--config", str(cfg), "--out", str(out)]) == 2

    def test_report_without_records_fails(self, tmp_path):
        assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 2

    def test_seed_flag_overrides(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["synth", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
        summary = json.loads((out / "synth" / "summary.json").read_text())
        assert summary["seed"] == 9
