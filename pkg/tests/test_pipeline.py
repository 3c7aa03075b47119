import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import unit_rows
from ncdlab import pipeline
from ncdlab.cli import main as cli_main
from ncdlab.data import next_batch
from ncdlab.errors import ConfigError
from ncdlab.memory import FeatureQueue, LabeledFeatureQueue
from ncdlab.model import load_checkpoint
from ncdlab.pipeline import (PRESETS, PRESET_SETS, AblationFlags, RunConfig,
                             build_dataset, build_model, config_from_dict,
                             config_to_dict, default_config, discovery_step,
                             load_config, run_experiment, stage1_pretext,
                             stage2_supervised, stage3_discovery)


def tiny_config(**overrides):
    base = dict(
        input_dim=6, labeled_classes=3, unlabeled_classes=3, per_class=20,
        separation=6.0, noise_sigma=0.3, scale_jitter=0.05,
        hidden_dims=(10, 10), embed_dim=8,
        learning_rate=0.1, momentum=0.9, lr_milestones=(), lr_decay=0.1,
        pretext_epochs=2, supervised_epochs=3, discovery_epochs=5,
        batch_size=16, ncl_start_epoch=2, hng_start_epoch=3,
        queue_capacity=60, temperature=0.05, pair_threshold=0.95,
        aug_positive_weight=0.2, easy_negative_count=8, mix_iterations=2,
        ramp_peak=5.0, ramp_length=4, seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)


def params_bytes(ms):
    return b"".join(layer.weight.tobytes() + layer.bias.tobytes()
                    for layer, _ in ms.parameters())


class TestConfig:
    def test_pseudo_positive_count_rule(self):
        cfg = default_config()
        assert cfg.queue_capacity == 2000
        assert cfg.unlabeled_classes == 5
        assert cfg.pseudo_positive_count == 200
        assert tiny_config(queue_capacity=7, unlabeled_classes=4) \
            .pseudo_positive_count == 1

    def test_stock_hyperparameter_defaults(self):
        cfg = default_config()
        assert cfg.temperature == 0.05
        assert cfg.pair_threshold == 0.95
        assert cfg.aug_positive_weight == 0.2
        assert cfg.easy_negative_count == 400
        assert cfg.mix_iterations == 5
        assert cfg.mix_coefficients == (1.0 / 3.0, 2.0 / 3.0)
        assert cfg.learning_rate == 0.1
        assert cfg.momentum == 0.9
        assert cfg.lr_decay == 0.1
        assert cfg.ncl_start_epoch == 2
        assert cfg.hng_start_epoch == 4

    def test_effective_aug_weight(self):
        assert tiny_config().effective_aug_weight() == 0.2
        cfg = replace(tiny_config(), ablation=AblationFlags(drop_pp=True))
        assert cfg.effective_aug_weight() == 1.0
        cfg = replace(tiny_config(), ablation=AblationFlags(drop_ap=True))
        assert cfg.effective_aug_weight() == 0.0

    def test_round_trip_through_dict(self):
        cfg = tiny_config()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_unknown_keys_rejected(self):
        doc = config_to_dict(tiny_config())
        doc["mystery"] = 1
        with pytest.raises(ConfigError, match="mystery"):
            config_from_dict(doc)

    def test_unknown_ablation_keys_rejected(self):
        doc = config_to_dict(tiny_config())
        doc["ablation"]["drop_everything"] = True
        with pytest.raises(ConfigError, match="drop_everything"):
            config_from_dict(doc)

    def test_odd_batch_size_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(batch_size=7)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config_to_dict(tiny_config())))
        assert load_config(path) == tiny_config()


class TestPresets:
    def test_table3_membership(self):
        assert PRESET_SETS["table3"] == ["baseline", "ncl_wo_pp", "ncl_wo_ap",
                                         "ncl_wo_la", "ncl", "ncl_hng"]

    def test_table2_membership(self):
        assert PRESET_SETS["table2"] == ["baseline_wo_ssl", "baseline_wo_ce",
                                         "baseline_wo_bce", "baseline_wo_cs",
                                         "baseline"]

    def test_each_preset_toggles_its_named_terms(self):
        assert PRESETS["baseline"] == AblationFlags(enable_ncl=False, enable_hng=False)
        assert PRESETS["baseline_wo_bce"].drop_bce
        assert not PRESETS["baseline_wo_bce"].enable_ncl
        assert PRESETS["ncl_wo_pp"].drop_pp and PRESETS["ncl_wo_pp"].enable_ncl
        assert PRESETS["ncl_wo_ap"].drop_ap
        assert PRESETS["ncl_wo_la"].drop_scl
        assert PRESETS["ncl"] == AblationFlags(enable_hng=False)
        assert PRESETS["ncl_hng"] == AblationFlags()


class TestStage1:
    def test_zero_epochs_leaves_model_unchanged(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        before = params_bytes(ms)
        stage1_pretext(ms, ds, 0, cfg.batch_size, np.random.default_rng(0),
                       cfg.learning_rate, cfg.momentum)
        assert params_bytes(ms) == before

    def test_deterministic_under_seed(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        results = []
        for _ in range(2):
            ms = build_model(cfg)
            stage1_pretext(ms, ds, 2, cfg.batch_size, np.random.default_rng(3),
                           cfg.learning_rate, cfg.momentum)
            results.append(params_bytes(ms))
        assert results[0] == results[1]

    def test_pretext_accuracy_beats_chance(self):
        cfg = tiny_config(per_class=40, pretext_epochs=8)
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        info = stage1_pretext(ms, ds, 8, cfg.batch_size,
                              np.random.default_rng(1),
                              cfg.learning_rate, cfg.momentum)
        assert info["pretext_accuracy"] > 0.25

    def test_heads_untouched(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        head_before = ms.labeled_head.weight.tobytes()
        stage1_pretext(ms, ds, 2, cfg.batch_size, np.random.default_rng(0),
                       cfg.learning_rate, cfg.momentum)
        assert ms.labeled_head.weight.tobytes() == head_before


class TestStage2:
    def test_zero_epochs_leaves_model_unchanged(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        before = params_bytes(ms)
        stage2_supervised(ms, ds, 0, cfg.batch_size, np.random.default_rng(0),
                          cfg.learning_rate, cfg.momentum)
        assert params_bytes(ms) == before

    def test_first_layer_frozen_during_training(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        frozen = ms.layers[0].weight.tobytes()
        stage2_supervised(ms, ds, 3, cfg.batch_size, np.random.default_rng(0),
                          cfg.learning_rate, cfg.momentum)
        assert ms.layers[0].weight.tobytes() == frozen

    def test_wide_separation_reaches_high_accuracy(self):
        cfg = tiny_config(input_dim=8, labeled_classes=3, unlabeled_classes=2,
                          per_class=60, separation=8.0, supervised_epochs=10,
                          batch_size=32)
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        stage1_pretext(ms, ds, 2, cfg.batch_size, np.random.default_rng(0),
                       cfg.learning_rate, cfg.momentum)
        info = stage2_supervised(ms, ds, 10, cfg.batch_size,
                                 np.random.default_rng(1),
                                 cfg.learning_rate, cfg.momentum)
        assert info["labeled_accuracy"] >= 0.95


def step_fixture(cfg, seed=0):
    """Identical model, batch and prefilled queues for orthogonality checks."""
    ds = build_dataset(cfg)
    ms = build_model(cfg)
    rng = np.random.default_rng(seed)
    uq = FeatureQueue(cfg.queue_capacity, cfg.embed_dim)
    uq.push(unit_rows(rng, max(cfg.pseudo_positive_count, 12), cfg.embed_dim))
    lq = LabeledFeatureQueue(cfg.queue_capacity, cfg.embed_dim, cfg.labeled_classes)
    lq.push(unit_rows(rng, 15, cfg.embed_dim),
            rng.integers(0, cfg.labeled_classes, size=15))
    batch = next_batch(ds, cfg.batch_size, cfg.augmentation(),
                       np.random.default_rng(seed + 1))
    return ms, batch, uq, lq


class TestAblationOrthogonality:
    """Toggling one term leaves the other terms' step-0 values unchanged."""

    def report_for(self, flags, cfg=None):
        cfg = replace(cfg or tiny_config(), ablation=flags)
        ms, batch, uq, lq = step_fixture(cfg)
        return discovery_step(ms, batch, uq, lq, cfg, omega=1.3,
                              ncl_active=flags.enable_ncl, hng_active=False,
                              hng_rng=np.random.default_rng(5), push=False)

    def test_drop_bce_only_zeroes_bce(self):
        full = self.report_for(AblationFlags(enable_hng=False))
        without = self.report_for(AblationFlags(drop_bce=True, enable_hng=False))
        assert without.bce == 0.0 and full.bce > 0.0
        assert without.ce == full.ce
        assert without.mse == full.mse
        assert without.ncl == full.ncl
        assert without.scl == full.scl

    def test_drop_ce_only_zeroes_ce(self):
        full = self.report_for(AblationFlags(enable_hng=False))
        without = self.report_for(AblationFlags(drop_ce=True, enable_hng=False))
        assert without.ce == 0.0 and full.ce > 0.0
        assert without.bce == full.bce
        assert without.ncl == full.ncl

    def test_drop_cs_only_zeroes_mse(self):
        full = self.report_for(AblationFlags(enable_hng=False))
        without = self.report_for(AblationFlags(drop_cs=True, enable_hng=False))
        assert without.mse == 0.0 and full.mse > 0.0
        assert without.ce == full.ce
        assert without.scl == full.scl

    def test_drop_scl_keeps_ncl(self):
        full = self.report_for(AblationFlags(enable_hng=False))
        without = self.report_for(AblationFlags(drop_scl=True, enable_hng=False))
        assert without.scl == 0.0 and full.scl > 0.0
        assert without.ncl == full.ncl
        assert without.contrastive_aug == full.contrastive_aug

    def test_drop_pp_keeps_aug_component(self):
        full = self.report_for(AblationFlags(enable_hng=False))
        without = self.report_for(AblationFlags(drop_pp=True, enable_hng=False))
        assert without.contrastive_aug == full.contrastive_aug
        assert without.contrastive_pp == 0.0 and full.contrastive_pp > 0.0
        assert without.ncl == full.contrastive_aug

    def test_disable_ncl_zeroes_both_contrastive_terms(self):
        report = self.report_for(AblationFlags(enable_ncl=False, enable_hng=False))
        assert report.ncl == 0.0 and report.scl == 0.0
        assert report.ce > 0.0 and report.bce > 0.0


class TestStage3:
    def test_contrastive_terms_start_at_configured_epoch(self):
        cfg = tiny_config(discovery_epochs=4, ncl_start_epoch=2)
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        history, step_reports, *_ = stage3_discovery(
            ms, ds, cfg, np.random.default_rng(0), np.random.default_rng(1))
        steps = len(step_reports) // 4
        for report in step_reports[:2 * steps]:
            assert report.ncl == 0.0 and report.scl == 0.0
        late = step_reports[2 * steps:]
        assert any(r.ncl != 0.0 for r in late)
        assert any(r.scl != 0.0 for r in late)

    def test_warmup_skip_flagged_until_queue_reaches_count(self):
        # queue capacity forces pseudo_positive_count above the early fill
        cfg = tiny_config(per_class=10, queue_capacity=400, unlabeled_classes=2,
                          labeled_classes=2, ncl_start_epoch=0,
                          discovery_epochs=2, batch_size=8)
        assert cfg.pseudo_positive_count == 100
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        history, step_reports, uq, _ = stage3_discovery(
            ms, ds, cfg, np.random.default_rng(0), np.random.default_rng(1))
        assert step_reports[0].ncl_skipped
        assert step_reports[0].ncl == 0.0

    def test_composition_invariant_on_all_reports(self):
        cfg = tiny_config()
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        history, step_reports, *_ = stage3_discovery(
            ms, ds, cfg, np.random.default_rng(0), np.random.default_rng(1))
        for report in step_reports:
            assert report.composition_residual() < 1e-10
        for row in history:
            assert row.report.composition_residual() < 1e-10

    def test_acc_recorded_each_epoch(self):
        cfg = tiny_config(discovery_epochs=3)
        ds = build_dataset(cfg)
        ms = build_model(cfg)
        history, *_ = stage3_discovery(ms, ds, cfg, np.random.default_rng(0),
                                       np.random.default_rng(1))
        assert [m.epoch for m in history] == [0, 1, 2]
        assert all(0.0 <= m.acc <= 1.0 for m in history)


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path):
        cfg = tiny_config()
        out = tmp_path / "run"
        result = run_experiment(cfg, preset="ncl_hng", out_dir=out)
        assert (out / "metrics.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "checkpoint.json").exists()
        assert (out / "embeddings.jsonl").exists()

        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"final_acc", "best_acc", "seed", "preset"}
        assert summary["preset"] == "ncl_hng"
        assert summary["best_acc"] >= summary["final_acc"] - 1e-12

        lines = (out / "embeddings.jsonl").read_text().splitlines()
        assert len(lines) == cfg.unlabeled_classes * cfg.per_class
        row = json.loads(lines[0])
        assert set(row) == {"z", "hidden_y"}
        assert len(row["z"]) == cfg.embed_dim

        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,acc,ce,bce,mse,ncl,scl,total"

        ms, seed = load_checkpoint(out / "checkpoint.json")
        assert seed == cfg.seed

    def test_identical_seed_gives_identical_artifacts(self, tmp_path):
        cfg = tiny_config(discovery_epochs=4)
        pairs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_experiment(cfg, preset="ncl_hng", out_dir=out)
            pairs.append(((out / "metrics.csv").read_bytes(),
                          (out / "summary.json").read_bytes()))
        assert pairs[0] == pairs[1]

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            run_experiment(tiny_config(), preset="mystery")

    def test_hng_debug_dump(self, tmp_path):
        cfg = tiny_config(discovery_epochs=4, ncl_start_epoch=0,
                          hng_start_epoch=0)
        debug = tmp_path / "provenance.jsonl"
        run_experiment(cfg, preset="ncl_hng", out_dir=tmp_path / "out",
                       hng_debug_path=debug)
        lines = debug.read_text().splitlines()
        assert lines
        assert set(json.loads(lines[0])) == {"unlabeled_index", "labeled_index",
                                             "mix_coefficient"}


class TestCli:
    def test_run_and_eval_round_trip(self, tmp_path, capsys):
        cfg = tiny_config()
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        out = tmp_path / "out"
        code = cli_main(["run", "--config", str(cfg_path), "--preset", "ncl",
                         "--out", str(out)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["preset"] == "ncl"

        ds_path = tmp_path / "dataset.json"
        build_dataset(cfg).to_json_file(ds_path)
        code = cli_main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                         "--dataset", str(ds_path)])
        assert code == 0
        scored = json.loads(capsys.readouterr().out.strip())
        assert scored["acc"] == pytest.approx(summary["final_acc"], abs=1e-12)

    def test_seed_override(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config_to_dict(tiny_config())))
        code = cli_main(["run", "--config", str(cfg_path), "--preset", "baseline",
                         "--seed", "17", "--out", str(tmp_path / "out")])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["seed"] == 17

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = cli_main(["run", "--config", str(tmp_path / "missing.json"),
                         "--out", str(tmp_path / "out")])
        assert code == 2

    def test_invalid_json_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli_main(["run", "--config", str(bad),
                         "--out", str(tmp_path / "out")]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        doc = config_to_dict(tiny_config())
        doc["typo_field"] = 3
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        assert cli_main(["run", "--config", str(path),
                         "--out", str(tmp_path / "out")]) == 2

    def test_divergent_run_exits_3(self, tmp_path):
        cfg = tiny_config(learning_rate=1e30, pretext_epochs=0,
                          supervised_epochs=1, discovery_epochs=6)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config_to_dict(cfg)))
        with np.errstate(all="ignore"):
            code = cli_main(["run", "--config", str(path), "--preset", "ncl",
                             "--out", str(tmp_path / "out")])
        assert code == 3

    def test_sweep_emits_summary_per_row(self, tmp_path, capsys):
        cfg = tiny_config(per_class=10, pretext_epochs=1, supervised_epochs=1,
                          discovery_epochs=2, batch_size=8, queue_capacity=20,
                          easy_negative_count=4, mix_iterations=1,
                          hidden_dims=(8,), embed_dim=6)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config_to_dict(cfg)))
        out = tmp_path / "sweep"
        code = cli_main(["sweep", "--preset-set", "table3", "--seeds", "1",
                         "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        rows = json.loads((out / "sweep_summary.json").read_text())
        assert [r["preset"] for r in rows] == PRESET_SETS["table3"]
