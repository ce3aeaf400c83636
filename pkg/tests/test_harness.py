"""Experiment harness: config handling, training runs, file emission."""

import json
import math
import os
import xml.dom.minidom

import numpy as np
import pytest

from augem import harness
from augem import policy as pol

TINY = dict(dataset="shapes:n=96,test_n=48", model="softmax", k=2,
            epochs=2, batch_size=48, subset_n=96, seed=5)


def tiny_cfg(**overrides):
    kv = dict(TINY)
    kv.update(overrides)
    return harness.RunConfig(**kv)


class TestConfigParsing:
    def test_defaults_follow_desk_recipe(self):
        cfg = harness.RunConfig()
        assert cfg.dataset == "shapes:n=10000"
        assert cfg.model == "mlp:128,128"
        assert (cfg.k, cfg.sigma, cfg.window) == (6, 1.0, 10)
        assert (cfg.batch_size, cfg.epochs) == (128, 30)
        assert (cfg.lr0, cfg.weight_decay) == (0.1, 1e-4)
        cfg.validate()

    def test_file_values_parsed_and_coerced(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "method = ubs_limit\n"
            "k = 4          # trailing comment\n"
            "sigma = 0.5\n"
            "fixed_pi = true\n"
            "\n"
            "out_dir = somewhere\n")
        values = harness.parse_config_file(path)
        assert values == {"method": "ubs_limit", "k": 4, "sigma": 0.5,
                          "fixed_pi": True, "out_dir": "somewhere"}

    def test_sigma_accepts_inf(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("sigma = inf\n")
        assert math.isinf(harness.parse_config_file(path)["sigma"])

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("warp_speed = 9\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config_file(path)

    def test_line_without_equals_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just some words\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config_file(path)

    def test_bad_boolean_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("fixed_pi = maybe\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config_file(path)

    def test_cli_overrides_file_overrides_defaults(self):
        cfg = harness.build_config({"k": 3, "sigma": 2.0},
                                   {"sigma": 0.25})
        assert cfg.k == 3           # from file
        assert cfg.sigma == 0.25    # CLI wins
        assert cfg.epochs == 30     # default survives

    def test_build_config_rejects_unknown_key(self):
        with pytest.raises(harness.ConfigError):
            harness.build_config({"k": 3}, {"quantum": 1})


class TestConfigValidation:
    @pytest.mark.parametrize("field,value", [
        ("method", "gradient_descent_into_madness"),
        ("k", 0),
        ("sigma", -1.0),
        ("window", 0),
        ("lr0", 0.0),
        ("weight_decay", -0.1),
        ("momentum", 1.0),
        ("batch_size", 0),
        ("epochs", 0),
        ("subset_n", 0),
        ("final_op", "blur"),
        ("dataset", "imagenet:n=10"),
        ("model", "transformer:12"),
    ])
    def test_bad_value_rejected(self, field, value):
        with pytest.raises(harness.ConfigError):
            harness.RunConfig(**{field: value}).validate()

    def test_limit_sigmas_accepted(self):
        harness.RunConfig(sigma=0.0).validate()
        harness.RunConfig(sigma=float("inf")).validate()

    def test_mnist_spec_requires_all_four_paths(self):
        with pytest.raises(harness.ConfigError):
            harness.RunConfig(dataset="mnist:train_images=a").validate()

    def test_cifar_spec_requires_both_paths(self):
        with pytest.raises(harness.ConfigError):
            harness.RunConfig(dataset="cifar:train=a").validate()

    def test_convnet_spec_needs_two_channel_counts(self):
        with pytest.raises(harness.ConfigError):
            harness.RunConfig(model="convnet:8,16,32").validate()

    def test_mlp_widths_default_when_bare(self):
        assert harness._parse_model_spec("mlp") == ("mlp", (128, 128))
        assert harness._parse_model_spec("mlp:64") == ("mlp", (64,))


class TestRunExperiment:
    def test_iteration_count_and_epoch_accuracies(self):
        rep = harness.run_experiment(tiny_cfg())
        assert rep.iterations == 2 * math.ceil(96 / 48)
        assert len(rep.epoch_accuracies) == 2
        assert all(0.0 <= a <= 1.0 for a in rep.epoch_accuracies)
        assert rep.final_accuracy == rep.epoch_accuracies[-1]

    def test_subset_n_caps_training_set(self):
        rep = harness.run_experiment(
            tiny_cfg(dataset="shapes:n=96,test_n=48", subset_n=48,
                     epochs=1))
        assert rep.iterations == 1    # 48 samples / batch 48

    def test_partial_tail_batch_counts_as_iteration(self):
        rep = harness.run_experiment(tiny_cfg(batch_size=40, epochs=1))
        assert rep.iterations == 3    # 96 = 40 + 40 + 16

    def test_identical_config_reproduces_metrics_exactly(self):
        a = harness.run_experiment(tiny_cfg())
        b = harness.run_experiment(tiny_cfg())
        assert harness.metrics_csv_text(a) == harness.metrics_csv_text(b)
        assert np.array_equal(a.final_pi, b.final_pi)
        assert a.epoch_accuracies == b.epoch_accuracies

    def test_seed_changes_the_run(self):
        a = harness.run_experiment(tiny_cfg(seed=1))
        b = harness.run_experiment(tiny_cfg(seed=2))
        assert harness.metrics_csv_text(a) != harness.metrics_csv_text(b)

    def test_no_augment_solves_separable_blobs(self):
        cfg = tiny_cfg(dataset="blobs:n=64,test_n=32,c=4,dim=16,spread=0.0",
                       method="no_augment", epochs=20, batch_size=32,
                       subset_n=64, lr0=0.2)
        rep = harness.run_experiment(cfg)
        assert rep.final_accuracy == 1.0

    def test_k1_expected_equals_marginal(self):
        rep = harness.run_experiment(tiny_cfg(k=1))
        for m in rep.metrics:
            assert m.expected_loss == pytest.approx(m.marginal_loss,
                                                    abs=1e-9)

    def test_baseline_metrics_report_uniform_prior(self):
        rep = harness.run_experiment(tiny_cfg(method="no_augment"))
        for m in rep.metrics:
            assert m.expected_loss == m.marginal_loss
            assert m.pi_entropy == pytest.approx(np.log(256), abs=1e-12)
            assert m.top_policies == ()
        assert np.allclose(rep.final_pi, 1.0 / 256)

    def test_random_policy_baseline_differs_from_no_augment(self):
        a = harness.run_experiment(tiny_cfg(method="no_augment"))
        b = harness.run_experiment(
            tiny_cfg(method="random_policy_baseline"))
        assert harness.metrics_csv_text(a) != harness.metrics_csv_text(b)

    def test_em_run_moves_the_prior(self):
        rep = harness.run_experiment(tiny_cfg())
        assert not np.allclose(rep.final_pi, 1.0 / 256)
        assert rep.final_pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_fixed_pi_stays_uniform(self):
        rep = harness.run_experiment(tiny_cfg(fixed_pi=True))
        assert np.allclose(rep.final_pi, 1.0 / 256)

    def test_lr_follows_cosine_schedule(self):
        rep = harness.run_experiment(tiny_cfg())
        lrs = [m.lr for m in rep.metrics]
        assert lrs[0] == pytest.approx(0.1)
        assert lrs == sorted(lrs, reverse=True)

    def test_backend_recorded(self):
        rep = harness.run_experiment(tiny_cfg(epochs=1))
        assert rep.backend in ("compiled", "numpy")


class TestEmission:
    def test_metrics_csv_layout(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_metrics(rep, tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == "iter,expected_loss,marginal_loss,lr,pi_entropy"
        assert len(lines) == 1 + rep.iterations
        first = lines[1].split(",")
        assert first[0] == "0"
        assert float(first[1]) == rep.metrics[0].expected_loss

    def test_csv_floats_round_trip_exactly(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_metrics(rep, tmp_path)
        rows = (tmp_path / "metrics.csv").read_text().splitlines()[1:]
        for row, m in zip(rows, rep.metrics):
            _, el, ml, lr, ent = row.split(",")
            assert float(el) == m.expected_loss
            assert float(ml) == m.marginal_loss
            assert float(lr) == m.lr
            assert float(ent) == m.pi_entropy

    def test_summary_json_contents(self, tmp_path):
        cfg = tiny_cfg()
        rep = harness.run_experiment(cfg)
        harness.emit_metrics(rep, tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"] == cfg.to_dict()
        assert summary["iterations"] == rep.iterations
        assert summary["epoch_accuracies"] == rep.epoch_accuracies
        assert summary["final_accuracy"] == rep.final_accuracy

    def test_final_pi_round_trips_bit_exact(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_metrics(rep, tmp_path)
        loaded = pol.load_pi(tmp_path / "pi_final.txt")
        assert np.array_equal(loaded, rep.final_pi)

    def test_emission_replaces_existing_files_atomically(self, tmp_path):
        target = tmp_path / "metrics.csv"
        target.write_text("stale placeholder\n")
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_metrics(rep, tmp_path)
        assert "stale" not in target.read_text()
        leftovers = [p for p in os.listdir(tmp_path)
                     if p.endswith(".tmp")]
        assert leftovers == []

    def test_reemission_is_byte_identical(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_metrics(rep, tmp_path / "a")
        harness.emit_metrics(rep, tmp_path / "b")
        for name in ("metrics.csv", "summary.json", "pi_final.txt"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_empty_report_gives_header_only_csv(self):
        rep = harness.RunReport(config={}, metrics=[],
                                epoch_accuracies=[],
                                final_pi=np.full(256, 1 / 256))
        text = harness.metrics_csv_text(rep)
        assert text == "iter,expected_loss,marginal_loss,lr,pi_entropy\n"

    def test_timing_file_is_separate_from_deterministic_outputs(
            self, tmp_path):
        rep = harness.run_experiment(tiny_cfg(epochs=1))
        harness.emit_metrics(rep, tmp_path)
        body = (tmp_path / "timing.txt").read_text()
        assert body.startswith("wall_clock_seconds=")
        assert "backend=" in body


class TestPlots:
    def test_run_plots_are_well_formed_svg(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        paths = harness.emit_plots(rep, tmp_path)
        assert sorted(os.path.basename(p) for p in paths) == \
            ["accuracy_vs_epoch.svg", "loss_vs_iteration.svg"]
        for path in paths:
            doc = xml.dom.minidom.parse(path)
            assert doc.documentElement.tagName == "svg"

    def test_loss_chart_has_two_series(self, tmp_path):
        rep = harness.run_experiment(tiny_cfg())
        harness.emit_plots(rep, tmp_path)
        doc = xml.dom.minidom.parse(str(tmp_path / "loss_vs_iteration.svg"))
        assert len(doc.getElementsByTagName("polyline")) == 2

    def test_empty_report_cannot_be_plotted(self, tmp_path):
        rep = harness.RunReport(config={}, metrics=[],
                                epoch_accuracies=[],
                                final_pi=np.full(256, 1 / 256))
        with pytest.raises(ValueError):
            harness.emit_plots(rep, tmp_path)


class TestAblationGrid:
    def grid_base(self):
        return tiny_cfg(epochs=1)

    def test_cells_cover_the_product(self):
        report = harness.run_ablation_grid(
            self.grid_base(),
            {"sigma": [0.5, 2.0], "fixed_pi": [False, True]},
            seeds=[0])
        combos = {(c.params["sigma"], c.params["fixed_pi"])
                  for c in report.cells}
        assert combos == {(0.5, False), (0.5, True),
                          (2.0, False), (2.0, True)}

    def test_mean_and_std_over_seeds(self):
        report = harness.run_ablation_grid(self.grid_base(),
                                           {"sigma": [1.0]},
                                           seeds=[0, 1, 2])
        cell = report.cells[0]
        assert len(cell.accuracies) == 3
        assert cell.mean == pytest.approx(np.mean(cell.accuracies))
        assert cell.std == pytest.approx(np.std(cell.accuracies))

    def test_keep_reports_retains_every_run(self):
        report = harness.run_ablation_grid(self.grid_base(),
                                           {"sigma": [1.0]},
                                           seeds=[0, 1],
                                           keep_reports=True)
        assert len(report.cells[0].reports) == 2

    def test_grid_rejects_unknown_key(self):
        with pytest.raises(harness.ConfigError):
            harness.run_ablation_grid(self.grid_base(),
                                      {"flux": [1]}, seeds=[0])

    def test_grid_rejects_empty_inputs(self):
        with pytest.raises(harness.ConfigError):
            harness.run_ablation_grid(self.grid_base(), {}, seeds=[0])
        with pytest.raises(harness.ConfigError):
            harness.run_ablation_grid(self.grid_base(),
                                      {"sigma": [1.0]}, seeds=[])

    def test_grid_summary_and_plot_files(self, tmp_path):
        report = harness.run_ablation_grid(self.grid_base(),
                                           {"sigma": [0.5, 2.0]},
                                           seeds=[0])
        harness.emit_grid_summary(report, tmp_path)
        harness.emit_plots(report, tmp_path)
        payload = json.loads((tmp_path / "grid_summary.json").read_text())
        assert payload["axes"] == {"sigma": [0.5, 2.0]}
        assert len(payload["cells"]) == 2
        doc = xml.dom.minidom.parse(str(tmp_path / "accuracy_vs_sigma.svg"))
        assert doc.documentElement.tagName == "svg"

    def test_cell_dir_name_is_stable(self):
        name = harness.cell_dir_name({"sigma": 1.0, "fixed_pi": True})
        assert name == "fixed_pi=true_sigma=1.0"


class TestOutputRoot:
    def test_relative_dir_joins_env_root(self, monkeypatch):
        monkeypatch.setenv(harness.OUT_ROOT_ENV, "/data/experiments")
        assert harness.resolve_out_dir("runs/a") == \
            "/data/experiments/runs/a"

    def test_absolute_dir_ignores_env_root(self, monkeypatch):
        monkeypatch.setenv(harness.OUT_ROOT_ENV, "/data/experiments")
        assert harness.resolve_out_dir("/tmp/elsewhere") == "/tmp/elsewhere"

    def test_unset_env_leaves_dir_alone(self, monkeypatch):
        monkeypatch.delenv(harness.OUT_ROOT_ENV, raising=False)
        assert harness.resolve_out_dir("runs/a") == "runs/a"
