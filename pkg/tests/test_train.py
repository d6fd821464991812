"""Training harness: loss accumulation, Adam, fold plans, end-to-end runs."""

import json
import zlib

import numpy as np
import pytest

from earnet.errors import ConfigError, ContractError, DataError, DivergenceError
from earnet.metrics import aggregate_folds
from earnet.model import ModelConfig, ForwardOutput, build_best_earnet
from earnet.ops import softmax_cross_entropy
from earnet.tensor import Parameter, Tape, Tensor
from earnet.train import (
    Adam,
    TrainConfig,
    batch_iterator,
    class_extension_run,
    cross_validate,
    desk_train_config,
    kfold_split,
    run_fold,
    total_loss,
)
from earnet.weights import load_weights

TINY = ModelConfig(width_multiplier=0.25, input_size=32)

# nine well-separated colors; class identity survives global average pooling
PALETTE = np.stack(
    [
        np.array([r, g, b], dtype=np.float32)
        for r in (0.1, 0.5, 0.9)
        for g, b in ((0.1, 0.9), (0.9, 0.1), (0.5, 0.5))
    ]
)


def color_dataset(rng, per_class=10, size=32, num_classes=9):
    labels = np.repeat(np.arange(num_classes), per_class)
    images = np.empty((labels.size, 3, size, size), dtype=np.float32)
    for i, c in enumerate(labels):
        base = PALETTE[c][:, None, None]
        images[i] = base + rng.normal(0.0, 0.05, size=(3, size, size))
    return images.astype(np.float32), labels


def model_checksum(model):
    crc = 0
    for _, t in model.named_state():
        crc = zlib.crc32(t.data.tobytes(), crc)
    return crc


class TestTrainConfig:
    def test_defaults_are_full_scale(self):
        cfg = TrainConfig()
        assert cfg.lr == 1e-3
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)
        assert cfg.epochs == 100
        assert cfg.batch_size == 128
        assert cfg.aux_loss_weights == (1.0, 1.0)

    def test_desk_preset(self):
        cfg = desk_train_config()
        assert (cfg.epochs, cfg.batch_size) == (15, 32)
        assert desk_train_config(epochs=3).epochs == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lr": 0.0},
            {"lr": -1e-3},
            {"epochs": 0},
            {"batch_size": 1},
            {"aux_loss_weights": (1.0,)},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestTotalLoss:
    def logits(self, rng, n=4, k=9):
        return ForwardOutput(
            logits1=Tensor(rng.normal(size=(n, k)).astype(np.float32)),
            logits2=Tensor(rng.normal(size=(n, k)).astype(np.float32)),
            logits3=Tensor(rng.normal(size=(n, k)).astype(np.float32)),
            lgsff_out=None,
        )

    def test_zero_weights_equal_main_head(self):
        rng = np.random.default_rng(0)
        out = self.logits(rng)
        y = np.array([0, 3, 5, 8])
        only3 = softmax_cross_entropy(out.logits3, y)
        assert float(total_loss(out, y, weights=(0.0, 0.0)).data) == float(only3.data)

    def test_uniform_logits_three_ln_nine(self):
        out = ForwardOutput(
            logits1=Tensor(np.zeros((6, 9), dtype=np.float64)),
            logits2=Tensor(np.zeros((6, 9), dtype=np.float64)),
            logits3=Tensor(np.zeros((6, 9), dtype=np.float64)),
            lgsff_out=None,
        )
        y = np.arange(6) % 9
        value = float(total_loss(out, y).data)
        assert value == pytest.approx(3.0 * np.log(9.0), rel=1e-12)

    def test_weighted_sum(self):
        rng = np.random.default_rng(1)
        out = self.logits(rng)
        y = np.array([1, 2, 3, 4])
        parts = [float(softmax_cross_entropy(l, y).data) for l in
                 (out.logits3, out.logits1, out.logits2)]
        got = float(total_loss(out, y, weights=(0.5, 2.0)).data)
        assert got == pytest.approx(parts[0] + 0.5 * parts[1] + 2.0 * parts[2], rel=1e-6)

    def test_missing_aux_is_contract_error(self):
        rng = np.random.default_rng(2)
        out = self.logits(rng)
        out.logits1 = None
        with pytest.raises(ContractError):
            total_loss(out, np.array([0, 1, 2, 3]))

    def test_aux_paths_change_stage2_gradients(self):
        # loss reaches stage2 both through the backbone and through head1;
        # silencing the aux heads must change the stage2 gradient
        model = build_best_earnet(TINY, seed=3)
        model.eval()
        x = Tensor(np.random.default_rng(4).normal(size=(2, 3, 32, 32)).astype(np.float32))
        y = np.array([0, 1])

        def stage2_grad(weights):
            with Tape() as tape:
                loss = total_loss(model(x), y, weights=weights)
            grads = tape.backward(loss, populate_grad=False)
            stage2 = [
                (n, p)
                for n, p in model.named_parameters()
                if n.startswith("backbone.stage2")
            ]
            assert stage2
            return np.concatenate([grads[p].ravel() for _, p in stage2])

        with_aux = stage2_grad((1.0, 1.0))
        without_aux = stage2_grad((0.0, 0.0))
        assert np.abs(with_aux).max() > 0
        assert not np.allclose(with_aux, without_aux)


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = Parameter(np.array([1.5, -2.0], dtype=np.float64))
        opt = Adam([("p", p)], lr=0.1)
        opt.step({p: np.zeros(2)})
        opt.step({})  # missing entry acts as zero
        np.testing.assert_array_equal(p.data, [1.5, -2.0])
        np.testing.assert_array_equal(opt._m[0], 0.0)
        np.testing.assert_array_equal(opt._v[0], 0.0)

    def test_first_step_magnitude_is_lr(self):
        p = Parameter(np.zeros(5, dtype=np.float64))
        opt = Adam([("p", p)], lr=1e-3)
        opt.step({p: np.ones(5)})
        np.testing.assert_allclose(p.data, -1e-3, rtol=1e-6)

    def test_quadratic_convergence(self):
        p = Parameter(np.array([0.0], dtype=np.float64))
        opt = Adam([("p", p)], lr=0.1)
        for _ in range(200):
            opt.step({p: p.data - 3.0})
        assert abs(float(p.data[0]) - 3.0) < 1e-2

    def test_nan_gradient_names_tensor(self):
        p = Parameter(np.zeros(3, dtype=np.float64))
        opt = Adam([("stem.conv.weight", p)], lr=0.1)
        with pytest.raises(DivergenceError, match="stem.conv.weight"):
            opt.step({p: np.array([0.0, np.nan, 0.0])})

    def test_tracks_model_parameters(self):
        model = build_best_earnet(TINY, seed=0)
        opt = Adam.for_model(model, TrainConfig())
        assert len(opt.params) == sum(1 for _ in model.named_parameters())


class TestKFoldSplit:
    def test_balanced_90_samples(self):
        labels = np.repeat(np.arange(9), 10)
        plan = kfold_split(labels, 5, seed=0)
        assert plan.k == 5
        for val in plan.val_indices:
            assert val.size == 18
            counts = np.bincount(labels[val], minlength=9)
            np.testing.assert_array_equal(counts, 2)

    def test_partition(self):
        labels = np.repeat(np.arange(9), 10)
        plan = kfold_split(labels, 5, seed=1)
        union = np.sort(np.concatenate(plan.val_indices))
        np.testing.assert_array_equal(union, np.arange(90))
        for i in range(5):
            for j in range(i + 1, 5):
                assert np.intersect1d(plan.val_indices[i], plan.val_indices[j]).size == 0
            np.testing.assert_array_equal(
                np.sort(np.concatenate([plan.val_indices[i], plan.train_indices[i]])),
                np.arange(90),
            )

    def test_near_stratification_on_unbalanced(self):
        labels = np.array([0] * 11 + [1] * 7 + [2] * 5)
        plan = kfold_split(labels, 5, seed=2)
        for cls, total in ((0, 11), (1, 7), (2, 5)):
            per_fold = [int(np.sum(labels[v] == cls)) for v in plan.val_indices]
            assert sum(per_fold) == total
            assert max(per_fold) - min(per_fold) <= 1

    def test_deterministic_per_seed(self):
        labels = np.repeat(np.arange(3), 10)
        a = kfold_split(labels, 5, seed=7)
        b = kfold_split(labels, 5, seed=7)
        c = kfold_split(labels, 5, seed=8)
        for va, vb in zip(a.val_indices, b.val_indices):
            np.testing.assert_array_equal(va, vb)
        assert any(
            not np.array_equal(va, vc) for va, vc in zip(a.val_indices, c.val_indices)
        )

    def test_small_class_listed_in_error(self):
        labels = np.array([0] * 10 + [1] * 4)
        with pytest.raises(DataError, match="class 1"):
            kfold_split(labels, 5)

    def test_k_validation(self):
        with pytest.raises(ConfigError):
            kfold_split(np.zeros(10, dtype=int), 1)


class TestBatchIterator:
    def test_prefetch_preserves_order_and_content(self):
        rng = np.random.default_rng(0)
        images = rng.normal(size=(23, 2)).astype(np.float32)
        labels = np.arange(23)
        idx = rng.permutation(23)
        plain = list(batch_iterator(images, labels, idx, 5, prefetch=0))
        threaded = list(batch_iterator(images, labels, idx, 5, prefetch=2))
        assert len(plain) == len(threaded) == 5
        for (xa, ya), (xb, yb) in zip(plain, threaded):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)
        np.testing.assert_array_equal(np.sort(np.concatenate([y for _, y in plain])),
                                      np.arange(23))


class TestRunFold:
    def make_run(self, tmp_path=None, epochs=6, seed=0, per_class=8):
        rng = np.random.default_rng(seed)
        images, labels = color_dataset(rng, per_class=per_class)
        cfg = desk_train_config(epochs=epochs, batch_size=16, seed=seed)
        plan = kfold_split(labels, 4, seed=seed)
        run_dir = None if tmp_path is None else str(tmp_path / "fold0")
        return run_fold(TINY, images, labels, plan, 0, cfg, run_dir=run_dir), plan

    def test_learns_separable_colors(self):
        run, _ = self.make_run(epochs=18, per_class=12)
        assert run.best_val_acc >= 0.9
        assert len(run.epochs) == 18
        # training loss trends down from the start to the best epoch
        assert run.epochs[run.best_epoch].train_loss < run.epochs[0].train_loss

    def test_untrained_accuracy_near_chance(self):
        rng = np.random.default_rng(1)
        images, labels = color_dataset(rng, per_class=10)
        model = build_best_earnet(TINY, seed=1)
        model.eval()
        out = model(Tensor(images))
        acc = float(np.mean(np.argmax(out.logits3.data, axis=1) == labels))
        assert abs(acc - 1.0 / 9.0) <= 0.1

    def test_run_directory_contents(self, tmp_path):
        run, _ = self.make_run(tmp_path, epochs=3)
        d = tmp_path / "fold0"
        cfg = json.loads((d / "config.json").read_text())
        assert cfg["fold"] == 0
        assert cfg["model"]["width_multiplier"] == 0.25
        assert cfg["train"]["epochs"] == 3
        curve = (d / "curve.csv").read_text().strip().splitlines()
        assert curve[0] == "epoch,train_loss,val_loss,val_acc"
        assert len(curve) == 4
        metrics = (d / "metrics.csv").read_text().strip().splitlines()
        assert metrics[0] == "model,fold,class,recall,precision,specificity,f1"
        assert len(metrics) == 1 + 9 + 1  # header, nine classes, overall row
        assert metrics[-1].split(",")[2] == "_overall_"

    def test_best_checkpoint_reproduces_metrics(self, tmp_path):
        run, plan = self.make_run(tmp_path, epochs=3)
        rng = np.random.default_rng(0)
        images, labels = color_dataset(rng, per_class=8)
        fresh = build_best_earnet(TINY, seed=99)
        load_weights(fresh, str(tmp_path / "fold0" / "best.benw"))
        fresh.eval()
        val = plan.val_indices[0]
        out = fresh(Tensor(images[val]))
        acc = float(np.mean(np.argmax(out.logits3.data, axis=1) == labels[val]))
        assert acc == pytest.approx(run.best_val_acc)

    def test_deterministic_given_seed(self):
        run_a, _ = self.make_run(epochs=2, seed=5, per_class=6)
        run_b, _ = self.make_run(epochs=2, seed=5, per_class=6)
        run_c, _ = self.make_run(epochs=2, seed=6, per_class=6)
        assert model_checksum(run_a.model) == model_checksum(run_b.model)
        assert model_checksum(run_a.model) != model_checksum(run_c.model)
        assert [e.train_loss for e in run_a.epochs] == [e.train_loss for e in run_b.epochs]

    def test_divergence_aborts_and_keeps_artifacts(self, tmp_path):
        rng = np.random.default_rng(2)
        images, labels = color_dataset(rng, per_class=6)
        images[0, 0, 0, 0] = np.nan
        cfg = desk_train_config(epochs=2, batch_size=16, seed=0)
        plan = kfold_split(labels, 3, seed=0)
        d = tmp_path / "bad"
        with pytest.raises(DivergenceError):
            run_fold(TINY, images, labels, plan, 0, cfg, run_dir=str(d))
        assert (d / "config.json").exists()
        assert (d / "curve.csv").exists()

    def test_fold_index_validated(self):
        rng = np.random.default_rng(3)
        images, labels = color_dataset(rng, per_class=6)
        plan = kfold_split(labels, 3, seed=0)
        with pytest.raises(ConfigError):
            run_fold(TINY, images, labels, plan, 3, desk_train_config())


class TestCrossValidate:
    def test_three_fold_report(self, tmp_path):
        rng = np.random.default_rng(0)
        images, labels = color_dataset(rng, per_class=6)
        cfg = desk_train_config(epochs=2, batch_size=16, seed=0)
        report = cross_validate(
            TINY, images, labels, cfg, k=3, run_root=str(tmp_path)
        )
        assert len(report.folds) == 3
        assert len(report.accuracies) == 3
        assert report.mean_val_acc == pytest.approx(float(np.mean(report.accuracies)))
        combined = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert combined[0] == "model,fold,class,recall,precision,specificity,f1"
        assert len(combined) == 1 + 3 * 10
        folds_seen = {line.split(",")[1] for line in combined[1:]}
        assert folds_seen == {"0", "1", "2"}
        # fold accuracies aggregate into a confidence interval downstream
        agg = aggregate_folds(report.accuracies)
        assert agg.ci_low <= report.mean_val_acc <= agg.ci_high


class TestClassExtension:
    def test_two_class_subsets_learn_fast(self):
        rng = np.random.default_rng(0)
        images, labels = color_dataset(rng, per_class=16)
        cfg = desk_train_config(epochs=10, batch_size=8, seed=0)
        accs = class_extension_run(images, labels, 2, cfg, TINY, repeats=2)
        assert len(accs) == 2
        assert all(a >= 0.75 for a in accs)

    def test_full_class_count_runs(self):
        rng = np.random.default_rng(1)
        images, labels = color_dataset(rng, per_class=6)
        cfg = desk_train_config(epochs=1, batch_size=16, seed=0)
        accs = class_extension_run(images, labels, 9, cfg, TINY, repeats=1)
        assert len(accs) == 1

    def test_validation(self):
        rng = np.random.default_rng(2)
        images, labels = color_dataset(rng, per_class=6)
        cfg = desk_train_config(epochs=1)
        with pytest.raises(DataError):
            class_extension_run(images, labels, 10, cfg, TINY)
        with pytest.raises(ConfigError):
            class_extension_run(images, labels, 1, cfg, TINY)
        with pytest.raises(ConfigError):
            class_extension_run(images, labels, 2, cfg, TINY, repeats=0)
