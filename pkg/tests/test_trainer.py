import numpy as np
import pytest

import promptot.trainer as trainer_mod
from benchmarks import standard_run
from promptot.alignment import LOG_TAU_MAX, PromptBank
from promptot.data import EmbeddingDataset
from promptot.errors import MissingTruth, ShapeMismatch, ValidationError
from promptot.objectives import GradientSet
from promptot.synth import SynthConfig, gen_dataset, make_noisy_dataset
from promptot.trainer import SGDState, TrainConfig, evaluate, sgd_step, train

SMALL = SynthConfig(num_classes=3, shots=6, dim=8, patches=4, noise_rate=0.25, seed=1)


def scalar_bank(value=1.0):
    return PromptBank(np.full((1, 1, 1), value), np.full((1, 1, 1), value), 0.0)


def scalar_grads(g):
    return GradientSet(np.full((1, 1, 1), g), np.full((1, 1, 1), g), 0.0)


class TestSGD:
    def test_zero_gradient_keeps_params(self):
        bank = scalar_bank()
        new, _ = sgd_step(bank, scalar_grads(0.0), SGDState.zeros_like(bank), TrainConfig(weight_decay=0.0))
        assert new.clean[0, 0, 0] == 1.0 and new.log_tau == 0.0

    def test_single_plain_step(self):
        bank = scalar_bank()
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0)
        new, _ = sgd_step(bank, scalar_grads(1.0), SGDState.zeros_like(bank), cfg)
        assert new.clean[0, 0, 0] == pytest.approx(0.9, abs=1e-15)

    def test_two_momentum_steps(self):
        bank = scalar_bank()
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        state = SGDState.zeros_like(bank)
        for _ in range(2):
            bank, state = sgd_step(bank, scalar_grads(1.0), state, cfg)
        assert bank.clean[0, 0, 0] - 1.0 == pytest.approx(-0.29, abs=1e-12)

    def test_weight_decay_spares_temperature(self):
        bank = scalar_bank()
        bank.log_tau = 1.0
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
        new, _ = sgd_step(bank, scalar_grads(0.0), SGDState.zeros_like(bank), cfg)
        assert new.clean[0, 0, 0] == pytest.approx(0.95) and new.log_tau == 1.0

    def test_temperature_clamped(self):
        bank = scalar_bank()
        grads = GradientSet(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), -1e6)
        new, _ = sgd_step(bank, grads, SGDState.zeros_like(bank), TrainConfig())
        assert new.log_tau == LOG_TAU_MAX

    def test_inputs_untouched(self):
        bank = scalar_bank()
        state = SGDState.zeros_like(bank)
        sgd_step(bank, scalar_grads(1.0), state, TrainConfig())
        assert bank.clean[0, 0, 0] == 1.0 and state.v_clean[0, 0, 0] == 0.0

    def test_shape_mismatch(self):
        bank = PromptBank(np.ones((2, 1, 1)), np.ones((2, 1, 1)))
        with pytest.raises(ShapeMismatch):
            sgd_step(bank, scalar_grads(1.0), SGDState.zeros_like(bank), TrainConfig())


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [{"sup_epochs": 60}, {"epochs": -1}, {"batch_size": 0}, {"q": 0.0}, {"learning_rate": -1.0},
               {"refine_every": "step"}]
    )
    def test_validation(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)


class TestTrain:
    def test_zero_epochs(self):
        ds = make_noisy_dataset(SMALL)
        bank, history = train(ds, TrainConfig(epochs=0, sup_epochs=0))
        assert len(history) == 0
        again, _ = train(ds, TrainConfig(epochs=0, sup_epochs=0))
        assert bank.clean.tobytes() == again.clean.tobytes()
        assert bank.tau == pytest.approx(0.07)

    def test_zero_learning_rate_freezes_bank(self):
        ds = make_noisy_dataset(SMALL)
        init, _ = train(ds, TrainConfig(epochs=0, sup_epochs=0))
        bank, history = train(ds, TrainConfig(epochs=3, sup_epochs=1, learning_rate=0.0))
        assert len(history) == 3
        assert bank.clean.tobytes() == init.clean.tobytes()
        assert bank.noisy.tobytes() == init.noisy.tobytes()
        assert bank.log_tau == init.log_tau

    def test_deterministic(self):
        ds = make_noisy_dataset(SMALL)
        cfg = TrainConfig(epochs=4, sup_epochs=2, batch_size=8, seed=5)
        a, ha = train(ds, cfg)
        b, hb = train(ds, cfg)
        assert a.clean.tobytes() == b.clean.tobytes() and a.log_tau == b.log_tau
        assert ha.records == hb.records

    def test_supplied_bank_is_used(self):
        ds = make_noisy_dataset(SMALL)
        start = PromptBank.random(3, 2, 8, np.random.default_rng(9))
        bank, _ = train(ds, TrainConfig(epochs=1, sup_epochs=1, views=2, learning_rate=0.0), bank=start)
        assert bank.clean.tobytes() == start.clean.tobytes()
        with pytest.raises(ShapeMismatch):
            train(ds, TrainConfig(epochs=1, sup_epochs=1), bank=PromptBank.random(4, 2, 8))

    def test_pure_supervised_schedule(self):
        ds = make_noisy_dataset(SMALL)
        _, history = train(ds, TrainConfig(epochs=3, sup_epochs=3))
        initial = float(np.mean(ds.labels != ds.truth))
        for rec in history.records:
            assert rec["phase"] == "supervised" and "report" not in rec
            assert rec["noise_ratio"] == initial

    @pytest.mark.parametrize("cadence", ["epoch", "batch"])
    def test_labels_follow_schedule(self, monkeypatch, cadence):
        ds = make_noisy_dataset(SMALL)
        seen = []
        original = trainer_mod.loss_and_gradients

        def spy(feats, labels, *args, with_itbp, **kwargs):
            seen.append((np.array(labels), with_itbp))
            return original(feats, labels, *args, with_itbp=with_itbp, **kwargs)

        monkeypatch.setattr(trainer_mod, "loss_and_gradients", spy)
        cfg = TrainConfig(epochs=4, sup_epochs=2, batch_size=6, refine_every=cadence)
        _, history = train(ds, cfg)
        per_epoch = len(seen) // cfg.epochs
        order_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(trainer_mod.TRAIN_STREAM,)))
        PromptBank.random(3, cfg.views, 8, order_rng)
        for epoch in range(1, cfg.epochs + 1):
            order = order_rng.permutation(len(ds))
            for b in range(per_epoch):
                labels, with_itbp = seen[(epoch - 1) * per_epoch + b]
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                if epoch <= cfg.sup_epochs:
                    np.testing.assert_array_equal(labels, ds.labels[idx])
                    assert with_itbp
                else:
                    assert not with_itbp
        assert [r["phase"] for r in history.records] == ["supervised"] * 2 + ["refine"] * 2
        assert all("report" in r for r in history.records[2:])

    def test_single_class_rejected(self):
        ds = EmbeddingDataset(np.ones((2, 3)), np.ones((2, 1, 3)), [0, 0], 1)
        with pytest.raises(ValidationError):
            train(ds, TrainConfig(epochs=1, sup_epochs=1))


class TestEvaluate:
    def test_prototype_bank_is_perfect(self):
        protos = np.eye(12)[:4]
        ds = EmbeddingDataset(protos, np.repeat(protos[:, None], 3, axis=1), np.arange(4), 4, np.arange(4))
        assert evaluate(PromptBank(np.repeat(protos[:, None], 2, axis=1),
                                   np.repeat(np.eye(12)[4:8, None], 2, axis=1)), ds) == 1.0

    def test_single_class_accuracy_is_prediction_share(self):
        rng = np.random.default_rng(1)
        bank = PromptBank.random(3, 2, 6, rng)
        ds = EmbeddingDataset(rng.standard_normal((20, 6)), rng.standard_normal((20, 4, 6)),
                              np.zeros(20, int), 3, np.zeros(20, int))
        preds = trainer_mod.predict_dataset(bank, ds)
        assert evaluate(bank, ds) == np.mean(preds == 0)

    def test_missing_truth(self):
        bank = PromptBank.random(2, 1, 3)
        with pytest.raises(MissingTruth):
            evaluate(bank, EmbeddingDataset(np.ones((2, 3)), np.ones((2, 1, 3)), [0, 1], 2))
        with pytest.raises(MissingTruth):
            evaluate(bank, EmbeddingDataset(np.zeros((0, 3)), np.zeros((0, 1, 3)), np.zeros(0, int), 2,
                                            np.zeros(0, int)))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_five_class_run_denoises(seed):
    cfg = SynthConfig(num_classes=5, shots=16, noise_rate=0.5, seed=seed)
    ds = make_noisy_dataset(cfg)
    bank, history = train(ds, TrainConfig(seed=seed))
    assert history.records[-1]["noise_ratio"] < 0.5
    assert evaluate(bank, gen_dataset(cfg, "test")) > 0.2


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_noise_ratio_trends_down_after_refinement_starts(seed):
    _, history, _ = standard_run(seed)
    first_refine = history.records[TrainConfig().sup_epochs]
    assert first_refine["phase"] == "refine"
    assert history.records[-1]["noise_ratio"] < first_refine["noise_ratio"]
