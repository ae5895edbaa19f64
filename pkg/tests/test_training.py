import numpy as np
import pytest

from scenenet.convnet import Architecture
from scenenet.errors import ConfigurationError, FileFormatError, NumericError, VersionError
from scenenet.mwfd import FeatureExample, StandardizationStats
from scenenet.training import (EarlyStopping, TrainConfig, checkpoint, init_optimizer_state, label_indices,
                               learning_rate, restore, sgd_nesterov_step, split_validation, train_fold)


def scalar_step(p, v, g, lr, m):
    params, state = [np.array([p], np.float64)], [np.array([v], np.float64)]
    sgd_nesterov_step(params, [np.array([g], np.float64)], state, lr, m)
    return params[0][0], state[0][0]


def test_nesterov_scalar_walkthrough():
    p, v = scalar_step(1.0, 0.0, 1.0, 0.1, 0.9)
    assert v == pytest.approx(-0.1, abs=1e-15)
    assert p == pytest.approx(0.81, abs=1e-15)


def test_zero_momentum_is_plain_sgd():
    rng = np.random.default_rng(0)
    p0, g = rng.standard_normal(5), rng.standard_normal(5)
    params, state = [p0.copy()], init_optimizer_state([p0])
    for _ in range(3):
        sgd_nesterov_step(params, [g], state, 0.05, 0.0)
    np.testing.assert_allclose(params[0], p0 - 3 * 0.05 * g, atol=1e-12)


def test_zero_gradient_fixed_point():
    p0 = np.arange(6, dtype=np.float32).reshape(2, 3)
    params, state = [p0.copy()], init_optimizer_state([p0])
    sgd_nesterov_step(params, [np.zeros_like(p0)], state, 0.1, 0.9)
    np.testing.assert_array_equal(params[0], p0)
    assert state[0].shape == p0.shape and not state[0].any()


def test_nesterov_rejects_bad_gradients():
    params, state = [np.zeros(3)], [np.zeros(3)]
    with pytest.raises(NumericError):
        sgd_nesterov_step(params, [np.array([0.0, np.nan, 0.0])], state, 0.1, 0.9)
    with pytest.raises(ConfigurationError):
        sgd_nesterov_step(params, [np.zeros(4)], state, 0.1, 0.9)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert learning_rate(cfg, 0) == 0.02
    assert learning_rate(cfg, 10) == pytest.approx(0.019, abs=1e-15)
    assert learning_rate(cfg, 199) == pytest.approx(1e-4, abs=1e-12)
    assert learning_rate(cfg, 200) == 1e-6
    assert learning_rate(cfg, 450) == 1e-6
    lrs = [learning_rate(cfg, e) for e in range(300)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_early_stopping_walkthrough():
    stopper = EarlyStopping(15)
    losses = [5.0] + [4.0] * 40
    stopped = None
    for epoch, loss in enumerate(losses):
        stopper.update(epoch, loss)
        if stopper.should_stop(epoch):
            stopped = epoch
            break
    assert stopped == 16
    assert stopper.best_epoch == 1


def test_config_validation():
    for bad in (dict(validation_fraction=0.0), dict(validation_fraction=0.5), dict(batch_size=0),
                dict(lr_floor=0.0)):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad)


def toy_examples(n_windows, rng, shape=(7, 8), classes=("a", "b", "c")):
    out = []
    for w in range(n_windows):
        label = classes[w % len(classes)]
        base = rng.standard_normal(shape).astype(np.float32)
        base[:, : 2 + 2 * (w % len(classes))] += 2.0
        for variant in ("static", "delta3"):
            out.append(FeatureExample(base + 0.1 * rng.standard_normal(shape).astype(np.float32),
                                      variant, label, f"clip{w // 3}", w))
    return out


def test_split_keeps_window_variants_together():
    examples = toy_examples(40, np.random.default_rng(1))
    train, val = split_validation(examples, 0.15, np.random.default_rng(2))
    train_keys = {(e.clip_id, e.window_index) for e in train}
    val_keys = {(e.clip_id, e.window_index) for e in val}
    assert not train_keys & val_keys
    assert len(val_keys) == 6 and len(train) + len(val) == len(examples)


def test_empty_training_set():
    with pytest.raises(ConfigurationError):
        train_fold(TrainConfig(), [], ["a", "b", "c"], arch=Architecture.tiny())


def test_label_outside_vocabulary():
    ex = toy_examples(3, np.random.default_rng(0))
    with pytest.raises(Exception, match="vocabulary"):
        label_indices(ex, ["a", "b"])


def test_two_example_loss_decreases():
    rng = np.random.default_rng(3)
    # dropout off: this checks the optimizer's sign conventions, not regularisation noise
    arch = Architecture.tiny(n_classes=2, conv_dropout=0.0, dense_dropout=0.0)
    x = rng.standard_normal((2, 7, 8)).astype(np.float32)
    train = [FeatureExample(x[0], "static", "a", "c0", 0), FeatureExample(x[1], "static", "b", "c1", 0)]
    cfg = TrainConfig(max_epochs=5, seed=4)
    _, history = train_fold(cfg, train, ["a", "b"], arch=arch, validation_examples=train)
    losses = [r.train_loss for r in history.epochs]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_is_reproducible_and_restores_best():
    examples = toy_examples(30, np.random.default_rng(5))
    cfg = TrainConfig(max_epochs=6, batch_size=16, seed=7)
    arch = Architecture.tiny()
    net_a, hist_a = train_fold(cfg, examples, ["a", "b", "c"], arch=arch)
    net_b, hist_b = train_fold(cfg, examples, ["a", "b", "c"], arch=arch)
    assert hist_a.csv_rows() == hist_b.csv_rows()
    assert all(np.array_equal(p, q) for p, q in zip(net_a.params, net_b.params))
    assert [r.epoch for r in hist_a.epochs] == list(range(len(hist_a.epochs)))
    best = min(hist_a.epochs, key=lambda r: r.val_loss)
    assert hist_a.best_epoch == best.epoch
    _, hist_c = train_fold(cfg, examples, ["a", "b", "c"], arch=arch, seed=8)
    assert hist_c.csv_rows() != hist_a.csv_rows()


def test_callback_can_stop_training():
    examples = toy_examples(12, np.random.default_rng(6))
    seen = []
    _, history = train_fold(TrainConfig(max_epochs=50, seed=1), examples, ["a", "b", "c"],
                            arch=Architecture.tiny(), on_epoch=lambda rec, net: seen.append(rec.epoch) or rec.epoch == 2)
    assert seen == [0, 1, 2] and history.stop_reason == "stopped by callback"


def test_history_csv_has_no_wall_time(tmp_path):
    examples = toy_examples(12, np.random.default_rng(6))
    _, history = train_fold(TrainConfig(max_epochs=2), examples, ["a", "b", "c"], arch=Architecture.tiny())
    history.write_csv(tmp_path / "h.csv", comment="config: x=1")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "# config: x=1"
    assert lines[1] == "epoch,train_loss,val_loss,val_acc,lr"
    assert len(lines) == 4
    history.write_timing_log(tmp_path / "t.log")
    assert (tmp_path / "t.log").read_text().startswith("epoch=0 seconds=")


@pytest.fixture
def saved(tmp_path):
    from scenenet.convnet import Network
    net = Network(Architecture.tiny(), seed=2, classes=["a", "b", "c"])
    stats = StandardizationStats({"static": np.linspace(-1, 1, 8, dtype=np.float32)},
                                 {"static": np.linspace(1, 2, 8, dtype=np.float32)})
    path = tmp_path / "m.scnm"
    checkpoint(net, stats, path)
    return net, stats, path


def test_checkpoint_round_trip(saved):
    net, stats, path = saved
    back, back_stats = restore(path)
    x = np.random.default_rng(0).standard_normal((4, 1, 7, 8)).astype(np.float32)
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
    np.testing.assert_array_equal(back_stats.mean["static"], stats.mean["static"])
    np.testing.assert_array_equal(back_stats.std["static"], stats.std["static"])
    assert back.classes == ["a", "b", "c"]


def test_truncated_checkpoint(saved):
    _, _, path = saved
    raw = path.read_bytes()
    for cut in (3, 10, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(FileFormatError):
            restore(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(OSError):
        restore(tmp_path / "absent.scnm")


def test_checkpoint_version_mismatch(saved):
    _, _, path = saved
    raw = bytearray(path.read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError) as info:
        restore(path)
    assert "7" in str(info.value) and "1" in str(info.value)
