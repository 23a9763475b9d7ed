import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from laslab import numerics as nx
from laslab.errors import ConfigError, DimensionError, InputError, NumericError
from laslab.harness.synthetic import SyntheticTaskSpec, generate, load_split
from laslab.las import LasConfig, LasModel, teacher_forced_batch
from laslab.numerics import Tensor
from laslab.training import (
    LrSchedule,
    OptimizerState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    add_weight_noise,
    batch_xent,
    clip_gradients,
    evaluate_loss,
    global_norm,
    make_batches,
    train_loop,
    train_step,
    xent_loss,
)

# A small, nearly noiseless corpus: 4 characters, 2 frames each, 1-4 characters per utterance.
COPY_SPEC = SyntheticTaskSpec(n_chars=4, dim=4, frames_mean=2, frames_jitter=0, noise_std=0.1, min_len=1,
                              max_len=4, n_words=4, max_word_len=1, min_template_distance=2.0,
                              n_train=200, n_valid=40, n_test=10, seed=0)
COPY_MODEL = LasConfig(input_dim=4, encoder_hidden=8, decoder_hidden=16, vocab_size=7, embed_dim=4,
                       attention_dim=8)


@pytest.fixture(scope="module")
def copy_task(tmp_path_factory):
    root = tmp_path_factory.mktemp("copy")
    generate(COPY_SPEC, root)
    return load_split(root, "train"), load_split(root, "valid")


# -- loss -------------------------------------------------------------------------------
def test_uniform_loss():
    lp = Tensor(np.full((2, 4), -math.log(4)))
    assert float(xent_loss(lp, [1, 3]).data) == pytest.approx(2 * math.log(4), rel=1e-15)
    assert float(xent_loss(lp, [1, 3]).data) == pytest.approx(2.7726, abs=1e-4)


def test_perfect_prediction_loss_is_zero():
    lp = np.full((3, 4), -np.inf)
    lp[[0, 1, 2], [2, 0, 3]] = 0.0
    assert float(xent_loss(Tensor(lp), [2, 0, 3]).data) == 0.0


def test_loss_length_mismatch():
    with pytest.raises(InputError):
        xent_loss(Tensor(np.zeros((3, 4))), [1, 2])


def test_batch_xent_ignores_padding():
    lp = np.log(np.full((2, 3, 4), 0.25))
    lp[1, 2] = -100.0  # padded step of the second row
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    total, count = batch_xent(Tensor(lp), [[0, 1, 2], [3, 3]], mask)
    assert count == 5
    assert float(total.data) == pytest.approx(5 * math.log(4))


# -- clipping ---------------------------------------------------------------------------
def test_clip_below_threshold_unchanged():
    g = [np.array([0.3, 0.4])]
    out = clip_gradients(g, 1.0)
    np.testing.assert_array_equal(out[0], g[0])


def test_clip_scales_to_unit_norm():
    np.testing.assert_array_equal(clip_gradients([np.array([2.0, 0.0])], 1.0)[0], [1.0, 0.0])


def test_clip_keeps_dict_keys():
    out = clip_gradients({"a": np.array([3.0]), "b": np.array([4.0])})
    assert list(out) == ["a", "b"]
    np.testing.assert_allclose([out["a"][0], out["b"][0]], [0.6, 0.8])


def test_clip_rejects_non_finite():
    with pytest.raises(NumericError):
        clip_gradients([np.array([1.0, np.nan])])


@settings(max_examples=200, deadline=None)
@given(arrays=st.lists(hnp.arrays(st.sampled_from([np.float32, np.float64]), st.integers(1, 20),
                                  elements=st.floats(-1e6, 1e6, width=32)), min_size=1, max_size=4))
def test_clipped_norm_never_exceeds_bound(arrays):
    assert global_norm(clip_gradients(arrays, 1.0)) <= 1.0 + 1e-12


# -- weight noise ------------------------------------------------------------------------------
def test_zero_noise_is_bitwise_identity():
    rng = np.random.default_rng(0)
    p = {"w": rng.normal(size=(5, 5)).astype(np.float32)}
    out = add_weight_noise(p, 0.0, rng)
    np.testing.assert_array_equal(out["w"], p["w"])
    assert out["w"] is not p["w"]


def test_noise_statistics():
    out = add_weight_noise([np.zeros(100_000)], 0.1, np.random.default_rng(1))[0]
    assert abs(out.std() - 0.1) < 0.003


def test_noise_is_reproducible_and_leaves_input():
    base = [np.ones(10)]
    a = add_weight_noise(base, 0.5, np.random.default_rng(2))
    b = add_weight_noise(base, 0.5, np.random.default_rng(2))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(base[0], np.ones(10))


def test_negative_sigma():
    with pytest.raises(ConfigError):
        add_weight_noise([np.zeros(2)], -1.0, np.random.default_rng(0))


# -- ADAM --------------------------------------------------------------------------------------
def test_first_adam_step_moves_by_lr():
    p = {"x": Tensor(np.array([0.0]), requires_grad=True)}
    adam_step(OptimizerState(lr=1e-3), p, {"x": np.array([0.5])})
    assert p["x"].data[0] == pytest.approx(-1e-3, rel=1e-6)


def test_zero_gradient_leaves_parameters():
    p = {"x": Tensor(np.array([1.5, -2.0]), requires_grad=True)}
    adam_step(OptimizerState(), p, {"x": np.zeros(2)})
    np.testing.assert_array_equal(p["x"].data, [1.5, -2.0])


def test_adam_state_shapes_and_step_counter():
    p = {"W": Tensor(np.zeros((2, 3)), requires_grad=True)}
    st_ = OptimizerState()
    for k in range(1, 4):
        adam_step(st_, p, {"W": np.ones((2, 3))})
        assert st_.step == k
    assert st_.m["W"].shape == st_.v["W"].shape == (2, 3)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(OptimizerState(), {"x": Tensor(np.zeros(2))}, {"x": np.zeros(3)})


def test_pure_l2_decays_norm_monotonically():
    rng = np.random.default_rng(3)
    p = {"x": Tensor(rng.normal(size=50), requires_grad=True)}
    st_ = OptimizerState(lr=1e-3)
    norms = [np.linalg.norm(p["x"].data)]
    for _ in range(100):
        adam_step(st_, p, {"x": 1e-5 * p["x"].data})
        norms.append(np.linalg.norm(p["x"].data))
    assert np.all(np.diff(norms) < 0)


# -- train step ------------------------------------------------------------------------------
def small_batch(model, seed, n=4):
    rng = np.random.default_rng(seed)

    class U:
        def __init__(self, f, y):
            self.features, self.labels = f, y
    return [U(rng.normal(size=(int(rng.integers(4, 12)), model.config.input_dim)),
              list(rng.integers(3, model.config.vocab_size, size=int(rng.integers(1, 5)))))
            for _ in range(n)]


def batch_loss(model, batch):
    with nx.no_grad():
        lp, targets, mask = teacher_forced_batch(model, [u.features for u in batch], [u.labels for u in batch])
        total, count = batch_xent(lp, targets, mask)
    return float(total.data) / count


def test_lr_zero_never_changes_parameters_even_with_huge_noise():
    model = LasModel.create(COPY_MODEL, seed=0)
    before = {k: p.data.copy() for k, p in model.parameters().items()}
    batch = small_batch(model, 0)
    train_step(model, batch, OptimizerState(lr=0.0), TrainConfig(), np.random.default_rng(0), noise_sigma=1e3)
    for k, p in model.parameters().items():
        np.testing.assert_array_equal(p.data, before[k])


def test_one_step_descends_for_most_seeds():
    wins = 0
    for seed in range(20):
        model = LasModel.create(LasConfig(), seed=seed)
        batch = small_batch(model, seed)
        before = batch_loss(model, batch)
        train_step(model, batch, OptimizerState(lr=1e-4), TrainConfig(), np.random.default_rng(seed))
        wins += batch_loss(model, batch) < before
    assert wins > 10


def test_make_batches_covers_every_utterance_once():
    class U:
        def __init__(self, i):
            self.uid, self.features = i, np.zeros((i % 7 + 1, 1))
    utts = [U(i) for i in range(37)]
    batches = make_batches(utts, 8, np.random.default_rng(0))
    assert sorted(u.uid for b in batches for u in b) == list(range(37))
    assert max(len(b) for b in batches) == 8


# -- schedule ----------------------------------------------------------------------------------
def run_schedule(losses, **kw):
    sched = LrSchedule(TrainConfig(**kw))
    lrs, stop_at = [], None
    for epoch, v in enumerate(losses, 1):
        lrs.append(sched.lr)
        if sched.update(epoch, v):
            stop_at = epoch
            break
    return sched, lrs, stop_at


def test_lr_switch_after_patience():
    sched, lrs, stop_at = run_schedule([5, 4, 4.5, 4.2, 4.1, 3.0, 3.5, 3.6, 3.7, 1.0])
    # epochs 3, 4, 5 fail to improve on 4 -> switch recorded at epoch 5
    assert sched.switch_epoch == 5
    assert lrs[:5] == [1e-3] * 5 and all(lr == 1e-4 for lr in lrs[5:])
    assert stop_at == 9


@settings(max_examples=100, deadline=None)
@given(losses=st.lists(st.floats(0, 10), min_size=1, max_size=40), patience=st.integers(1, 5))
def test_lr_switch_at_most_once_and_only_after_patience(losses, patience):
    sched, lrs, _ = run_schedule(losses, patience=patience, stop_after_decay=False)
    switches = sum(1 for a, b in zip(lrs, lrs[1:]) if a != b)
    assert switches <= 1
    if sched.switch_epoch is not None:
        e = sched.switch_epoch
        best_before = min(losses[:e - patience])
        assert all(v >= best_before for v in losses[e - patience:e])


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_initial=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)


# -- full loop -----------------------------------------------------------------------------------
def test_copy_task_learns(copy_task, tmp_path):
    train, valid = copy_task
    model = LasModel.create(COPY_MODEL, seed=0)
    cfg = TrainConfig(lr_initial=1e-2, lr_decayed=1e-3, max_epochs=30, stop_after_decay=False)
    result = train_loop(model, train, valid, cfg, out_dir=tmp_path)
    assert result.best_valid < 0.1
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 1 + len(result.history)
    assert all(len(line.split("\t")) == 5 for line in lines[1:])
    assert (tmp_path / "model.lasc").exists()


def _metrics_without_time(path):
    return [line.split("\t")[:4] for line in path.read_text().splitlines()[1:]]


def test_training_is_deterministic(copy_task, tmp_path):
    train, valid = copy_task
    cfg = TrainConfig(max_epochs=3, seed=5)
    for run in ("a", "b"):
        train_loop(LasModel.create(COPY_MODEL, seed=1), train[:60], valid, cfg, out_dir=tmp_path / run)
    assert _metrics_without_time(tmp_path / "a" / "metrics.tsv") == \
        _metrics_without_time(tmp_path / "b" / "metrics.tsv")
    assert (tmp_path / "a" / "model.lasc").read_bytes() == (tmp_path / "b" / "model.lasc").read_bytes()


def test_divergence_reports_last_finite_loss(copy_task):
    train, valid = copy_task
    model = LasModel.create(COPY_MODEL, seed=0)

    def sabotage(metrics):
        model.W_out.data = np.full_like(model.W_out.data, np.nan)

    with pytest.raises(TrainingDiverged, match=r"last finite per-char loss was \d"):
        train_loop(model, train[:30], valid, TrainConfig(max_epochs=3), progress=sabotage)


def test_empty_sets_rejected(copy_task):
    train, valid = copy_task
    model = LasModel.create(COPY_MODEL, seed=0)
    with pytest.raises(InputError):
        train_loop(model, [], valid, TrainConfig())
    with pytest.raises(InputError):
        train_loop(model, train, [], TrainConfig())


def test_best_parameters_restored(copy_task):
    train, valid = copy_task
    model = LasModel.create(dataclasses.replace(COPY_MODEL), seed=2)
    result = train_loop(model, train[:40], valid, TrainConfig(max_epochs=4))
    assert evaluate_loss(model, valid) == pytest.approx(result.best_valid, rel=1e-12)
