import numpy as np
import pytest

from gstconv.blocks import BlockKind, make_network, tiny_spec
from gstconv.tensor_core import NonFiniteError
from gstconv.training import (
    NonFiniteLossError,
    SyntheticDataset,
    SyntheticSpec,
    TrainConfig,
    accuracy_from_logits,
    evaluate,
    gather_frames,
    gen_synthetic,
    sgd_step,
    train,
)
from gstconv.training.synthetic import render


def frame_set(clip):
    return sorted(clip[:, t].tobytes() for t in range(clip.shape[1]))


def small_set(seed=0, n=4, **kw):
    return gen_synthetic(SyntheticSpec(samples_per_class=n, seed=seed, **kw))


# -- synthetic data ----------------------------------------------------------


def test_noise_free_left_to_right_geometry():
    ds = small_set(noise=0.0, n=3)
    spec = ds.spec
    for clip in ds.clips[ds.labels == 0]:
        cols = [np.nonzero(clip[0, t].any(axis=0))[0][0] for t in range(spec.clip_length)]
        assert np.all(np.diff(cols) == spec.step)
        assert all(clip[0, t].sum() == spec.square ** 2 for t in range(spec.clip_length))


def test_order_pair_shares_frame_sets():
    ds = small_set(n=5)
    ltr = ds.clips[ds.labels == 0]
    rtl = ds.clips[ds.labels == 1]
    for a, b in zip(ltr, rtl):
        assert frame_set(a) == frame_set(b)
        assert not np.array_equal(a, b)


def test_static_classes_do_not_move():
    ds = small_set(noise=0.0)
    for c in (2, 3):
        for clip in ds.clips[ds.labels == c]:
            assert all(np.array_equal(clip[:, t], clip[:, 0]) for t in range(clip.shape[1]))


def test_generation_is_deterministic():
    a, b = small_set(seed=4), small_set(seed=4)
    assert np.array_equal(a.clips, b.clips) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.clips, small_set(seed=5).clips)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(classes=("left_to_right", "static_top"))
    with pytest.raises(ValueError):
        SyntheticSpec(classes=("left_to_right", "right_to_left", "spiral"))


def test_render_square():
    clip = render(np.array([[1, 2]]), SyntheticSpec(image_size=8, square=2))
    assert clip.sum() == 4 and clip[0, 0, 1:3, 2:4].all()


def test_noise_free_order_pair_has_identical_c2d_logits():
    ds = small_set(noise=0.0, n=2)
    net = make_network(tiny_spec(BlockKind.c2d()))
    a, _ = net.forward(ds.clips[ds.labels == 0], "eval")
    b, _ = net.forward(ds.clips[ds.labels == 1], "eval")
    assert np.array_equal(a, b)


def test_subset_keeps_label_space():
    ds = small_set()
    sub = ds.subset(["left_to_right", "right_to_left"])
    assert set(sub.labels.tolist()) == {0, 1} and sub.num_classes == 4


# -- optimiser and loop ------------------------------------------------------


def test_sgd_step_quadratic():
    theta, grad = np.array([0.0]), np.array([0.0])
    grad[:] = theta - 1.0  # d/dθ of (θ-1)²/2
    sgd_step([("theta", theta, grad)], {}, lr=0.1, momentum=0.0)
    assert theta[0] == pytest.approx(0.1, abs=1e-15)


def test_sgd_momentum_accumulates():
    p, g = np.array([0.0]), np.array([1.0])
    vel = {}
    sgd_step([("p", p, g)], vel, 1.0, 0.5)
    sgd_step([("p", p, g)], vel, 1.0, 0.5)
    assert p[0] == -1.0 - 1.5


def test_lr_schedule():
    cfg = TrainConfig(lr=0.01, milestones=(15, 25))
    assert cfg.lr_at(0) == 0.01 and cfg.lr_at(15) == pytest.approx(1e-3) and cfg.lr_at(29) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        TrainConfig(milestones=(10, 5))


def test_zero_learning_rate_keeps_parameters():
    ds = small_set(n=2)
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    before = {n: v.copy() for n, v in net.param_dict().items()}
    train(net, ds, TrainConfig(lr=0.0, epochs=2, batch_size=4))
    assert all(np.array_equal(before[n], v) for n, v in net.param_dict().items())


def test_training_is_deterministic():
    ds = small_set(n=3)
    runs = []
    for _ in range(2):
        net = make_network(tiny_spec(BlockKind.gst("1/4")))
        _, hist = train(net, ds, TrainConfig(epochs=2, batch_size=4), ds)
        runs.append((hist.rows(), net.param_dict()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][n], runs[1][1][n]) for n in runs[0][1])


def test_non_finite_loss_aborts():
    ds = small_set(n=1)
    ds.clips[0, 0, 0, 0, 0] = np.nan
    net = make_network(tiny_spec(BlockKind.c2d()))
    with pytest.raises(NonFiniteLossError) as err:
        train(net, ds, TrainConfig(epochs=1, batch_size=4))
    assert isinstance(err.value, NonFiniteError) and "epoch 1" in str(err.value)


@pytest.mark.parametrize("kind", [BlockKind.c2d(), BlockKind.c3d(), BlockKind.c3d_group(2), BlockKind.p3d(),
                                  BlockKind.gst_large("1/4"), BlockKind.gst("1/4")], ids=lambda k: k.label)
def test_loss_decreases_early(kind):
    ds = small_set(n=8, seed=1)
    net = make_network(tiny_spec(kind))
    _, hist = train(net, ds, TrainConfig(epochs=5, seed=0))
    assert hist.train_loss[-1] < hist.train_loss[0]


# -- evaluation --------------------------------------------------------------


def test_constant_logits_give_class_prior():
    labels = np.array([0, 0, 0, 1, 2])
    acc, per_class = accuracy_from_logits(np.tile([1.0, 0.0, 0.0], (5, 1)), labels)
    assert acc == 3 / 5 and per_class == {"0": 1.0, "1": 0.0, "2": 0.0}


def test_oracle_logits_give_perfect_accuracy():
    labels = np.array([2, 0, 1, 1])
    acc, _ = accuracy_from_logits(np.eye(3)[labels], labels)
    assert acc == 1.0


def test_evaluate_is_deterministic():
    ds = small_set(n=3)
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    a, pa = evaluate(net, ds)
    b, pb = evaluate(net, ds)
    assert a == b and pa == pb and set(pa) == set(ds.class_names)


def test_gather_frames_eval_takes_middles():
    clips = np.arange(16, dtype=float).reshape(1, 1, 16, 1, 1)
    out = gather_frames(clips, 8, "eval")
    assert out[0, 0, :, 0, 0].tolist() == [0, 2, 4, 6, 8, 10, 12, 14]


# -- trained models ----------------------------------------------------------


@pytest.mark.slow
def test_trained_gst_solves_task(trained_gst, synthetic_sets):
    net, hist = trained_gst
    assert len(hist) == 30
    assert hist.eval_acc[-1] >= 0.9


@pytest.mark.slow
def test_trained_c2d_is_blind_to_order(trained_c2d, synthetic_sets):
    net, _ = trained_c2d
    _, ev = synthetic_sets
    acc_order, _ = evaluate(net, ev.subset(["left_to_right", "right_to_left"]))
    acc_static, _ = evaluate(net, ev.subset(["static_top", "static_bottom"]))
    assert acc_order <= 0.6 and acc_static >= 0.9


def test_dataset_iteration():
    ds = small_set(n=1)
    items = list(ds)
    assert len(items) == 4 and items[0][0].shape == (1, 1, 8, 32, 32)
    assert isinstance(ds, SyntheticDataset)
