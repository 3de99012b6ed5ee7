import json

import numpy as np
import pytest

from retargetkit import dataset, geom, policy, synth
from retargetkit.dataset import GoalSet, ObservationMask, apply_mask, hindsight_expand
from retargetkit.policy import (PolicyConfig, PolicyConfigError, PolicyModel, PolicyNumericError, TrainConfig,
                                align_inputs, embed_text, gradient_check, predict)
from retargetkit.skeleton import KP_INDEX, KeypointFrame

SMALL = dict(d_text=32, d_proprio=32, encoder_hidden=48, trunk_hidden=(48, 48))


@pytest.fixture(scope="module")
def tuples():
    ms = synth.human_corpus(4, seed=5, n_frames=6)
    ms[0].annotation = "lift the box"
    ms[1].annotation = "boxing with friend"
    return [t for m in ms for t in hindsight_expand(m, 2)]


def test_embed_text():
    assert not embed_text("").any()
    assert np.array_equal(embed_text("Wave, hello!"), embed_text("wave hello"))
    v = embed_text("lift the box")
    assert v.shape == (256,) and np.linalg.norm(v) == pytest.approx(1.0)
    cos = float(v @ embed_text("boxing with friend"))
    assert cos < 0.9
    assert cos == 0.0  # no shared tokens and no bucket collisions under hash seed 0
    assert not np.array_equal(embed_text("lift the box", seed=1), v)


def test_align_inputs_shape_and_masking(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    t = tuples[0]
    v = align_inputs(t.s, t.g, t.l, m)
    assert v.shape == (64,)
    mask = ObservationMask({"neck"})
    a = apply_mask(t.s, mask)
    other = t.s.copy()
    other.positions[KP_INDEX["neck"]] += [0.3, -0.2, 0.1]
    other.orientations[KP_INDEX["neck"]] = geom.quat_from_axis_angle([1, 0, 0], 1.0)
    b = apply_mask(other, mask)
    assert np.array_equal(align_inputs(a, t.g, "", m), align_inputs(b, t.g, "", m))
    assert not np.array_equal(align_inputs(t.s, t.g, "", m), align_inputs(tuples[3].s, t.g, "", m))


def test_align_inputs_dimension_mismatch(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    m.W[0] = np.zeros((48, 100))
    with pytest.raises(PolicyConfigError):
        align_inputs(tuples[0].s, tuples[0].g, "", m)
    with pytest.raises(PolicyConfigError):
        PolicyConfig(d_text=32, d_proprio=16)


def test_predict_contract(tuples):
    t = tuples[0]
    for m in (PolicyModel(), PolicyModel(zero=True)):
        a = predict(m, t.s, t.g, t.l)
        assert isinstance(a, KeypointFrame)
        assert np.allclose(np.linalg.norm(a.orientations, axis=1), 1.0, atol=1e-9)
        assert predict(m, t.s, t.g, t.l) == a


def test_predict_numeric_error_names_layer(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    m.W[4][:] = np.nan
    with pytest.raises(PolicyNumericError) as ei:
        predict(m, tuples[0].s, tuples[0].g, "")
    assert ei.value.layer == 4


def _frame():
    return synth.human_motion(np.random.default_rng(0), n_frames=2).frames[0]


def test_loss_examples():
    f = _frame()
    assert policy.loss(f, f) == (0.0, 0.0, 0.0)
    shifted = KeypointFrame(f.positions + [0.1, 0, 0], f.orientations)
    tot, pos, rot = policy.loss(shifted, f)
    assert pos == pytest.approx(0.01) and rot == pytest.approx(0.0, abs=1e-14)
    q = geom.quat_from_axis_angle([0, 1, 0], np.pi / 2)
    turned = KeypointFrame(f.positions, [geom.quat_mul(q, o) for o in f.orientations])
    tot, pos, rot = policy.loss(turned, f)
    assert pos == 0.0 and rot == pytest.approx((np.pi / 2) ** 2, rel=1e-9)
    flipped = KeypointFrame(f.positions, -f.orientations, normalize=False)
    assert policy.loss(flipped, f)[0] == pytest.approx(0.0, abs=1e-14)
    assert policy.loss(turned, f, lambda_rot=2.0)[0] == pytest.approx(2 * rot)


def test_zero_epochs_is_noop(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    before = [p.copy() for p in m.params()]
    rep = policy.train(m, tuples, TrainConfig(epochs=0))
    assert rep.epoch_loss == [] and all(np.array_equal(a, b) for a, b in zip(before, m.params()))
    with pytest.raises(ValueError):
        policy.train(m, [], TrainConfig(epochs=1))


def test_training_is_reproducible(tuples):
    runs = []
    for _ in range(2):
        m = PolicyModel(PolicyConfig(**SMALL))
        rep = policy.train(m, tuples, TrainConfig(epochs=3, batch=8, seed=4))
        runs.append((rep.to_json(), json.dumps(m.to_json())))
    assert runs[0] == runs[1]
    assert all(np.isfinite(runs[0][0]["step_loss"]))


def test_divergence_aborts(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    rep = policy.train(m, tuples, TrainConfig(epochs=50, batch=4, step_size=1e4, optimizer="sgd"))
    assert rep.diverged and rep.steps < 50 * len(tuples) // 4


def test_default_config_loss_settles(tuples):
    """Full-batch run with the shipped defaults: window-10 smoothed loss never rises in the second half."""
    batch = tuples[:64]
    m = PolicyModel()
    rep = policy.train(m, batch, TrainConfig())
    smooth = np.convolve(rep.step_loss, np.ones(10) / 10, mode="valid")
    tail = smooth[len(smooth) // 2:]
    assert np.all(np.diff(tail) <= 0)
    assert rep.epoch_loss[-1] < rep.epoch_loss[0]


def test_checkpoint_roundtrip(tuples, tmp_path):
    m = PolicyModel(PolicyConfig(**SMALL))
    policy.train(m, tuples, TrainConfig(epochs=1, batch=16))
    path = tmp_path / "ck.json"
    m.save(path)
    back = PolicyModel.load(path)
    t = tuples[2]
    assert predict(back, t.s, t.g, t.l) == predict(m, t.s, t.g, t.l)
    d = json.loads(path.read_text())
    assert {"config", "layers", "hash_seed", "lambda_rot"} <= set(d)
    d["layers"][1]["rows"] += 1
    with pytest.raises(PolicyConfigError):
        PolicyModel.from_json(d)


def test_gradient_check_small(tuples):
    m = PolicyModel(PolicyConfig(**SMALL))
    err = gradient_check(m, tuples[1], 1e-5, seed=3, fraction=0.2)
    assert err < 1e-4
    assert gradient_check(m, tuples[1], 1e-5, seed=3, fraction=0.2) == err
    with pytest.raises(ValueError):
        gradient_check(m, tuples[1], 1e-2)


def test_gradient_check_zero_model():
    f = KeypointFrame(np.zeros((11, 3)), np.tile(geom.IDENTITY_QUAT, (11, 1)))
    tup = dataset.TrainingTuple(f, GoalSet.from_frame(f), "", f, 1)
    m = PolicyModel(PolicyConfig(**SMALL), zero=True)
    m.b[-1][:] = 0.05  # give the head bias a nonzero gradient
    (_, _, _), grads = policy.loss_and_grads(m, policy.encode(m, [tup]))
    batch = policy.encode(m, [tup])
    eps = 1e-6
    for j in range(len(m.b[-1])):
        old = m.b[-1][j]
        m.b[-1][j] = old + eps
        lp = policy._loss_only(m, batch, 1.0)
        m.b[-1][j] = old - eps
        lm = policy._loss_only(m, batch, 1.0)
        m.b[-1][j] = old
        assert abs((lp - lm) / (2 * eps) - grads[-1][j]) < 1e-8
    assert gradient_check(m, tup, 1e-5, which="bias") < 1e-6


def test_unique_rows():
    x = np.array([[1.0, 2.0], [3.0, 4.0], [1.0, 2.0], [5.0, 6.0], [3.0, 4.0]])
    u, rows = policy._unique_rows(x)
    assert u.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
    assert rows.tolist() == [0, 1, 0, 2, 1]


def test_grouped_text_gradients(tuples):
    """Batches mixing several texts: text-branch gradients match central differences."""
    m = PolicyModel(PolicyConfig(**SMALL))
    batch_t = [dataset.TrainingTuple(t.s, t.g, ("wave", "clap", "")[i % 3], t.a, t.k)
               for i, t in enumerate(tuples[:12])]
    policy.train(m, batch_t, TrainConfig(epochs=2, batch=4))
    b = policy.encode(m, batch_t)
    _, grads = policy.loss_and_grads(m, b)
    rng = np.random.default_rng(0)
    for li in (2, 3):
        W = m.W[li]
        for _ in range(10):
            r, c = rng.integers(W.shape[0]), rng.integers(W.shape[1])
            old = W[r, c]
            W[r, c] = old + 1e-6
            lp = policy._loss_only(m, b, 1.0)
            W[r, c] = old - 1e-6
            lm = policy._loss_only(m, b, 1.0)
            W[r, c] = old
            num = (lp - lm) / 2e-6
            assert abs(grads[2 * li][r, c] - num) <= 1e-4 * max(abs(num), 1e-6)
