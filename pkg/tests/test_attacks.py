import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpatch import attacks, circuits, classifier
from qpatch.attacks import Pipeline
from qpatch.circuits import RqcSpec
from qpatch.classifier import ClassifierParams, ClassifierSpec
from qpatch.errors import UndefinedMetricError, UsageError

from oracles import central_difference, max_rel_err

RQC = RqcSpec(seed=3, depth=4)


def random_pipeline(rng, shape=(4, 4), rqc=None, include_original=True, n_classes=2):
    n_pix = shape[0] * shape[1]
    if rqc is None:
        n_feat = n_pix
    else:
        cells = -(-shape[0] // 2) * -(-shape[1] // 2)
        n_feat = cells * (5 if include_original else 4)
    spec = ClassifierSpec(n_feat, 4, n_classes)
    params = ClassifierParams(rng.uniform(-np.pi, np.pi, spec.n_theta), rng.uniform(-1, 1, n_feat))
    return Pipeline(spec, params, rqc, include_original)


def batch_loss(model, x, y):
    return float(classifier.per_sample_loss(model.predict_proba(x), y).sum())


@pytest.mark.parametrize("rqc", [None, RQC])
def test_input_gradient_finite_difference(rqc):
    rng = np.random.default_rng(0)
    model = random_pipeline(rng, (4, 6), rqc)
    x = rng.random((2, 4, 6))
    y = np.array([0, 1])
    fd = central_difference(lambda xx: batch_loss(model, xx, y), x)
    for method in ("shift", "adjoint"):
        grad = attacks.input_gradient(model, x, y, method=method)
        assert grad.shape == x.shape
        assert max_rel_err(grad, fd) < 1e-5


def test_input_gradient_single_image_shape():
    rng = np.random.default_rng(1)
    model = random_pipeline(rng)
    x = rng.random((4, 4))
    assert attacks.input_gradient(model, x, 1).shape == (4, 4)
    with pytest.raises(UsageError):
        attacks.input_gradient(model, rng.random((2, 4, 4)), [0])


def test_zero_weight_zero_gradient():
    rng = np.random.default_rng(2)
    model = random_pipeline(rng)
    model.params.w[5] = 0.0
    grad = attacks.input_gradient(model, rng.random((3, 4, 4)), [0, 1, 0])
    assert np.all(grad.reshape(3, -1)[:, 5] == 0)


def test_fgsm_zero_epsilon_is_identity():
    rng = np.random.default_rng(3)
    model = random_pipeline(rng, rqc=RQC)
    x = rng.random((3, 4, 4))
    adv = attacks.fgsm(model, x, [0, 1, 1], 0.0)
    assert np.array_equal(adv.perturbed, x)
    with pytest.raises(UsageError):
        attacks.fgsm(model, x, [0, 1, 1], -0.1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5))
def test_fgsm_budget_property(seed, eps):
    rng = np.random.default_rng(seed)
    model = random_pipeline(rng)
    x = rng.random((4, 4, 4))
    x[0, 0, 0], x[1, 0, 0] = 0.0, 1.0
    adv = attacks.fgsm(model, x, rng.integers(0, 2, 4), eps)
    assert np.max(np.abs(adv.perturbed - x)) <= eps + 1e-12
    assert adv.perturbed.min() >= 0 and adv.perturbed.max() <= 1


def test_fgsm_sign_structure():
    rng = np.random.default_rng(4)
    model = random_pipeline(rng)
    x = np.full((2, 4, 4), 0.5)
    grad = attacks.input_gradient(model, x, [0, 1])
    grad[0, 0, 0] = 0.0
    adv = attacks.fgsm(model, x, [0, 1], 0.1, grad=grad)
    delta = np.round((adv.perturbed - x) / 0.1, 12)
    assert set(np.unique(delta)) <= {-1.0, 0.0, 1.0}
    assert delta[0, 0, 0] == 0


def test_adversarial_accuracy_and_asr():
    class Fixed:
        def __init__(self, preds):
            self.preds = preds

        def predict(self, x):
            return self.preds[np.asarray(x, dtype=int)[:, 0, 0]]

    y = np.array([0, 1, 0, 1])
    clean_idx = np.arange(4).reshape(4, 1, 1)
    adv_idx = clean_idx + 4
    all_right = Fixed(np.concatenate([y, y]))
    assert attacks.adversarial_accuracy(all_right, adv_idx, y) == 1.0
    assert attacks.attack_success_rate(all_right, clean_idx, adv_idx, y) == 0.0
    none_right = Fixed(np.concatenate([y, 1 - y]))
    assert attacks.adversarial_accuracy(none_right, adv_idx, y) == 0.0
    assert attacks.attack_success_rate(none_right, clean_idx, adv_idx, y) == 1.0
    with pytest.raises(UndefinedMetricError):
        attacks.attack_success_rate(Fixed(np.concatenate([1 - y, y])), clean_idx, adv_idx, y)
    with pytest.raises(UsageError):
        attacks.adversarial_accuracy(all_right, np.zeros((0, 1, 1)), np.array([]))


def test_success_rate_arithmetic():
    labels = np.zeros(12, dtype=int)
    clean = np.zeros(12, dtype=int)
    clean[10:] = 1  # 10 clean-correct
    adv = clean.copy()
    adv[:3] = 1  # 3 of them flip
    assert attacks.success_rate(clean, adv, labels) == pytest.approx(0.3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_metric_confusion_identity(pairs):
    clean_ok = np.array([p[0] for p in pairs])
    adv_ok = np.array([p[1] for p in pairs])
    labels = np.zeros(len(pairs), dtype=int)
    clean_pred = np.where(clean_ok, 0, 1)
    adv_pred = np.where(adv_ok, 0, 1)
    aa = float(np.mean(adv_pred == labels))
    ca = float(np.mean(clean_ok))
    recovered = float(np.mean(~clean_ok & adv_ok))
    if not clean_ok.any():
        with pytest.raises(UndefinedMetricError):
            attacks.success_rate(clean_pred, adv_pred, labels)
        return
    asr = attacks.success_rate(clean_pred, adv_pred, labels)
    assert aa == pytest.approx(ca * (1 - asr) + recovered, abs=1e-12)
    assert aa >= ca - asr * ca - (1 - ca) - 1e-12


def test_lipschitz_closed_forms():
    spec = ClassifierSpec(3, 4, 2)
    zero = ClassifierParams(np.zeros(spec.n_theta), np.zeros(3))
    assert attacks.lipschitz_bound(zero, spec) == 0.0
    one = ClassifierParams(np.zeros(spec.n_theta), np.array([1.0, 0.0, 0.0]))
    assert attacks.lipschitz_bound(one, spec) == math.pi
    w = np.array([0.5, -2.0, 1.0])
    assert attacks.lipschitz_bound(ClassifierParams(zero.theta, w), spec) == pytest.approx(
        math.pi * np.abs(w).sum(), rel=1e-15)


def test_single_gate_slope_bounded_by_pi():
    emb = circuits.angle_embedding(1, [1.0])
    x = np.linspace(0, 1, 2001)
    z = circuits.expectations(emb, x[:, None])[:, 0]
    slope = np.abs(np.diff(z) / np.diff(x))
    assert slope.max() <= math.pi
    assert slope.max() > math.pi * 0.999


def test_lipschitz_bound_holds_on_random_pairs():
    rng = np.random.default_rng(5)
    spec = ClassifierSpec(6, 4, 2)
    params = ClassifierParams(rng.uniform(-np.pi, np.pi, spec.n_theta), rng.uniform(-1, 1, 6))
    bound = attacks.lipschitz_bound(params, spec)
    x, y = rng.random((500, 6)), rng.random((500, 6))
    zx = classifier.logits(spec, params, x)
    zy = classifier.logits(spec, params, y)
    dist = np.max(np.abs(x - y), axis=1)
    assert np.all(np.abs(zx - zy) <= bound * dist[:, None] + 1e-12)


def test_average_fidelity_examples():
    rng = np.random.default_rng(6)
    model = random_pipeline(rng, rqc=RQC)
    x = rng.random((4, 4, 4))
    assert attacks.average_fidelity(model, x, x) == 1.0
    with pytest.raises(UsageError):
        attacks.average_fidelity(model, x[:0], x[:0])
    with pytest.raises(UsageError):
        attacks.average_fidelity(model, x, x[:2])


def test_fidelity_single_qubit_orthogonal():
    # one feature on qubit 0, the other three padded: x=0 vs x=1 with w=1 are orthogonal
    spec = ClassifierSpec(1, 4, 2)
    params = ClassifierParams(np.zeros(spec.n_theta), np.ones(1))
    model = Pipeline(spec, params)
    f = attacks.average_fidelity(model, np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    assert f < 1e-30


def test_fidelity_product_oracle_and_monotone():
    rng = np.random.default_rng(7)
    model = random_pipeline(rng)
    x = rng.random((20, 4, 4))
    grad = attacks.input_gradient(model, x, rng.integers(0, 2, 20))
    means = []
    for eps in (0.0, 0.05, 0.1, 0.2):
        adv = attacks.fgsm(model, x, None, eps, grad=grad).perturbed
        delta = (adv - x).reshape(20, -1)[:, :4]
        w = model.params.w[:4]
        oracle = np.prod(np.cos(np.pi * w * delta / 2) ** 2, axis=1)
        got = attacks.average_fidelity(model, x, adv)
        assert got == pytest.approx(oracle.mean(), abs=1e-12)
        means.append(got)
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_evaluate_attack_report():
    rng = np.random.default_rng(8)
    model = random_pipeline(rng)
    x = rng.random((10, 4, 4))
    y = model.predict(x)
    y[:2] = 1 - y[:2]
    rep = attacks.evaluate_attack(model, x, x, y, dataset="toy", scenario="whitebox", epsilon=0.0,
                                  seed=1, rqc_seed=0, rqc_depth=0)
    assert rep.adversarial_accuracy == rep.clean_accuracy == 0.8
    assert rep.attack_success_rate == 0.0
    assert rep.average_fidelity == 1.0
    row = rep.csv_row()
    assert len(row) == len(attacks.RobustnessReport.columns())
    assert row[:3] == ["toy", "baseline", "whitebox"]
    assert "attack_success_rate: 0.0" in rep.to_text()
    wrong = 1 - model.predict(x)
    nan = attacks.evaluate_attack(model, x, x, wrong, dataset="toy", scenario="whitebox",
                                  epsilon=0.0, seed=1, rqc_seed=0, rqc_depth=0)
    assert math.isnan(nan.attack_success_rate)
