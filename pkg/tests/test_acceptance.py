"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the terminal summary (see conftest).
"""

import csv
import math
import time

import numpy as np
import pytest

from qpatch import attacks, circuits, classifier, data, harness, quanv, sim
from qpatch.attacks import Pipeline
from qpatch.circuits import RqcSpec
from qpatch.classifier import ClassifierParams, ClassifierSpec
from qpatch.sim import Gate, StateVector

from oracles import central_difference, full_operator, max_rel_err, random_state

PIPELINE = ("preprocess", "train", "attack-eval", "ablate", "report")


def run_pipeline(cfg, commands=PIPELINE):
    for cmd in commands:
        fn = {
            "preprocess": harness.cmd_preprocess,
            "train": harness.cmd_train,
            "attack-eval": harness.cmd_attack_eval,
            "ablate": harness.cmd_ablate,
            "report": harness.cmd_report,
        }[cmd]
        fn(cfg)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def desk_mnist(mnist_idx, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_mnist")
    cfg = harness.load_config(None, {
        "train_images": str(mnist_idx[0]),
        "train_labels": str(mnist_idx[1]),
        "scenarios": "whitebox,transfer",
        "out": str(out),
    })
    start = time.perf_counter()
    run_pipeline(cfg)
    return cfg, out, time.perf_counter() - start


def test_simulator_correctness(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    kinds = ["X", "Y", "Z", "H", "S", "T", "RX", "RY", "RZ", "ROT", "CNOT", "CZ", "SWAP"]
    worst = 0.0
    for _ in range(100):
        psi = random_state(rng, 4)
        for kind in kinds:
            nq = sim.N_QUBITS[kind]
            qubits = tuple(int(q) for q in rng.choice(4, size=nq, replace=False))
            gate = Gate(kind, qubits, tuple(rng.uniform(-2 * np.pi, 2 * np.pi, sim.N_PARAMS[kind])))
            got = sim.apply_gate(StateVector(psi), gate).amplitudes
            want = full_operator(gate.matrix(), qubits, 4) @ psi
            worst = max(worst, float(np.max(np.abs(got - want))))
    state = StateVector(random_state(rng, 4))
    for _ in range(1000):
        kind = str(rng.choice(kinds))
        qubits = tuple(int(q) for q in rng.choice(4, size=sim.N_QUBITS[kind], replace=False))
        state = sim.apply_gate(state, Gate(kind, qubits, tuple(rng.uniform(-7, 7, sim.N_PARAMS[kind]))))
    drift = abs(state.norm() - 1)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and drift < 1e-10 and elapsed < 10
    acceptance("simulator correctness", ok,
               f"max abs err {worst:.2e} (<1e-10), norm drift {drift:.2e} (<1e-10), {elapsed:.1f}s (<10s)")
    assert ok


def test_gradient_suite(acceptance):
    start = time.perf_counter()
    worst = {"theta": 0.0, "w": 0.0, "pixels": 0.0}
    for draw in range(20):
        rng = np.random.default_rng(500 + draw)
        shape = (4, 4) if draw % 2 else (3, 5)
        rqc = RqcSpec(draw, 4, 4) if draw % 2 else None
        cells = -(-shape[0] // 2) * -(-shape[1] // 2)
        n_feat = shape[0] * shape[1] if rqc is None else 5 * cells
        n_classes = int(rng.integers(2, 5))
        spec = ClassifierSpec(n_feat, 4, n_classes)
        params = ClassifierParams(rng.uniform(-np.pi, np.pi, spec.n_theta), rng.uniform(-1.5, 1.5, n_feat))
        model = Pipeline(spec, params, rqc)
        images = rng.random((3,) + shape)
        labels = rng.integers(0, n_classes, 3)
        feats = model.features(images)

        def loss_theta(t):
            return classifier.loss(spec, ClassifierParams(t, params.w), feats, labels)

        def loss_w(w):
            return classifier.loss(spec, ClassifierParams(params.theta, w), feats, labels)

        def loss_pixels(x):
            return float(classifier.per_sample_loss(model.predict_proba(x), labels).sum())

        g_theta, g_w = classifier.param_shift_grad(spec, params, feats, labels)
        g_x = attacks.input_gradient(model, images, labels, method="shift")
        worst["theta"] = max(worst["theta"], max_rel_err(g_theta, central_difference(loss_theta, params.theta)))
        worst["w"] = max(worst["w"], max_rel_err(g_w, central_difference(loss_w, params.w)))
        worst["pixels"] = max(worst["pixels"], max_rel_err(g_x, central_difference(loss_pixels, images)))
    ry = circuits.CircuitIR(1, [circuits.GateSpec("RY", (0,), (circuits.trainable(0),))], n_trainables=1)
    analytic = circuits.shift_jacobian(ry, None, np.array([math.pi / 2]))[0, 0, 0]
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and abs(analytic + 1) < 1e-10 and elapsed < 60
    acceptance("gradient suite", ok,
               f"max rel err theta {worst['theta']:.1e} w {worst['w']:.1e} pixels {worst['pixels']:.1e} "
               f"(<1e-5), dZ/dtheta at pi/2 = {analytic:.12f}, {elapsed:.1f}s (<60s)")
    assert ok


def test_quanvolution_oracle(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    rqc0 = RqcSpec(seed=123, depth=0)
    worst = 0.0
    for _ in range(50):
        img = rng.random((int(rng.integers(2, 17)), int(rng.integers(2, 17))))
        stack = quanv.quanv_transform(img, rqc0)
        patches = quanv.extract_patches(img).reshape(stack.quantum.shape[1], stack.quantum.shape[2], 4)
        expected = np.cos(np.pi * np.moveaxis(patches, -1, 0))
        worst = max(worst, float(np.max(np.abs(stack.quantum - expected))))
    images = rng.random((20, 16, 16))
    rqc = RqcSpec(seed=9, depth=4)
    first = quanv.encode_cache(quanv.quanv_batch(images, rqc), rqc)
    second = quanv.encode_cache(quanv.quanv_batch(images.copy(), RqcSpec(9, 4, 4)), RqcSpec(9, 4, 4))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and first == second and elapsed < 30
    acceptance("quanvolution oracle", ok,
               f"depth-0 max err {worst:.1e} (<1e-10), QPCH bytes identical={first == second}, "
               f"{elapsed:.1f}s (<30s)")
    assert ok


def test_fgsm_invariants(acceptance):
    start = time.perf_counter()
    ds = data.gen_plus_minus(500, seed=1)
    images = data.downsample(ds.images, 2)
    rng = np.random.default_rng(8)
    rqc = RqcSpec(seed=4, depth=4)
    spec = ClassifierSpec(5 * 16, 4, 4)
    model = Pipeline(spec, ClassifierParams(rng.uniform(-np.pi, np.pi, spec.n_theta),
                                            rng.uniform(-1, 1, spec.n_features)), rqc)
    grad = attacks.input_gradient(model, images, ds.labels, method="shift")
    worst_budget, in_range = 0.0, True
    for eps in (0.05, 0.1, 0.3):
        adv = attacks.fgsm(model, images, ds.labels, eps, grad=grad).perturbed
        worst_budget = max(worst_budget, float(np.max(np.abs(adv - images))) - eps)
        in_range &= bool(adv.min() >= 0 and adv.max() <= 1)
    identity = np.array_equal(attacks.fgsm(model, images, ds.labels, 0.0, grad=grad).perturbed, images)
    elapsed = time.perf_counter() - start
    ok = worst_budget <= 1e-12 and in_range and identity and elapsed < 60
    acceptance("fgsm invariants", ok,
               f"500 samples: max(|x'-x|_inf - eps) {worst_budget:.1e} (<=1e-12), in [0,1]={in_range}, "
               f"eps=0 identity={identity}, {elapsed:.1f}s (<60s)")
    assert ok


def test_lipschitz_bound_validity(acceptance):
    ds = data.subset_binary(data.gen_plus_minus(200, seed=2), 0, 1, 40)
    x = data.downsample(ds.images, 2).reshape(len(ds), -1)
    spec = ClassifierSpec(x.shape[1], 4, 2)
    params, _ = classifier.train(spec, x, ds.labels,
                                 classifier.TrainConfig(epochs=10, seed=2, init_w=1.0))
    bound = attacks.lipschitz_bound(params, spec)
    rng = np.random.default_rng(3)
    a, b = rng.random((1000, x.shape[1])), rng.random((1000, x.shape[1]))
    # also probe small steps where the local slope is largest
    b[500:] = np.clip(a[500:] + rng.uniform(-1e-3, 1e-3, a[500:].shape), 0, 1)
    za = circuits.expectations(classifier.build_circuit(spec), classifier.encoded_features(spec, params, a),
                               params.theta)
    zb = circuits.expectations(classifier.build_circuit(spec), classifier.encoded_features(spec, params, b),
                               params.theta)
    dist = np.max(np.abs(a - b), axis=1)
    ratio = np.max(np.abs(za - zb), axis=1) / dist
    violations = int(np.sum(np.abs(za - zb) > bound * dist[:, None]))
    one = ClassifierSpec(1, 4, 2)
    single = attacks.lipschitz_bound(ClassifierParams(np.zeros(one.n_theta), np.ones(1)), one)
    ok = violations == 0 and single == math.pi
    acceptance("lipschitz bound validity", ok,
               f"1000 pairs, {violations} violations (=0), L={bound:.3f}, max observed slope "
               f"{ratio.max():.3f}, single-gate L={single!r} (=pi)")
    assert ok


def test_fidelity_properties(acceptance, desk_mnist):
    cfg, out, _ = desk_mnist
    _, test = harness.load_splits(cfg)
    exact, monotone, series = True, True, {}
    for arm in ("baseline", "rqc"):
        model = harness.load_pipeline(cfg, arm, "checkpoint_epoch1.qpck")
        adv0 = attacks.fgsm(model, test.images, test.labels, 0.0).perturbed
        per_sample = sim.overlaps(model.embedding_states(adv0), model.embedding_states(test.images))
        exact &= bool(np.all(per_sample == 1.0))
        pairs = [tuple(map(float, ln.split()))
                 for ln in (out / "ablation" / f"fidelity_{arm}.dat").read_text().splitlines()]
        assert [p[0] for p in pairs] == [0.0, 0.05, 0.1, 0.2]
        means = [p[1] for p in pairs]
        monotone &= all(u >= v for u, v in zip(means, means[1:]))
        series[arm] = " ".join(f"{m:.6f}" for m in means)
    ok = exact and monotone
    acceptance("fidelity properties", ok,
               f"F(x,x)=1 exactly={exact}, non-increasing={monotone}; "
               f"baseline [{series['baseline']}] rqc [{series['rqc']}]")
    assert ok


def test_desk_mnist(acceptance, desk_mnist):
    cfg, out, elapsed = desk_mnist
    rows = read_csv(out / "report.csv")
    base = next(r for r in rows if r["arm"] == "baseline")
    clean = float(base["clean_accuracy"])
    table = read_csv(out / "table.csv")
    populated = all(v.strip() != "" and v != "nan" for r in table for v in r.values())
    arms_cells = {(r["arm"], r["scenario"]) for r in rows}
    ok = clean >= 0.90 and populated and len(arms_cells) == 4 and elapsed < 30 * 60
    acceptance("desk-scale MNIST 0/1", ok,
               f"baseline clean acc {clean:.2%} (>=90%), table populated={populated}, "
               f"{elapsed:.0f}s (<1800s)")
    print((out / "table.txt").read_text())
    assert ok


def plus_minus_seed(seed, root):
    cfg = harness.load_config(None, {
        "dataset": "plus-minus",
        "plus_minus_n": 1000,
        "classes": "0,1",
        "n_train": 200,
        "n_test": 100,
        "downsample": 1,
        "epsilons": "0.1",
        "scenarios": "whitebox",
        "seed": seed,
        "out": str(root / f"seed{seed}"),
    })
    run_pipeline(cfg, ("preprocess", "train", "attack-eval"))
    rows = read_csv(root / f"seed{seed}" / "report.csv")
    return {r["arm"]: r for r in rows}


def test_plus_minus_directional(acceptance, tmp_path):
    results = [plus_minus_seed(seed, tmp_path) for seed in range(5)]
    asr = {arm: [float(r[arm]["attack_success_rate"]) for r in results] for arm in ("baseline", "rqc")}
    for seed, r in enumerate(results):
        print(f"seed {seed}: " + ", ".join(
            f"{arm} clean {float(r[arm]['clean_accuracy']):.2f} AA {float(r[arm]['adversarial_accuracy']):.2f} "
            f"ASR {float(r[arm]['attack_success_rate']):.3f}" for arm in ("baseline", "rqc")))
    med_base = float(np.median(asr["baseline"]))
    med_rqc = float(np.median(asr["rqc"]))
    ok = med_rqc <= med_base
    acceptance("plus-minus directional defense", ok,
               f"median ASR rqc {med_rqc:.3f} <= baseline {med_base:.3f}; "
               f"per-seed baseline {asr['baseline']} rqc {asr['rqc']}")
    assert ok


def test_determinism(acceptance, desk_mnist):
    cfg, out, _ = desk_mnist
    files = sorted(p for p in out.rglob("*") if p.is_file())
    before = {p: p.read_bytes() for p in files}
    changed = []
    for cmd in PIPELINE:
        run_pipeline(cfg, (cmd,))
        changed += [str(p.relative_to(out)) for p in files if p.read_bytes() != before[p]]
    ok = not changed and len(files) > 10
    acceptance("determinism", ok,
               f"{len(files)} artifacts re-generated by every command, byte-identical={not changed}"
               + (f" changed: {sorted(set(changed))}" if changed else ""))
    assert ok
