"""Train the baseline and the quantum-patch classifier, then attack both.

Plus versus minus from the synthetic stroke dataset.  A few minutes on one CPU
core; pass a smaller epoch count as the first argument for a quicker look.

    python demos/attack_both_arms.py [epochs]
"""

import sys

import numpy as np

from qpatch import attacks, classifier, data, quanv
from qpatch.circuits import RqcSpec

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
seed = 0
ds = data.subset_binary(data.gen_plus_minus(400, seed=seed), 0, 1, per_class=100)
# labels alternate 0, 1, 0, 1 ...; keep both classes on each side of the split
pairs = np.arange(len(ds)) % 4 < 2
train, test = ds.take(np.flatnonzero(pairs)), ds.take(np.flatnonzero(~pairs))
rqc = RqcSpec(seed=seed, depth=4)
config = classifier.TrainConfig(epochs=epochs, seed=seed)

models = {}
for arm, features in (
    ("baseline", train.images.reshape(len(train), -1)),
    ("rqc", quanv.flatten_stacks(quanv.quanv_batch(train.images, rqc))),
):
    spec = classifier.ClassifierSpec(features.shape[1])
    params, history = classifier.train(spec, features, train.labels, config)
    models[arm] = attacks.Pipeline(spec, params, None if arm == "baseline" else rqc)
    last = history[-1]
    print(f"{arm:8s} epochs={epochs} loss={last.loss:.3f} train acc={last.accuracy:.2f} "
          f"L={last.lipschitz:.1f}")

print()
print("arm       scenario  eps   clean   AA     ASR    fidelity")
grads = {arm: attacks.input_gradient(m, test.images, test.labels) for arm, m in models.items()}
for eps in (0.05, 0.1, 0.2):
    for arm, model in models.items():
        for scenario in ("whitebox", "transfer"):
            source = arm if scenario == "whitebox" else ("rqc" if arm == "baseline" else "baseline")
            adv = attacks.fgsm(models[source], test.images, test.labels, eps, grad=grads[source])
            r = attacks.evaluate_attack(model, test.images, adv.perturbed, test.labels,
                                        dataset="plus-minus", scenario=scenario, epsilon=eps,
                                        seed=seed, rqc_seed=rqc.seed, rqc_depth=rqc.depth)
            print(f"{arm:9s} {scenario:9s} {eps:<5} {r.clean_accuracy:.2f}    {r.adversarial_accuracy:.2f}"
                  f"   {r.attack_success_rate:.2f}   {r.average_fidelity:.5f}")
