"""FGSM attacks through the full quantum pipeline and robustness metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import circuits, classifier, quanv, sim
from .errors import UndefinedMetricError, UsageError


@dataclass(frozen=True)
class Pipeline:
    """Images -> (optional quanvolution) -> flattened features -> classifier.

    ``rqc=None`` is the baseline arm: pixels are fed to the classifier
    directly in row-major order.
    """

    spec: classifier.ClassifierSpec
    params: classifier.ClassifierParams
    rqc: circuits.RqcSpec | None = None
    include_original: bool = True

    @property
    def arm(self):
        return "baseline" if self.rqc is None else "rqc"

    def features(self, images):
        images = _as_images(images)
        if self.rqc is None:
            return images.reshape(len(images), -1)
        return quanv.flatten_stacks(quanv.quanv_batch(images, self.rqc), self.include_original)

    def predict_proba(self, images):
        return classifier.forward(self.spec, self.params, self.features(images))

    def predict(self, images):
        return self.predict_proba(images).argmax(axis=1)

    def embedding_states(self, images):
        """States right after the first block's angle embedding, ``(n, 2**q)``."""
        feats = classifier.encoded_features(self.spec, self.params, self.features(images))
        n_q = self.spec.n_qubits
        return circuits.run(circuits.angle_embedding(n_q), feats[:, :n_q])


def _as_images(images):
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise UsageError(f"expected (h, w) or (n, h, w) images, got shape {images.shape}")
    return images


@dataclass(frozen=True)
class AdversarialExample:
    clean: np.ndarray
    perturbed: np.ndarray
    epsilon: float
    true_label: np.ndarray


def input_gradient(model, x, y, method="shift"):
    """``dJ/dx`` of the per-sample cross-entropy, same shape as ``x``.

    Encoding angles are differentiated with the parameter-shift rule (or the
    adjoint sweep), then chained through ``d angle / d pixel = pi * w`` and,
    for the RQC arm, through every patch embedding of the quanvolution.
    """
    x = np.asarray(x, dtype=float)
    images = _as_images(x)
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(labels) != len(images):
        raise UsageError(f"{len(images)} inputs but {len(labels)} labels")
    feats = model.features(images)
    _, _, g_feat, _ = classifier.backward(model.spec, model.params, feats, labels, method=method)
    if model.rqc is None:
        grad = g_feat.reshape(images.shape)
    else:
        grad = quanv.features_vjp(images, model.rqc, g_feat, model.include_original, method=method)
    return grad.reshape(x.shape)


def fgsm(model, x, y, epsilon, method="shift", grad=None):
    """``x' = clip(x + epsilon * sign(dJ/dx), 0, 1)`` with ``sign(0) = 0``."""
    if epsilon < 0:
        raise UsageError(f"epsilon must be >= 0, got {epsilon}")
    x = np.asarray(x, dtype=float)
    if grad is None:
        grad = input_gradient(model, x, y, method=method)
    perturbed = np.clip(x + epsilon * np.sign(grad), 0.0, 1.0)
    return AdversarialExample(x, perturbed, float(epsilon), np.atleast_1d(np.asarray(y)))


def _fraction_correct(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise UsageError("empty set")
    return float(np.mean(predictions == labels))


def adversarial_accuracy(model, adv_images, labels):
    """Fraction of adversarial inputs still classified as their true label."""
    if len(np.atleast_1d(labels)) == 0:
        raise UsageError("empty adversarial set")
    return _fraction_correct(model.predict(adv_images), labels)


def success_rate(clean_pred, adv_pred, labels):
    """Share of clean-correct samples whose adversarial twin is misclassified."""
    clean_ok = np.asarray(clean_pred) == np.asarray(labels)
    if not clean_ok.any():
        raise UndefinedMetricError("attack success rate needs at least one clean-correct sample")
    flipped = clean_ok & (np.asarray(adv_pred) != np.asarray(labels))
    return float(flipped.sum() / clean_ok.sum())


def attack_success_rate(model, clean_images, adv_images, labels):
    if len(clean_images) != len(adv_images):
        raise UsageError("clean and adversarial sets must be paired")
    if len(np.atleast_1d(labels)) == 0:
        raise UsageError("empty set")
    return success_rate(model.predict(clean_images), model.predict(adv_images), labels)


def lipschitz_bound(params, spec):
    """``2 ||M|| sum_j |pi w_j| ||H_j||`` over every encoding gate.

    ``||M|| = 1`` for a Pauli-Z readout and ``||H_j|| = 1/2`` for the
    ``sigma / 2`` rotation generators.  Each occurrence of a feature in the
    circuit contributes its own term.  Bounds ``|<M>(x) - <M>(y)|`` against
    ``||x - y||`` in the max norm, and therefore in every p-norm.
    """
    circ = classifier.build_circuit(spec)
    m_norm, h_norm = 1.0, 0.5
    total = 0.0
    for _, _, slot in circ.occurrences():
        if slot.kind == "feature" and slot.index < spec.n_features:
            total += abs(slot.value * params.w[slot.index]) * h_norm
    return float(2.0 * m_norm * total)


def average_fidelity(model, clean_images, adv_images):
    """Mean ``|<psi(x')|psi(x)>|**2`` over paired inputs, using the first embedding block."""
    clean_images = _as_images(clean_images)
    adv_images = _as_images(adv_images)
    if len(clean_images) == 0:
        raise UsageError("empty set")
    if clean_images.shape != adv_images.shape:
        raise UsageError("clean and adversarial sets must be paired")
    fid = sim.overlaps(model.embedding_states(adv_images), model.embedding_states(clean_images))
    return float(fid.mean())


# --- reports ---------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessReport:
    dataset: str
    arm: str
    scenario: str
    epsilon: float
    clean_accuracy: float
    adversarial_accuracy: float
    attack_success_rate: float
    lipschitz_bound: float
    average_fidelity: float
    n_samples: int
    seed: int
    rqc_seed: int
    rqc_depth: int
    include_original: bool
    encoding_trainable: bool

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def csv_row(self):
        out = []
        for name in self.columns():
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append("true" if v else "false")
            elif isinstance(v, (float, np.floating)):
                out.append(repr(float(v)))
            else:
                out.append(str(v))
        return out

    def to_text(self):
        return "\n".join(f"{k}: {v}" for k, v in asdict(self).items())


def evaluate_attack(model, clean, adv, labels, **meta):
    """Build a :class:`RobustnessReport` for one arm on a paired clean/adversarial set."""
    labels = np.asarray(labels)
    clean_pred = model.predict(clean)
    adv_pred = model.predict(adv)
    try:
        asr = success_rate(clean_pred, adv_pred, labels)
    except UndefinedMetricError:
        asr = math.nan
    return RobustnessReport(
        arm=model.arm,
        clean_accuracy=_fraction_correct(clean_pred, labels),
        adversarial_accuracy=_fraction_correct(adv_pred, labels),
        attack_success_rate=asr,
        lipschitz_bound=lipschitz_bound(model.params, model.spec),
        average_fidelity=average_fidelity(model, clean, adv),
        n_samples=len(labels),
        include_original=model.include_original,
        encoding_trainable=model.spec.encoding_trainable,
        **meta,
    )
