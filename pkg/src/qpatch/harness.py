"""Experiment orchestration behind the ``qpatch`` command line.

A run directory holds everything one experiment produces::

    config.txt                   resolved configuration (key = value)
    quanv.qpch, quanv.qpch.sha256
    <arm>/checkpoint.qpck        final classifier parameters
    <arm>/checkpoint_epoch1.qpck parameters after the first epoch
    <arm>/history.csv            epoch,loss,accuracy,lipschitz
    report.csv                   one row per arm x epsilon x scenario
    ablation/lipschitz_<arm>.dat epoch  lipschitz
    ablation/fidelity_<arm>.dat  epsilon  mean fidelity (epoch-1 parameters)
    table.txt, table.csv         clean/adversarial summary per arm
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks, classifier, data, quanv
from .circuits import RqcSpec
from .errors import ConfigurationError, FormatError, UsageError

log = logging.getLogger(__name__)

ARMS = ("baseline", "rqc")
SCENARIOS = ("whitebox", "transfer")
FORMAT_VERSIONS = "QPCH=1 QPCK=1 QPIR=1"


@dataclass
class ExperimentConfig:
    dataset: str = "mnist"  # mnist | plus-minus | cifar
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    cifar_batches: str = ""
    classes: str = "0,1"  # comma list of source classes, or "all"
    n_train: int = 200
    n_test: int = 100
    downsample: int = 2
    plus_minus_n: int = 1000
    data_seed: int = -1  # -1: use seed
    seed: int = 0
    rqc_seed: int = -1  # -1: use seed
    rqc_depth: int = 4
    n_qubits: int = 4
    include_original: bool = True
    encoding_trainable: bool = True
    init_w: float = classifier.DEFAULT_INIT_W
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.01
    optimizer: str = "adam"
    train_gradient: str = "adjoint"
    attack_gradient: str = "shift"
    epsilons: list = field(default_factory=lambda: [0.1])
    ablation_epsilons: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    scenarios: list = field(default_factory=lambda: ["whitebox"])
    arms: str = "both"  # baseline | rqc | both
    out: str = "runs/default"

    def __post_init__(self):
        if self.dataset not in ("mnist", "plus-minus", "cifar"):
            raise ConfigurationError(f"unknown dataset {self.dataset!r}")
        if self.arms not in ("baseline", "rqc", "both"):
            raise ConfigurationError(f"arms must be baseline, rqc or both, got {self.arms!r}")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ConfigurationError(f"unknown scenario {s!r}")
        if any(e < 0 for e in self.epsilons + self.ablation_epsilons):
            raise ConfigurationError("epsilons must be >= 0")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("n_train and n_test must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")

    @property
    def arm_list(self):
        return list(ARMS) if self.arms == "both" else [self.arms]

    @property
    def effective_data_seed(self):
        return self.seed if self.data_seed < 0 else self.data_seed

    @property
    def rqc(self):
        seed = self.seed if self.rqc_seed < 0 else self.rqc_seed
        return RqcSpec(seed=seed, n_qubits=quanv.N_CHANNELS, depth=self.rqc_depth)

    def train_config(self):
        return classifier.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            optimizer=self.optimizer,
            gradient=self.train_gradient,
            init_w=self.init_w,
        )

    def to_text(self):
        lines = [f"# qpatch run configuration ({FORMAT_VERSIONS})"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        rqc = self.rqc
        lines.append(f"# resolved: data_seed={self.effective_data_seed} rqc_seed={rqc.seed}")
        return "\n".join(lines) + "\n"


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if name == "scenarios":
                return items
            return [float(x) for x in items]
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def load_config(path=None, overrides=None):
    """Defaults, then the config file, then ``overrides`` (already typed or strings)."""
    defaults = ExperimentConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(ExperimentConfig)}
    raw = {}
    if path:
        try:
            raw = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        kwargs[key] = _parse_value(key, value, known[key])
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        kwargs[key] = _parse_value(key, value, known[key]) if isinstance(value, str) else value
    return ExperimentConfig(**kwargs)


# --- datasets --------------------------------------------------------------


def _select(ds, classes, per_class, skip=0):
    """``per_class`` samples per class after skipping ``skip``; relabelled to 0..C-1."""
    picked = []
    for cls in classes:
        idx = np.flatnonzero(ds.labels == cls)
        if len(idx) < skip + per_class:
            raise UsageError(f"class {cls} has {len(idx)} samples, {skip + per_class} needed")
        picked.append(idx[skip:skip + per_class])
    order = np.sort(np.concatenate(picked))
    remap = {c: i for i, c in enumerate(classes)}
    labels = np.array([remap[int(y)] for y in ds.labels[order]], dtype=np.int64)
    names = tuple(ds.class_names[c] for c in classes)
    return data.LabeledDataset(ds.images[order], labels, names, ds.provenance)


def _classes(cfg, ds):
    if cfg.classes.strip() == "all":
        return list(range(len(ds.class_names)))
    try:
        return [int(c) for c in cfg.classes.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"bad class list {cfg.classes!r}") from exc


def load_splits(cfg):
    """Train and test :class:`~qpatch.data.LabeledDataset` for the configured source."""
    if cfg.dataset == "plus-minus":
        source = data.gen_plus_minus(cfg.plus_minus_n, cfg.effective_data_seed)
        test_source = None
    elif cfg.dataset == "mnist":
        if not cfg.train_images or not cfg.train_labels:
            raise UsageError("mnist needs train_images and train_labels")
        source = data.load_idx(cfg.train_images, cfg.train_labels)
        test_source = data.load_idx(cfg.test_images, cfg.test_labels) if cfg.test_images else None
    else:
        if not cfg.cifar_batches:
            raise UsageError("cifar needs cifar_batches")
        source = data.load_cifar_batch(cfg.cifar_batches.split(","), factor=1)
        test_source = None
    classes = _classes(cfg, source)
    if cfg.n_train % len(classes) or cfg.n_test % len(classes):
        raise ConfigurationError("n_train and n_test must be multiples of the class count")
    per_train = cfg.n_train // len(classes)
    per_test = cfg.n_test // len(classes)
    train = _select(source, classes, per_train)
    if test_source is None:
        test = _select(source, classes, per_test, skip=per_train)
    else:
        test = _select(test_source, classes, per_test)
    if cfg.downsample > 1:
        train = dataclasses.replace(train, images=data.downsample(train.images, cfg.downsample))
        test = dataclasses.replace(test, images=data.downsample(test.images, cfg.downsample))
    return train, test


# --- commands --------------------------------------------------------------


def _run_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def cmd_preprocess(cfg):
    """Quanvolve train+test images into ``quanv.qpch`` (train rows first).

    Re-running recomputes the bytes and checks them against the stored
    SHA-256; a mismatch is a format error.
    """
    out = _run_dir(cfg)
    train, test = load_splits(cfg)
    images = np.concatenate([train.images, test.images])
    labels = np.concatenate([train.labels, test.labels])
    raw = quanv.encode_cache(quanv.quanv_batch(images, cfg.rqc), cfg.rqc, labels)
    digest = hashlib.sha256(raw).hexdigest()
    path = out / "quanv.qpch"
    sha_path = out / "quanv.qpch.sha256"
    if path.exists() and sha_path.exists():
        stored = sha_path.read_text().split()[0]
        on_disk = hashlib.sha256(path.read_bytes()).hexdigest()
        if stored != digest or on_disk != digest:
            raise FormatError(f"{path}: existing cache does not match a fresh computation")
        log.info("verified %s (%s)", path, digest)
        return path
    path.write_bytes(raw)
    sha_path.write_text(f"{digest}  quanv.qpch\n")
    log.info("wrote %s: %d stacks", path, len(images))
    return path


def _arm_features(cfg, arm, train):
    if arm == "baseline":
        return train.images.reshape(len(train), -1), train.labels
    path = Path(cfg.out) / "quanv.qpch"
    if not path.exists():
        raise UsageError(f"{path} is missing; run preprocess first")
    stacks, rqc, labels = quanv.read_cache(path)
    if rqc != cfg.rqc:
        raise UsageError(f"{path} was built with {rqc}, config asks for {cfg.rqc}")
    n = cfg.n_train
    if labels is None or len(stacks) < n or not np.array_equal(labels[:n], train.labels):
        raise FormatError(f"{path} does not match the configured training split")
    return quanv.flatten_stacks(stacks[:n].astype(float), cfg.include_original), labels[:n]


def cmd_train(cfg, arms=None):
    out = _run_dir(cfg)
    train, _ = load_splits(cfg)
    n_classes = len(train.class_names)
    written = []
    for arm in arms or cfg.arm_list:
        feats, labels = _arm_features(cfg, arm, train)
        spec = classifier.ClassifierSpec(
            feats.shape[1], cfg.n_qubits, n_classes, cfg.encoding_trainable
        )
        params, history = classifier.train(spec, feats, labels, cfg.train_config())
        arm_dir = out / arm
        arm_dir.mkdir(exist_ok=True)
        classifier.save_checkpoint(arm_dir / "checkpoint.qpck", spec, params, cfg.seed)
        classifier.save_checkpoint(arm_dir / "checkpoint_epoch1.qpck", spec, history[0].params, cfg.seed)
        _write_csv(
            arm_dir / "history.csv",
            ["epoch", "loss", "accuracy", "lipschitz"],
            [[r.epoch, repr(float(r.loss)), repr(float(r.accuracy)), repr(float(r.lipschitz))] for r in history],
        )
        log.info("%s: final loss %.4f accuracy %.3f", arm, history[-1].loss, history[-1].accuracy)
        written.append(arm_dir)
    return written


def load_pipeline(cfg, arm, checkpoint="checkpoint.qpck"):
    path = Path(cfg.out) / arm / checkpoint
    if not path.exists():
        raise UsageError(f"{path} is missing; run train --arm {arm} first")
    spec, params, _ = classifier.load_checkpoint(path)
    rqc = None if arm == "baseline" else cfg.rqc
    return attacks.Pipeline(spec, params, rqc, cfg.include_original)


def cmd_attack_eval(cfg):
    out = _run_dir(cfg)
    _, test = load_splits(cfg)
    x, y = test.images, test.labels
    arms = cfg.arm_list
    if "transfer" in cfg.scenarios and len(arms) < 2:
        raise ConfigurationError("the transfer scenario needs both arms")
    models = {arm: load_pipeline(cfg, arm) for arm in arms}
    grads = {arm: attacks.input_gradient(m, x, y, method=cfg.attack_gradient) for arm, m in models.items()}
    rows = []
    for arm in arms:
        for eps in cfg.epsilons:
            for scenario in cfg.scenarios:
                source = arm if scenario == "whitebox" else next(a for a in arms if a != arm)
                adv = attacks.fgsm(models[source], x, y, eps, grad=grads[source])
                rows.append(attacks.evaluate_attack(
                    models[arm], x, adv.perturbed, y,
                    dataset=cfg.dataset, scenario=scenario, epsilon=float(eps),
                    seed=cfg.seed, rqc_seed=cfg.rqc.seed, rqc_depth=cfg.rqc_depth,
                ))
    _write_csv(out / "report.csv", attacks.RobustnessReport.columns(), [r.csv_row() for r in rows])
    (out / "report.txt").write_text("\n\n".join(r.to_text() for r in rows) + "\n")
    return rows


def cmd_ablate(cfg):
    out = _run_dir(cfg)
    abl = out / "ablation"
    abl.mkdir(exist_ok=True)
    _, test = load_splits(cfg)
    x, y = test.images, test.labels
    paths = []
    for arm in cfg.arm_list:
        hist_path = out / arm / "history.csv"
        if not hist_path.exists():
            raise UsageError(f"{hist_path} is missing; run train --arm {arm} first")
        with open(hist_path, newline="") as fh:
            hist = list(csv.DictReader(fh))
        lip = abl / f"lipschitz_{arm}.dat"
        lip.write_text("".join(f"{r['epoch']} {r['lipschitz']}\n" for r in hist))
        model = load_pipeline(cfg, arm, "checkpoint_epoch1.qpck")
        grad = attacks.input_gradient(model, x, y, method=cfg.attack_gradient)
        lines = []
        for eps in cfg.ablation_epsilons:
            adv = attacks.fgsm(model, x, y, eps, grad=grad)
            lines.append(f"{float(eps)!r} {attacks.average_fidelity(model, x, adv.perturbed)!r}\n")
        fid = abl / f"fidelity_{arm}.dat"
        fid.write_text("".join(lines))
        paths += [lip, fid]
    return paths


TABLE_COLUMNS = ["Dataset", "AA (%)", "ASR (%)", "AA with RQC (%)", "ASR with RQC (%)"]


def _pct(v):
    return "nan" if v != v else f"{100 * v:.2f}"


def cmd_report(cfg):
    """Summarise ``report.csv`` as a clean/adversarial table with one column pair per arm.

    ASR has no meaning on clean images and is printed as ``-`` there.
    """
    out = Path(cfg.out)
    path = out / "report.csv"
    if not path.exists():
        raise UsageError(f"{path} is missing; run attack-eval first")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by = {(r["arm"], r["scenario"], float(r["epsilon"])): r for r in rows}
    name = {"mnist": "MNIST", "plus-minus": "Plus-Minus", "cifar": "CIFAR"}[cfg.dataset]

    def cell(arm, scenario, eps, key):
        r = by.get((arm, scenario, eps))
        return "" if r is None else _pct(float(r[key]))

    table = []
    scenario0 = cfg.scenarios[0]
    eps0 = cfg.epsilons[0]
    table.append([
        f"{name} Clean Images",
        cell("baseline", scenario0, eps0, "clean_accuracy"), "-",
        cell("rqc", scenario0, eps0, "clean_accuracy"), "-",
    ])
    for scenario in cfg.scenarios:
        for eps in cfg.epsilons:
            table.append([
                f"{name} Adversarial Examples (eps = {eps:g}, {scenario})",
                cell("baseline", scenario, eps, "adversarial_accuracy"),
                cell("baseline", scenario, eps, "attack_success_rate"),
                cell("rqc", scenario, eps, "adversarial_accuracy"),
                cell("rqc", scenario, eps, "attack_success_rate"),
            ])
    _write_csv(out / "table.csv", TABLE_COLUMNS, table)
    widths = [max(len(str(r[i])) for r in [TABLE_COLUMNS] + table) for i in range(len(TABLE_COLUMNS))]
    fmt = "| " + " | ".join(f"{{:<{w}}}" for w in widths) + " |"
    lines = [fmt.format(*TABLE_COLUMNS), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += [fmt.format(*r) for r in table]
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    return table


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)
