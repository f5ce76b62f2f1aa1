import gzip
from pathlib import Path

import numpy as np
import pytest

from qpatch import data


def _mlxtend_mnist():
    mlxtend = pytest.importorskip("mlxtend")
    path = Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        pytest.skip("mlxtend MNIST sample not found")
    with gzip.open(path, "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",", dtype=np.uint8)
    return raw[:, :-1].reshape(-1, 28, 28), raw[:, -1]


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """5000-image MNIST sample written as IDX files: ``(image_path, label_path)``."""
    pixels, labels = _mlxtend_mnist()
    root = tmp_path_factory.mktemp("mnist")
    img, lbl = root / "images.idx", root / "labels.idx"
    data.write_idx(img, lbl, pixels, labels)
    return img, lbl


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
