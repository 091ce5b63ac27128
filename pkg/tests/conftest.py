import gzip
import os
from pathlib import Path

import numpy as np
import pytest

from biflow import nonlinear
from biflow.datasets import ImageBatch, load_idx, save_idx
from biflow.sampling import Rng
from biflow.training import TrainConfig


def _mlxtend_csv():
    try:
        import mlxtend
    except ImportError:
        return None
    path = Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
    return path if path.exists() else None


@pytest.fixture
def rng():
    return Rng(1234, 7)


@pytest.fixture(scope="session")
def mnist_images(tmp_path_factory):
    """Path to an IDX image file of real MNIST digits.

    ``BIFLOW_MNIST`` may point at an images IDX file (gzipped or not).
    Otherwise the 5000-digit subset bundled with mlxtend is converted, in a
    fixed shuffled order so that any leading slice is class-balanced.
    """
    env = os.environ.get("BIFLOW_MNIST")
    if env:
        return Path(env)
    src = _mlxtend_csv()
    if src is None:
        pytest.skip("no MNIST source: set BIFLOW_MNIST or install mlxtend")
    with gzip.open(src, "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",")
    order = np.random.default_rng(0).permutation(raw.shape[0])
    out = tmp_path_factory.mktemp("mnist") / "images-idx3-ubyte.gz"
    save_idx(out, ImageBatch(raw[order, :784].reshape(-1, 28, 28) / 255.0))
    save_idx(out.parent / "labels-idx1-ubyte", raw[order, 784].astype(int))
    return out


@pytest.fixture(scope="session")
def mnist_batch(mnist_images):
    return load_idx(mnist_images)


@pytest.fixture(scope="session")
def sign_training():
    """Order-4 upper map trained with default settings on 2e4 sign-target samples."""
    a, b = 1.0, 0.5
    data = nonlinear.sample_target(a, b, 20000, seed=0)
    pullback, report = nonlinear.fit_upper_map(data, 4, TrainConfig())
    return {"a": a, "b": b, "data": data, "pullback": pullback, "report": report,
            "bimap": nonlinear.assemble(a, b, pullback)}


_CRITERIA = {}


@pytest.fixture
def criterion(capsys):
    """Record ``[PASS]/[FAIL] criterion N: ...`` for the end-of-run summary."""

    def record(number, passed, text):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}"
        _CRITERIA[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
