import os
from pathlib import Path

import numpy as np
import pytest
import torch

from snd.datasets import write_idx


def _mlxtend_csv():
    try:
        import mlxtend
    except ImportError:
        return None
    p = Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
    return p if p.is_file() else None


def load_mnist_source():
    """MNIST digits from $SND_MNIST_DIR (IDX) or the 5k subset bundled with mlxtend."""
    from snd.datasets import find_idx_pair, load_idx_digits

    d = os.environ.get("SND_MNIST_DIR")
    if d:
        return load_idx_digits(*find_idx_pair(d))
    csv = _mlxtend_csv()
    if csv is None:
        return None
    raw = np.loadtxt(csv, delimiter=",")
    images = raw[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    return images.astype(np.float32) / 255.0, raw[:, -1].astype(np.int64)


@pytest.fixture(scope="session")
def mnist():
    src = load_mnist_source()
    if src is None:
        pytest.skip("no MNIST source: set SND_MNIST_DIR or install mlxtend")
    return src


@pytest.fixture(scope="session")
def mnist_idx_dir(mnist, tmp_path_factory):
    d = tmp_path_factory.mktemp("mnist_idx")
    images, labels = mnist
    write_idx(d / "train-images-idx3-ubyte", np.round(images * 255).astype(np.uint8))
    write_idx(d / "train-labels-idx1-ubyte", labels.astype(np.uint8))
    return d


@pytest.fixture(scope="session")
def toy_digits():
    """Synthetic 28x28 'digits': class c is a bar pattern, with pixel noise."""
    rng = np.random.default_rng(0)
    n_per, imgs, labels = 30, [], []
    for c in range(4):
        base = np.zeros((28, 28), np.float32)
        base[4 + 5 * c : 8 + 5 * c, 4:24] = 1.0
        base[4:24, 4 + 5 * c : 8 + 5 * c] = 1.0
        for _ in range(n_per):
            imgs.append(np.clip(base + 0.1 * rng.standard_normal((28, 28)), 0, 1).astype(np.float32))
            labels.append(c)
    return np.stack(imgs), np.asarray(labels)


@pytest.fixture(scope="session")
def toy_idx_dir(toy_digits, tmp_path_factory):
    d = tmp_path_factory.mktemp("toy_idx")
    images, labels = toy_digits
    write_idx(d / "train-images-idx3-ubyte", np.round(images * 255).astype(np.uint8))
    write_idx(d / "train-labels-idx1-ubyte", labels.astype(np.uint8))
    return d


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run
# ---------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    num, title = props["criterion"]
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    _CRITERIA[num] = (status, title, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} {status}  {title}" + (f"  [{detail}]" if detail else ""))
