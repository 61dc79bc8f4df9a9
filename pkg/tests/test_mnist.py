import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from onepass_ntk.errors import FormatError
from onepass_ntk.mnist import (IMAGES_MAGIC, LABELS_MAGIC, load_mnist, read_cache, read_idx_images,
                               read_idx_labels, write_cache, write_idx_images, write_idx_labels)


def test_magic_numbers():
    assert IMAGES_MAGIC == 2051 and LABELS_MAGIC == 2049


def test_fixture_header_is_big_endian(mnist_paths):
    raw = gzip.decompress(mnist_paths[0].read_bytes())
    assert struct.unpack(">4I", raw[:16]) == (2051, 1400, 28, 28)


def test_load_subset(mnist_paths):
    emp = load_mnist(*mnist_paths)
    assert emp.d == 784 and emp.n == 1000 and emp.meta["n_total"] == 1400
    assert np.allclose(np.linalg.norm(emp.xs, axis=1), 1, atol=1e-9)
    assert set(np.unique(emp.ys)) == {-1.0, 1.0} and (emp.ys == 1).sum() == 500


def test_round_trip_and_errors(tmp_path):
    imgs = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3) + 1
    write_idx_images(tmp_path / "i", imgs)
    write_idx_labels(tmp_path / "l", np.array([0, 1], dtype=np.uint8))
    assert np.array_equal(read_idx_images(tmp_path / "i"), imgs)
    assert list(read_idx_labels(tmp_path / "l")) == [0, 1]

    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "bad").write_bytes(struct.pack(">I", 1234) + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        read_idx_images(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="offset"):
        read_idx_images(tmp_path / "short")
    (tmp_path / "tiny").write_bytes(raw[:6])
    with pytest.raises(FormatError, match="truncated header"):
        read_idx_images(tmp_path / "tiny")
    write_idx_labels(tmp_path / "l3", np.array([0, 1, 1], dtype=np.uint8))
    with pytest.raises(FormatError, match="labels"):
        load_mnist(tmp_path / "i", tmp_path / "l3")


def test_cache_round_trip(tmp_path, mnist_paths):
    emp = load_mnist(*mnist_paths)
    p = write_cache(tmp_path / "c.bin", emp)
    back = read_cache(p)
    assert np.array_equal(back.xs, emp.xs) and np.array_equal(back.ys, emp.ys)
    raw = p.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_cache(tmp_path / "trunc.bin")
    with pytest.raises(FormatError):
        read_cache(mnist_paths[1])


@pytest.mark.skipif(not os.environ.get("MNIST_DIR"), reason="full MNIST train split not available (set MNIST_DIR)")
def test_full_train_split_count():
    root = Path(os.environ["MNIST_DIR"])
    imgs = next(iter(sorted(root.glob("train-images*"))))
    labs = next(iter(sorted(root.glob("train-labels*"))))
    emp = load_mnist(imgs, labs)
    assert emp.meta["n_total"] == 60000 and emp.n == 12665
