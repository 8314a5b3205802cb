import os
import subprocess
import sys

import numpy as np
import pytest

from aeg import kernels
from aeg._kernels_py import grid_search as py_grid_search


def test_pure_python_switch():
    env = dict(os.environ, AEG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import aeg.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_set_backend_roundtrip():
    prev = kernels.set_backend("python")
    try:
        assert kernels.BACKEND == "python"
    finally:
        kernels.set_backend(prev)
    assert kernels.BACKEND == prev
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_reference_kernel_on_a_tiny_case():
    # bias + x0 + x1, label 0: loss grows with the score, best node is (+e, +e)
    X = np.array([[0.0, 0.0]])
    W = np.array([[0.0, 1.0, 1.0]])
    E = np.array([[1, 0], [0, 1]], dtype=np.int64)
    offs = np.array([-0.5, 0.0, 0.5])
    idx, loss = py_grid_search(X, np.array([0]), W, E, True, offs)
    assert idx.tolist() == [[2, 2]]
    assert loss[0] == pytest.approx(np.log1p(np.e))
