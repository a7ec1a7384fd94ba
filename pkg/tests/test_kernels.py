import math
import os
import subprocess
import sys

import numpy as np
import pytest

from cartanlab import _accel, kernels
from cartanlab.algebra import make_algebra
from cartanlab.forms import GridSpec, bracket_triplets, shuffle_table
from cartanlab.immersion import clifford, jacobian, perturbed_clifford

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not available")


@needs_numba
@pytest.mark.parametrize("n,p,q", [(2, 1, 1), (3, 1, 2), (4, 2, 2), (3, 0, 1)])
def test_wedge_agreement(n, p, q, rng):
    alg = make_algebra("so:4")
    P = 50
    a = rng.standard_normal((P, math.comb(n, p), alg.dim))
    b = rng.standard_normal((P, math.comb(n, q), alg.dim))
    t, tr = shuffle_table(n, p, q), bracket_triplets(alg)
    x = kernels.wedge_apply_numpy(a, b, t, tr, math.comb(n, p + q), alg.dim)
    y = kernels.wedge_apply_numba(a, b, t, tr, math.comb(n, p + q), alg.dim)
    assert np.allclose(x, y, atol=1e-13)


@needs_numba
@pytest.mark.parametrize("shape", [(8, 6), (4, 5, 6)])
def test_laplacian_agreement(shape, rng):
    f = rng.standard_normal(shape + (5,))
    h = tuple(1.0 / s for s in shape)
    assert np.allclose(kernels.laplacian_apply_numpy(f, h, 0.7), kernels.laplacian_apply_numba(f, h, 0.7),
                       atol=1e-10)


@needs_numba
def test_laplacian_4d_falls_back(rng):
    f = rng.standard_normal((4, 4, 4, 4, 2))
    h = (0.25,) * 4
    assert np.allclose(kernels.laplacian_apply_numpy(f, h), kernels.laplacian_apply_numba(f, h))


@needs_numba
def test_frames_and_sweep_agreement():
    for u in (clifford(GridSpec.cube(2, 16)), perturbed_clifford(GridSpec((12, 20)), 0.2)):
        jac = jacobian(u).reshape(-1, 4, 2)
        E1, r1 = kernels.frames_gram_schmidt_numpy(jac)
        E2, r2 = kernels.frames_gram_schmidt_numba(jac)
        assert np.allclose(E1, E2, atol=1e-13) and np.allclose(r1, r2)
        normals = np.ascontiguousarray(E1[:, :, 2:])
        shape = u.grid.sizes
        parent = kernels.sweep_parents(shape)
        a = kernels.sweep_align_numpy(normals, parent, shape)
        b = kernels.sweep_align_numba(normals, parent)
        assert np.allclose(a, b, atol=1e-12)


def test_sweep_parents_tree():
    par = kernels.sweep_parents((3, 4))
    assert par[0] == -1
    # each non-root point's parent is a lattice neighbour visited earlier
    for p in range(1, 12):
        assert 0 <= par[p] < p
        i, j = divmod(p, 4)
        pi, pj = divmod(int(par[p]), 4)
        assert abs(i - pi) + abs(j - pj) == 1


def _run(code, flag):
    env = dict(os.environ, CARTANLAB_NUMBA=flag)
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout


def test_env_flag_selects_backend():
    code = "from cartanlab import _accel; print(_accel.backend())"
    assert _run(code, "0").strip() == "numpy"
    if _accel.HAVE_NUMBA:
        assert _run(code, "1").strip() == "numba"


def test_backends_agree_end_to_end():
    code = ("import json; from cartanlab.experiments import run_experiment;"
            "o = run_experiment({'experiment': 'refinement', 'params': {'sizes': [16, 32],"
            " 'fixtures': [{'generator': 'perturbed-clifford'}, {'generator': 'leibniz'}]}});"
            "print(json.dumps({k: v['order'] for k, v in o.summary['rates'].items()}))")
    import json
    a = json.loads(_run(code, "0"))
    b = json.loads(_run(code, "1"))
    for k in a:
        assert abs(a[k] - b[k]) < 1e-8
