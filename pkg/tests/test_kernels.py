"""numba and numpy kernels must agree; the env flag must select numpy."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncfield import FieldInstance, KernelConfig
from asyncfield.kernels import numba_impl, numpy_impl

from conftest import toy_field, toy_space

needs_numba = pytest.mark.skipif(numba_impl is None, reason="numba unavailable or disabled")


def _close(a, b, atol=1e-10):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y, atol)
    else:
        np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                                   atol=atol, rtol=0)


@needs_numba
@given(st.integers(0, 10_000), st.integers(1, 6), st.booleans())
def test_mf_sweep_backends_agree(seed, T, hold):
    fld = toy_field(seed, T=T)
    sp = fld.space
    args = (fld.theta(), np.ascontiguousarray(fld.fi), np.ascontiguousarray(fld.mu), sp.sup_obj,
            fld.kmat())
    outs = []
    for impl in (numba_impl, numpy_impl):
        q = np.full((T, sp.support_size), 1.0 / sp.support_size)
        qi = np.full(sp.n_intent, 1.0 / sp.n_intent)
        d = impl.mf_sweep(*args, q, qi, 1e-8, 50, 0.0, hold)
        d2 = impl.mf_sweep(*args, q, qi, 1e-8, 50, 0.0, False)
        outs.append((q, qi, np.array([d, d2])))
    _close(outs[0], outs[1])


@needs_numba
@given(st.integers(0, 10_000))
def test_local_and_frame_update_backends_agree(seed):
    rng = np.random.default_rng(seed)
    sp = toy_space()
    K, M, O = sp.support_size, sp.n_intent, sp.n_object
    theta, fi = rng.normal(size=K), rng.normal(size=(O, M))
    pair_in, h_in = rng.normal(size=O), rng.normal(size=M)
    res = []
    for impl in (numba_impl, numpy_impl):
        q, qi = np.full(K, 1.0 / K), np.full(M, 1.0 / M)
        n = impl.local_update(theta, fi, sp.sup_obj, pair_in, h_in, q, qi, 1e-10, 50, 0.0)
        q2 = np.full(K, 1.0 / K)
        impl.frame_update(theta, fi, sp.sup_obj, pair_in, q2, qi, 0.25)
        res.append((q, qi, q2, np.array([n])))
    _close(res[0], res[1])


@needs_numba
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_enumeration_backends_agree(seed, T):
    fld = toy_field(seed, T=T, per_frame_mu=True)
    args = (fld.theta(), np.ascontiguousarray(fld.fi), fld.mu_per_frame(), fld.space.sup_obj,
            fld.kmat())
    _close(tuple(numba_impl.enumerate_field(*args)), tuple(numpy_impl.enumerate_field(*args)))
    assert numba_impl.log_partition(*args) == pytest.approx(numpy_impl.log_partition(*args),
                                                            abs=1e-10)


@needs_numba
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.sampled_from([-1.0, 3.0]),
       st.booleans())
def test_approx_incoming_backends_agree(seed, d, h, kw):
    rng = np.random.default_rng(seed)
    n, O, M = int(rng.integers(0, 9)), 3, 2
    pos = rng.permutation(12)[:n].astype(float)
    stamp = rng.permutation(n).astype(np.int64) + 1
    has = rng.random(n) < 0.7
    vecs = [rng.normal(size=(n, O)), rng.normal(size=(n, O)), rng.normal(size=(n, M)),
            rng.normal(size=(n, M)), rng.random((n, O)), rng.random((n, O))]
    target = float(rng.integers(12))
    a = numba_impl.approx_incoming(pos, stamp, has, *vecs, target, d, h, 2.0, 1.3, kw)
    b = numpy_impl.approx_incoming(pos, stamp, has, *vecs, target, d, h, 2.0, 1.3, kw)
    _close(tuple(a), tuple(b), atol=1e-12)


@needs_numba
def test_gibbs_backends_agree():
    rng = np.random.default_rng(3)
    sp = toy_space()
    fld = FieldInstance.random(sp, 5, rng, cfg=KernelConfig(sigma=2.0))
    x0 = rng.integers(sp.support_size, size=5)
    u = rng.random((40, 6))
    args = (fld.theta(), np.ascontiguousarray(fld.fi), np.ascontiguousarray(fld.mu), sp.sup_obj,
            fld.kmat(), x0, 1, u, 10, 5, 4)
    xa, ia = numba_impl.gibbs_chain(*args)
    xb, ib = numpy_impl.gibbs_chain(*args)
    np.testing.assert_array_equal(xa, xb)
    np.testing.assert_array_equal(ia, ib)


_PROBE = """
import json, numpy as np
from asyncfield.kernels import BACKEND
from asyncfield.inference import infer_field
from asyncfield import FieldInstance, KernelConfig, LabelSpace
sp = LabelSpace(2, 3, 2, 3, 2, 3, ((0, 0, 0, 0), (0, 1, 1, 1), (1, 2, 0, 2), (1, 0, 1, 0),
                                   (0, 2, 1, 2), (1, 1, 0, 1)))
fld = FieldInstance.random(sp, 6, np.random.default_rng(5), cfg=KernelConfig(sigma=2.0))
st = infer_field(fld)
print(json.dumps({"backend": BACKEND, "q": st.q.tolist(), "qi": st.q_intent.tolist()}))
"""


def _probe(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("ASYNCFIELD_DISABLE_NUMBA", None)
    if disable:
        env["ASYNCFIELD_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True,
                         check=True, timeout=300)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_env_flag_selects_numpy_and_results_match():
    off = _probe(True)
    assert off["backend"] == "numpy"
    on = _probe(False)
    if numba_impl is not None:
        assert on["backend"] == "numba"
    np.testing.assert_allclose(on["q"], off["q"], atol=1e-10)
    np.testing.assert_allclose(on["qi"], off["qi"], atol=1e-10)
