"""Time the numba kernels against their numpy twins on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is run once untimed (numba compile), then ``repeat`` times;
the best wall time is reported with the speed-up and the largest output
difference between the two backends.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from asyncfield import FieldInstance, KernelConfig, LabelSpace
from asyncfield.kernels import numba_impl, numpy_impl


def reference_space() -> LabelSpace:
    return LabelSpace(16, 8, 4, 3, 3, 4, tuple((c, c // 2, c % 4, p)
                                                  for c in range(16) for p in range(3)))


def toy_space() -> LabelSpace:
    return LabelSpace(2, 3, 2, 3, 2, 3, ((0, 0, 0, 0), (0, 1, 1, 1), (1, 2, 0, 2),
                                         (1, 0, 1, 0), (0, 2, 1, 2), (1, 1, 0, 1)))


def _best(fn, repeat):
    fn()
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def cases(rng):
    sp = reference_space()
    fld = FieldInstance.random(sp, 25, rng, scale=0.5, cfg=KernelConfig(sigma=4.0))
    th, fi = fld.theta(), np.ascontiguousarray(fld.fi)
    mu, km = np.ascontiguousarray(fld.shared_mu()), fld.kmat()
    K, M = sp.support_size, sp.n_intent

    def sweep(impl):
        def run():
            q = np.full((25, K), 1.0 / K)
            qi = np.full(M, 1.0 / M)
            impl.mf_sweep(th, fi, mu, sp.sup_obj, km, q, qi, 1e-8, 50, 0.0, True)
            impl.mf_sweep(th, fi, mu, sp.sup_obj, km, q, qi, 1e-8, 50, 0.0, False)
            return q, qi
        return run

    yield "mf_sweep (T=25, K=144, 2 passes)", sweep

    toy = FieldInstance.random(toy_space(), 4, rng, per_frame_mu=True)
    args = (toy.theta(), np.ascontiguousarray(toy.fi), toy.mu_per_frame(), toy.space.sup_obj,
            toy.kmat())
    yield "enumerate_field (12^4 x 3 states)", lambda impl: (lambda: impl.enumerate_field(*args))
    yield "log_partition (12^4 x 3 states)", lambda impl: (lambda: impl.log_partition(*args))

    n = 25
    pos = np.arange(n, dtype=float)
    stamp = rng.permutation(n).astype(np.int64)
    has = rng.random(n) < 0.8
    O = sp.n_object
    vecs = [rng.normal(size=(n, O)) for _ in range(2)] + [rng.normal(size=(n, M)) for _ in range(2)] \
        + [rng.normal(size=(n, O)) for _ in range(2)]

    def approx(impl):
        return lambda: impl.approx_incoming(pos, stamp, has, *vecs, 12.0, 0.9, -1.0, 4.0, 1.0, True)

    yield "approx_incoming (25 stored messages)", approx

    x0 = rng.integers(K, size=25)
    u = rng.random((300, 26))

    def gibbs(impl):
        return lambda: impl.gibbs_chain(th, fi, mu, sp.sup_obj, km, x0, 0, u, 100, 10, 20)

    yield "gibbs_chain (300 sweeps, T=25)", gibbs


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if numba_impl is None:
        raise SystemExit("numba is unavailable (or disabled); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for name, make in cases(rng):
        t_nb, out_nb = _best(make(numba_impl), args.repeat)
        t_np, out_np = _best(make(numpy_impl), args.repeat)
        print(f"{name:40s} {t_nb:10.5f} {t_np:10.5f} {t_np / t_nb:9.1f} {_diff(out_nb, out_np):10.2e}")


if __name__ == "__main__":
    main()
