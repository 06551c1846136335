"""Benchmark the compiled enumeration kernel against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

import graphsync as gs


def _have_compiled() -> bool:
    try:
        from graphsync import _ckernels  # noqa: F401
        return True
    except ImportError:
        return False


def bench_fill(m: int, q: int, n_edges: int, reps: int) -> dict:
    from graphsync import _pykernels

    rng = np.random.default_rng(0)
    unary = rng.normal(size=(m, q))
    eu = rng.integers(0, m, size=n_edges).astype(np.intc)
    ev = ((eu + 1 + rng.integers(0, m - 1, size=n_edges)) % m).astype(np.intc)
    elogq = rng.normal(size=(n_edges, q, q))
    out = np.empty(q**m)
    results = {}
    impls = {"pure-python": _pykernels.fill_logweights}
    if _have_compiled():
        from graphsync import _ckernels

        impls["compiled"] = _ckernels.fill_logweights
    ref = None
    for name, fn in impls.items():
        fn(unary, eu, ev, elogq, out)  # warm up
        t0 = time.perf_counter()
        for _ in range(reps):
            fn(unary, eu, ev, elogq, out)
        results[name] = (time.perf_counter() - t0) / reps
        if ref is None:
            ref = out.copy()
        else:
            assert np.abs(out - ref).max() < 1e-9, "backends disagree"
    return results


def bench_end_to_end(reps: int) -> dict:
    """One full exact-marginal computation on torus(2,4), both backends."""
    import graphsync.inference as inf
    from graphsync import _pykernels

    g = gs.gen_torus(2, 4)
    kern = gs.kernel_zq(2, 0.7)
    insts = [gs.sample_instance(g, kern, 0.1, seed=s) for s in range(reps)]
    impls = {"pure-python": _pykernels.fill_logweights}
    if _have_compiled():
        from graphsync import _ckernels

        impls["compiled"] = _ckernels.fill_logweights
    results = {}
    saved = inf.fill_logweights
    try:
        for name, fn in impls.items():
            inf.fill_logweights = fn
            t0 = time.perf_counter()
            for inst in insts:
                inf.exact_posterior_marginals(g, kern, inst)
            results[name] = (time.perf_counter() - t0) / reps
    finally:
        inf.fill_logweights = saved
    return results


def main() -> None:
    print(f"active backend: {gs.kernel_backend()}")
    print("\nfill_logweights (raw kernel):")
    for m, q, ne, reps in [(12, 2, 18, 20), (16, 2, 32, 5), (10, 3, 15, 5)]:
        res = bench_fill(m, q, ne, reps)
        line = f"  m={m} q={q} E={ne}: " + "  ".join(
            f"{k}={v * 1e3:.2f}ms" for k, v in res.items()
        )
        if len(res) == 2:
            line += f"  speedup={res['pure-python'] / res['compiled']:.1f}x"
        print(line)
    print("\nexact marginals on torus(2,4), q=2 (end to end):")
    res = bench_end_to_end(10)
    line = "  " + "  ".join(f"{k}={v * 1e3:.2f}ms" for k, v in res.items())
    if len(res) == 2:
        line += f"  speedup={res['pure-python'] / res['compiled']:.1f}x"
    print(line)


if __name__ == "__main__":
    main()
