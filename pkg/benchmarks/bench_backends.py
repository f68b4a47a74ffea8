"""Compare the numba and numpy kernel backends.

Times the three hot kernels in isolation plus one training epoch and one
do-inference pass, reporting the best of ``--repeats`` runs for each backend
and the largest output difference between them.

    python3 benchmarks/bench_backends.py [--rows 200000] [--repeats 5]

Run with ``DCREC_NUMBA=0`` to confirm the fallback imports without numba
being touched; in that mode only the numpy column is printed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dcrec import _kernels as K
from dcrec.data import estimate_confounder_prior
from dcrec.inference import score_dataset
from dcrec.model import init_model
from dcrec.synth import SynthConfig, generate
from dcrec.training import TrainConfig, train


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def kernel_cases(rows, d, fields, vocab, rng):
    emb = rng.normal(size=(vocab, d))
    idx = rng.integers(0, vocab, size=(rows, fields))
    extra = rng.normal(size=d)
    m, s = K._eb_forward_np(emb, idx, extra)
    dm = rng.normal(size=m.shape)
    p0 = rng.normal(size=(vocab, d))
    g = rng.normal(size=(vocab, d))

    def fwd():
        return K.eb_forward(emb, idx, extra)[0]

    def bwd():
        grad = np.zeros_like(emb)
        K.eb_backward(emb, idx, s, dm, grad)
        return grad

    def ada():
        p, acc = p0.copy(), np.ones_like(p0)
        for _ in range(20):
            K.adagrad_update(p, g, acc, 0.01, 1e-10)
        return p

    return {"eb_forward": fwd, "eb_backward": bwd, "adagrad x20": ada}


def model_cases(n_records, seed=0):
    ds, _ = generate(SynthConfig(n_users=500, n_items=1000, n_records=n_records, seed=seed))
    prior = estimate_confounder_prior(ds)
    cfg = TrainConfig(max_epochs=1, patience=1, seed=seed, learning_rate=0.05)

    def epoch():
        m = init_model("dcr_moe", ds.schema, 16, 64, 32, seed)
        m, _ = train(m, ds, ds, cfg)
        return m.params["embedding"]

    scorer = init_model("dcr_moe", ds.schema, 16, 256, 128, seed)

    def do():
        return score_dataset("do", scorer, prior, ds)

    return {"train epoch": epoch, "do scoring": do}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000, help="rows per kernel call")
    ap.add_argument("--records", type=int, default=50_000, help="records for the model-level cases")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = kernel_cases(args.rows, 16, 8, 20_000, rng)
    cases.update(model_cases(args.records))
    backends = ["numpy"] + (["numba"] if K.NUMBA_AVAILABLE and K.get_backend() == "numba" else [])

    results = {}
    for b in backends:
        K.set_backend(b)
        for name, fn in cases.items():
            fn()  # warm-up, includes jit compilation
            results[b, name] = best_of(fn, args.repeats)

    head = f"{'case':<14}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10}{'max |diff|':>12}"
    print(head)
    for name in cases:
        line = f"{name:<14}" + "".join(f"{results[b, name][0] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            (tn, on), (tb, ob) = results["numpy", name], results["numba", name]
            line += f"{tn / tb:>9.1f}x{float(np.max(np.abs(np.asarray(on) - np.asarray(ob)))):>12.1e}"
        print(line)


if __name__ == "__main__":
    main()
