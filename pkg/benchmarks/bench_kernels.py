"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 7] [--number 20]

Each kernel is timed with ``timeit`` on inputs sized like the default model
(N=60 observations, T=12 steps, H=20 hidden units; 192-month factor panels).
The last row times one full network training, with the module-level kernels
swapped to each backend in turn.
"""
import argparse
import timeit

import numpy as np

from nowcaster import kernels, lstm
from nowcaster.tensorize import Batch


def _inputs(rng):
    n, t, h = 60, 12, 20
    zx = rng.normal(size=(n, t, 4 * h))
    w_h = rng.normal(size=(4 * h, h)) / np.sqrt(h)
    hs, cs, gates = kernels.python_backend.lstm_layer_forward(zx, w_h)
    dhs = rng.normal(size=(n, t, h))
    x = np.cumsum(rng.normal(size=300)) * 0.1
    y = rng.normal(size=(192, 20))
    y[rng.random(y.shape) < 0.2] = np.nan
    lam, r = rng.uniform(0.5, 1.5, 20), rng.uniform(0.2, 1.0, 20)
    return dict(zx=zx, w_h=w_h, hs=hs, cs=cs, gates=gates, dhs=dhs, x=x, y=y, lam=lam, r=r)


def cases(backend, d):
    kal = backend.kalman_filter(d["y"], d["lam"], d["r"], 0.8, 1.0, 0.0, 1 / 0.36)
    return {
        "lstm_layer_forward": lambda: backend.lstm_layer_forward(d["zx"], d["w_h"]),
        "lstm_layer_backward": lambda: backend.lstm_layer_backward(d["dhs"], d["gates"], d["cs"], d["hs"], d["w_h"]),
        "arma_residuals(2,2)": lambda: backend.arma_residuals(d["x"], 0.1, np.array([0.5, -0.2]),
                                                              np.array([0.3, 0.1])),
        "kalman_filter": lambda: backend.kalman_filter(d["y"], d["lam"], d["r"], 0.8, 1.0, 0.0, 1 / 0.36),
        "rts_smoother": lambda: backend.rts_smoother(*kal[1:5], 0.8),
        "arma_css_minimize(1,1)": lambda: backend.arma_css_minimize(d["x"], 1, 1, np.array([0.0, 0.5, 0.0]),
                                                                    1200, 1e-7, 1e-9),
    }


def _train_case(backend):
    rng = np.random.default_rng(1)
    b = Batch(rng.normal(size=(60, 12, 10)), rng.normal(size=60), tuple((2000 + i, 1) for i in range(60)),
              tuple(f"f{j}" for j in range(10)))
    hp = lstm.LstmHyperparams(epochs=20)

    def run():
        saved = kernels.lstm_layer_forward, kernels.lstm_layer_backward
        kernels.lstm_layer_forward, kernels.lstm_layer_backward = backend.lstm_layer_forward, backend.lstm_layer_backward
        try:
            lstm.train(b, hp, seed=0)
        finally:
            kernels.lstm_layer_forward, kernels.lstm_layer_backward = saved

    return run


def best_ms(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e3


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    d = _inputs(np.random.default_rng(0))
    py_cases = cases(kernels.python_backend, d)
    cy_cases = cases(kernels.compiled_backend, d)
    py_cases["train 20 epochs (N=60,F=10)"] = _train_case(kernels.python_backend)
    cy_cases["train 20 epochs (N=60,F=10)"] = _train_case(kernels.compiled_backend)
    print(f"{'kernel':<30}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name in py_cases:
        number = max(1, args.number // 10) if name.startswith("train") else args.number
        t_py = best_ms(py_cases[name], args.repeat, number)
        t_cy = best_ms(cy_cases[name], args.repeat, number)
        print(f"{name:<30}{t_py:>12.3f}{t_cy:>14.3f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
