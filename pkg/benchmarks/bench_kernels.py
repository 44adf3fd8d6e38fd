"""Compiled vs numpy row kernels, and one full training step under each backend.

    python3 benchmarks/bench_kernels.py [--rows 4352] [--width 256] [--repeat 20]

The per-kernel table calls both implementations directly. The training-step
row runs a child interpreter per backend, since the backend is fixed at import
(``SHAREDENC_PURE_PYTHON=1`` selects numpy).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sharedenc import _pykernels

try:
    from sharedenc import _ckernels
except ImportError:
    _ckernels = None

STEP_SNIPPET = """
import json, time
from sharedenc.config import TrainConfig, DataConfig
from sharedenc.encoder import ModelConfig
from sharedenc.data import generate_dataset
from sharedenc.kernels import BACKEND
from sharedenc.train import train
cfg = TrainConfig(steps={steps}, batch_size=64, model=ModelConfig(d=64, identifier="vector"),
                  data=DataConfig(size=640))
data = generate_dataset(640, 0)
train(TrainConfig(steps=2, batch_size=64, model=cfg.model), data)  # warm-up
t = time.perf_counter()
train(cfg, data)
print(json.dumps({{"backend": BACKEND, "step_s": (time.perf_counter() - t) / {steps}}}))
"""


def cases(rows, width, rng):
    x = rng.standard_normal((rows, width)).astype(np.float32)
    dy = rng.standard_normal((rows, width)).astype(np.float32)
    g = rng.standard_normal(width).astype(np.float32)
    b = rng.standard_normal(width).astype(np.float32)
    s = rng.standard_normal((rows * 4, 18)).astype(np.float32)  # attention rows: s' = 18
    ds = rng.standard_normal(s.shape).astype(np.float32)

    def make(mod):
        _, xhat, rstd = mod.layernorm_fwd(x, g, b, 1e-5)
        y = mod.softmax_fwd(s)
        return {
            "layernorm_fwd": lambda: mod.layernorm_fwd(x, g, b, 1e-5),
            "layernorm_bwd": lambda: mod.layernorm_bwd(dy, xhat, rstd, g),
            "softmax_fwd": lambda: mod.softmax_fwd(s),
            "softmax_bwd": lambda: mod.softmax_bwd(y, ds),
            "gelu_fwd": lambda: mod.gelu_fwd(x),
            "gelu_bwd": lambda: mod.gelu_bwd(x, dy),
        }
    return make


def best_ms(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def step_time(pure: bool, steps: int) -> dict:
    env = dict(os.environ)
    env.pop("SHAREDENC_PURE_PYTHON", None)
    if pure:
        env["SHAREDENC_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)], env=env,
                         capture_output=True, text=True, check=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=64 * 68, help="rows per call (batch x tokens)")
    p.add_argument("--width", type=int, default=256, help="row width (the MLP hidden size at d=64)")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--steps", type=int, default=20, help="training steps timed per backend")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    make = cases(args.rows, args.width, rng)
    py = make(_pykernels)
    c = make(_ckernels) if _ckernels is not None else {}
    print(f"{'kernel':<16}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, fn in py.items():
        t_py = best_ms(fn, args.repeat)
        if name in c:
            t_c = best_ms(c[name], args.repeat)
            print(f"{name:<16}{t_py:>10.3f}{t_c:>13.3f}{t_py / t_c:>8.2f}x")
        else:
            print(f"{name:<16}{t_py:>10.3f}{'n/a':>13}")

    if args.steps > 0:
        numpy_step = step_time(True, args.steps)
        print(f"\ntrain step (d=64, 4 shared layers, N=64)")
        print(f"  numpy    {numpy_step['step_s'] * 1e3:8.1f} ms")
        if _ckernels is not None:
            c_step = step_time(False, args.steps)
            print(f"  {c_step['backend']:<8} {c_step['step_s'] * 1e3:8.1f} ms"
                  f"  ({numpy_step['step_s'] / c_step['step_s']:.2f}x)")


if __name__ == "__main__":
    main()
