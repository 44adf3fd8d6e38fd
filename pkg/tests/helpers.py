"""Independent oracles shared by the test modules."""
from __future__ import annotations

import contextlib
import math

import numpy as np

from sharedenc import tensor as T

FD_EPS = 1e-3
REL_TOL = 1e-3
# Key biases shift every score of a query row equally, so softmax makes their
# gradient identically zero; only float32 noise remains on the analytic side.
STRUCTURALLY_ZERO = (".attn.bk",)
ZERO_ABS_TOL = 1e-6


def analytic_grads(fn, arrays):
    """float32 gradients of scalar fn(*tensors) via backward()."""
    ts = [T.parameter(np.asarray(a, np.float32)) for a in arrays]
    fn(*ts).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def fd_grads(fn, arrays, eps=FD_EPS):
    """Central differences of fn, evaluated on the float64 shadow path."""
    base = [np.asarray(a, np.float64) for a in arrays]
    out = []
    with T.float64_shadow():
        def f(vals):
            return float(fn(*[T.Tensor(v) for v in vals]).data)

        for i, a in enumerate(base):
            g = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                vals = [b.copy() for b in base]
                vals[i][idx] += eps
                up = f(vals)
                vals[i][idx] -= 2 * eps
                down = f(vals)
                g[idx] = (up - down) / (2 * eps)
            out.append(g)
    return out


def max_rel_err(analytic, numeric) -> float:
    a = np.asarray(analytic, np.float64)
    n = np.asarray(numeric, np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), 1e-6)))


@contextlib.contextmanager
def shadow_params(model):
    """Swap every model parameter to a float64 copy for the duration of the block."""
    saved = {n: p.data for n, p in model.params.items()}
    with T.float64_shadow():
        for n, p in model.params.items():
            p.data = saved[n].astype(np.float64)
        try:
            yield
        finally:
            for n, p in model.params.items():
                p.data = saved[n]


def model_fd_grads(model, loss_fn, names=None, eps=FD_EPS):
    """Central-difference gradients of loss_fn(model) w.r.t. named parameters (float64)."""
    names = list(model.params) if names is None else names
    out = {}
    with shadow_params(model):
        for name in names:
            p = model.params[name]
            g = np.zeros(p.shape)
            for idx in np.ndindex(p.shape):
                old = p.data[idx]
                p.data[idx] = old + eps
                up = float(loss_fn(model).data)
                p.data[idx] = old - eps
                down = float(loss_fn(model).data)
                p.data[idx] = old
                g[idx] = (up - down) / (2 * eps)
            out[name] = g
    return out


def check_model_grads(analytic: dict, numeric: dict) -> dict[str, float]:
    """Per-parameter max relative error; structurally-zero gradients must be ~0 on both sides."""
    errors = {}
    for name, num in numeric.items():
        ana = analytic[name]
        if name.endswith(STRUCTURALLY_ZERO):
            errors[name] = 0.0 if max(np.abs(ana).max(), np.abs(num).max()) < ZERO_ABS_TOL else np.inf
        else:
            errors[name] = max_rel_err(ana, num)
    return errors


def model_analytic_grads(model, loss_fn):
    model.zero_grad()
    loss_fn(model).backward()
    return {n: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for n, p in model.params.items()}


def loss_double_loop(z_img, z_txt, tau):
    """Symmetric InfoNCE written as plain scalar loops over the batch."""
    z_img = np.asarray(z_img, np.float64)
    z_txt = np.asarray(z_txt, np.float64)
    n = len(z_img)

    def dot(u, v):
        return sum(float(a) * float(b) for a, b in zip(u, v))

    total = 0.0
    for i in range(n):
        num_it = math.exp(dot(z_img[i], z_txt[i]) / tau)
        den_it = sum(math.exp(dot(z_img[i], z_txt[j]) / tau) for j in range(n))
        num_ti = math.exp(dot(z_txt[i], z_img[i]) / tau)
        den_ti = sum(math.exp(dot(z_txt[i], z_img[j]) / tau) for j in range(n))
        total += math.log(num_it / den_it) + math.log(num_ti / den_ti)
    return -total / n


def recall_brute_force(sim, k):
    """Sort every row explicitly (stable on descending value, then ascending column)."""
    sim = np.asarray(sim)
    n = sim.shape[0]
    hits = 0
    for i in range(n):
        order = sorted(range(n), key=lambda j: (-sim[i, j], j))
        if order.index(i) < k:
            hits += 1
    return hits / n


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
