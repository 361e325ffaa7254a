"""Built-in invariant suites behind the `selftest` subcommand.

Each suite is a callable that raises AssertionError on violation; the CLI
prints a PASS/FAIL table and exits non-zero on any failure. These checks
are deliberately small and seeded so a fresh checkout verifies itself in
seconds.
"""

from __future__ import annotations

import numpy as np

from . import tensorops as T
from .geometry import hypercsi, nmf_mu, spa_purest
from .initsplit import SplitConfig, light_split, perturb
from .mixmodel import ImageCube, build_spectral_response, downsample_spectral, mix
from .prism.gates import gate_unitary, lift_unitary
from .prism.network import init_prism_params, prism_forward, prism_loss
from .solver import zh_update
from .tensorops import Tensor

__all__ = ["SUITES", "run_suites"]

_SEED = 20240


def _fd_grad(fn, x, step=1e-4):
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = fn()
        x[i] = orig - step
        lo = fn()
        x[i] = orig
        g[i] = (hi - lo) / (2 * step)
        it.iternext()
    return g


def gate_unitarity():
    rng = np.random.default_rng(_SEED)
    for kind in ("rx", "ry", "xx"):
        for _ in range(100):
            u = gate_unitary(kind, rng.uniform(-np.pi, np.pi))
            err = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
            assert err < 1e-12, f"{kind}: U*U deviates by {err:.2e}"
    for kind in ("z", "not", "ccnot"):
        u = gate_unitary(kind)
        err = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
        assert err < 1e-12, f"{kind}: U*U deviates by {err:.2e}"
    lifted = lift_unitary(gate_unitary("xx", 0.3), (1, 3))
    err = np.abs(lifted.conj().T @ lifted - np.eye(16)).max()
    assert err < 1e-12, f"lifted gate not unitary ({err:.2e})"


def op_gradchecks():
    rng = np.random.default_rng(_SEED)
    x = rng.standard_normal((3, 8, 8))
    k = rng.standard_normal((2, 3, 3, 3)) * 0.3
    b = rng.standard_normal(2) * 0.1

    cases = {
        "conv": lambda xt: T.tsum(T.square(T.conv2d(xt, Tensor(k), Tensor(b), pad=1))),
        "tconv": lambda xt: T.tsum(T.square(T.conv2d_transpose(xt, Tensor(k), Tensor(b)))),
        "leaky_relu": lambda xt: T.tsum(T.leaky_relu(xt, 0.2)),
        "maxpool2": lambda xt: T.tsum(T.square(T.maxpool2(xt))),
        "upsample": lambda xt: T.tsum(T.square(T.upsample_bilinear(xt, 16, 16))),
    }
    for name, make in cases.items():
        xt = Tensor(x)
        loss = make(xt)
        T.backward(loss)
        analytic = xt.grad.copy()
        numeric = _fd_grad(lambda: make(Tensor(x)).item(), x)
        err = np.abs(analytic - numeric).max()
        scale = max(1.0, np.abs(numeric).max())
        assert err / scale < 1e-4, f"{name}: gradient error {err / scale:.2e}"


def closed_form_optimality():
    rng = np.random.default_rng(_SEED)
    for _ in range(5):
        p, n, h, w = 4, 3, 5, 5
        d = build_spectral_response(p, 2)
        a = rng.uniform(0.1, 1.0, (d.m, n))
        s = rng.uniform(0.0, 1.0, (n, h * w))
        f = ImageCube(rng.uniform(0.0, 1.0, (d.m, h, w)))
        zm = ImageCube(rng.uniform(0.0, 1.0, (p, h, w)))
        rhs = a @ s + f.matrix() + d.adjoint(zm.matrix())
        pre = np.linalg.solve(2 * np.eye(d.m) + d.dense().T @ d.dense(), rhs)
        grad = 2 * (pre - a @ s) + 2 * (pre - f.matrix()) \
            + 2 * d.dense().T @ (d.dense() @ pre - zm.matrix())
        assert np.abs(grad).max() < 1e-8, "quadratic gradient not zeroed"
        got = zh_update(a, s, f, zm, d)
        assert np.abs(got.matrix() - np.maximum(pre, 0)).max() < 1e-10, \
            "block solve disagrees with dense solve"


def light_split_consistency():
    rng = np.random.default_rng(_SEED)
    zm = ImageCube(rng.uniform(0.0, 2.0, (4, 6, 7)))
    zt = light_split(zm)
    d = build_spectral_response(4, 2)
    assert np.abs(d.apply(zt.data) - zm.data).max() < 1e-12, "block sums drift"
    sv = np.linalg.svd(zt.matrix(), compute_uv=False)
    assert sv[4] < 1e-9 * sv[0], "split cube rank exceeds band count"
    noisy = perturb(zt, SplitConfig(seed=1))
    assert noisy.data.min() >= 0, "perturbation left negative radiance"


def hypercsi_recovery():
    rng = np.random.default_rng(_SEED)
    m, n, hh, ww = 8, 3, 8, 8
    a_true = rng.uniform(0.2, 1.5, (m, n))
    s_true = rng.dirichlet(np.ones(n), size=hh * ww).T
    s_true[:, :n] = np.eye(n)
    cube = ImageCube(mix(a_true, s_true).reshape(m, hh, ww))
    a_est, s_est = hypercsi(cube, n)
    cost = np.array([[np.linalg.norm(a_est[:, i] - a_true[:, j])
                      for j in range(n)] for i in range(n)])
    perm = cost.argmin(axis=1)
    assert sorted(perm.tolist()) == list(range(n)), "endmember matching collapsed"
    err = max(np.linalg.norm(a_est[:, i] - a_true[:, perm[i]])
              / np.linalg.norm(a_true[:, perm[i]]) for i in range(n))
    assert err < 1e-6, f"endmember recovery error {err:.2e}"
    idx = spa_purest(np.vstack([cube.matrix(), np.ones((1, hh * ww))]), n)
    assert sorted(idx) == list(range(n)), f"purest pixels missed: {idx}"


def nmf_monotonic():
    rng = np.random.default_rng(_SEED)
    z = ImageCube(rng.uniform(0.1, 1.0, (6, 5, 8)))
    b0 = rng.uniform(0.1, 1.0, (6, 3))
    s0 = rng.uniform(0.1, 1.0, (3, 40))
    _, _, trace = nmf_mu(z, 3, init=(b0, s0), iters=300)
    worst = np.max(trace[1:] - trace[:-1])
    assert worst <= 1e-9 * trace[0], f"objective increased by {worst:.2e}"


def prism_identity():
    rng = np.random.default_rng(_SEED)
    zm = ImageCube(rng.uniform(0.0, 1.0, (4, 16, 16)))
    params = init_prism_params(4, np.random.default_rng(0))
    pre = prism_forward(params, zm, pre_clamp=True)
    d = build_spectral_response(4, 2)
    assert np.abs(d.apply(pre.data) - zm.data).max() < 1e-12, \
        "pre-clamp band pairs do not sum to the input"
    loss, _, terms = prism_loss(params, zm, prism_forward(params, zm))
    assert np.isfinite(loss.item()) and terms.anchor < 1e-18, \
        "self-anchored loss should have a vanishing anchor term"


SUITES = {
    "gates.unitarity": gate_unitarity,
    "tensorops.gradcheck": op_gradchecks,
    "solver.zh_optimality": closed_form_optimality,
    "initsplit.consistency": light_split_consistency,
    "geometry.hypercsi_oracle": hypercsi_recovery,
    "geometry.nmf_monotonic": nmf_monotonic,
    "prism.split_identity": prism_identity,
}


def run_suites(name_filter: str | None = None):
    """Run matching suites; returns a list of (name, passed, message)."""
    results = []
    for name, fn in SUITES.items():
        if name_filter and name_filter not in name:
            continue
        try:
            fn()
            results.append((name, True, ""))
        except AssertionError as exc:
            results.append((name, False, str(exc)))
        except Exception as exc:  # a crash is a failure, not an abort
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
