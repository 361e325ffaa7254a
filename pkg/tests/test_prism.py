"""Quantum gates, the feature-extraction circuit, the prism network, total
variation, and the training loop."""

import numpy as np
import pytest

from prime_unmix import tensorops as T
from prime_unmix.mixmodel import ImageCube, build_spectral_response
from prime_unmix.prism.gates import (GateUnitary, QubitGroupState, apply_gate,
                                     expect_z, gate_unitary, lift_unitary)
from prime_unmix.prism.network import (PrismShapeError, init_prism_params,
                                       load_params, plan_layers, prism_forward,
                                       prism_loss, quantum_fe, save_params,
                                       train_prism, tv_spa, tv_spe)
from prime_unmix.tensorops import Tensor, backward

from conftest import fd_grad, rel_err


# ---------------------------------------------------------------------------
# gate unitaries


@pytest.mark.parametrize("kind", ["rx", "ry", "xx"])
def test_parametric_gates_unitary(kind, rng):
    for angle in rng.uniform(-2 * np.pi, 2 * np.pi, 100):
        u = gate_unitary(kind, angle)
        assert np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() < 1e-12


@pytest.mark.parametrize("kind", ["z", "not", "ccnot"])
def test_fixed_gates_unitary(kind):
    u = gate_unitary(kind)
    assert np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() < 1e-12


def test_ry_zero_is_identity(rng):
    state = QubitGroupState.zeros(3)
    out = apply_gate(state, GateUnitary("ry", (2,), 0.0))
    assert np.abs(out.amplitudes() - state.amplitudes()).max() == 0


def test_ry_pi_flips_qubit():
    state = QubitGroupState.zeros(1)
    out = apply_gate(state, GateUnitary("ry", (0,), np.pi))
    amp = out.amplitudes()[0]
    assert abs(amp[0b1000] - 1.0) < 1e-15
    assert np.abs(np.delete(amp, 0b1000)).max() < 1e-15


def test_xx_pi_creates_antidiagonal_phase():
    state = QubitGroupState.zeros(1)
    out = apply_gate(state, GateUnitary("xx", (0, 1), np.pi))
    amp = out.amplitudes()[0]
    assert abs(amp[0b1100] - (-1j)) < 1e-15
    assert np.abs(np.delete(amp, 0b1100)).max() < 1e-15


def test_toffoli_open_control_action():
    # |100> -> |101>: first control set, open control clear flips the target
    u = gate_unitary("ccnot")
    for i in range(8):
        out = u @ np.eye(8)[i]
        j = int(np.argmax(np.abs(out)))
        if i == 0b100:
            assert j == 0b101
        elif i == 0b101:
            assert j == 0b100
        else:
            assert j == i


def test_apply_gate_matches_lifted_unitary(rng):
    re = rng.standard_normal((4, 16))
    im = rng.standard_normal((4, 16))
    amp = re + 1j * im
    cases = [
        ("ry", (1,), 0.8), ("rx", (3,), -2.2), ("xx", (0, 2), 1.4),
        ("not", (2,), None), ("z", (0,), None), ("ccnot", (3, 1, 0), None),
    ]
    for kind, targets, angle in cases:
        state = QubitGroupState(Tensor(re), Tensor(im))
        out = apply_gate(state, GateUnitary(kind, targets, angle))
        full = lift_unitary(gate_unitary(kind, angle), targets)
        want = amp @ full.T
        got = out.re.data + 1j * out.im.data
        assert np.abs(got - want).max() < 1e-12, kind


def test_gate_rejects_bad_targets():
    with pytest.raises(ValueError):
        GateUnitary("xx", (1, 1), 0.3)
    with pytest.raises(ValueError):
        GateUnitary("ry", (4,), 0.3)
    with pytest.raises(ValueError):
        GateUnitary("ry", (0,))


# ---------------------------------------------------------------------------
# feature-extraction circuit


def test_fe_identity_circuit():
    out = quantum_fe(np.zeros((5, 4)), np.zeros(4), np.zeros(4),
                     np.zeros(4), np.zeros(4))
    assert np.abs(out.data - 1.0).max() == 0


def test_fe_norm_preserved(rng):
    feats = rng.uniform(-3, 3, (6, 4))
    angles = [rng.uniform(-np.pi, np.pi, 4) for _ in range(4)]
    groups = feats.shape[0]
    state = QubitGroupState.zeros(groups)
    for q in range(4):
        state = apply_gate(state, GateUnitary("ry", (q,), feats[:, q]))
    for q in range(4):
        state = apply_gate(state, GateUnitary("ry", (q,), float(angles[0][q])))
    state = apply_gate(state, GateUnitary("xx", (0, 1), float(angles[1][0])))
    state = apply_gate(state, GateUnitary("xx", (2, 3), float(angles[1][1])))
    for q in range(4):
        state = apply_gate(state, GateUnitary("rx", (q,), float(angles[2][q])))
    state = apply_gate(state, GateUnitary("xx", (1, 2), float(angles[1][2])))
    state = apply_gate(state, GateUnitary("xx", (3, 0), float(angles[1][3])))
    for q in range(4):
        state = apply_gate(state, GateUnitary("ry", (q,), float(angles[3][q])))
    for trip in ((0, 1, 2), (1, 2, 3), (2, 3, 0), (3, 0, 1)):
        state = apply_gate(state, GateUnitary("ccnot", trip))
    assert np.abs(state.norms() - 1.0).max() < 1e-9


def test_fe_expectations_bounded(rng):
    feats = rng.uniform(-3, 3, (8, 4))
    angles = [rng.uniform(-np.pi, np.pi, 4) for _ in range(4)]
    out = quantum_fe(feats, *angles)
    assert out.data.shape == (8, 2)
    assert np.all(np.abs(out.data) <= 1 + 1e-12)


def test_fe_angle_gradients_match_fd(rng):
    feats = rng.uniform(-2, 2, (5, 4))
    families = {name: rng.uniform(-np.pi, np.pi, 4)
                for name in ("rho", "omega", "theta", "phi")}

    def run(**overrides):
        vals = {k: overrides.get(k, families[k]) for k in families}
        tensors = {k: Tensor(v) for k, v in vals.items()}
        out = quantum_fe(feats, tensors["rho"], tensors["omega"],
                         tensors["theta"], tensors["phi"])
        return T.tsum(out), tensors

    loss, tensors = run()
    backward(loss)
    for name in families:
        analytic = tensors[name].grad.copy()
        numeric = fd_grad(lambda: run()[0].item(), families[name])
        assert rel_err(analytic, numeric) < 1e-4, name


# ---------------------------------------------------------------------------
# layer planning and forward shapes


def test_plan_reference_sizes_256():
    plan = plan_layers(256, 256)
    assert plan.strict
    assert plan.fe_grid == (54, 54)
    assert plan.up_targets == ((120, 120), (252, 252))


def test_plan_small_inputs_preserve_mode():
    plan = plan_layers(32, 32)
    assert not plan.strict
    assert plan.fe_grid == (8, 8)


def test_plan_rejects_tiny_inputs():
    with pytest.raises(PrismShapeError):
        plan_layers(8, 8)


def test_forward_shapes_and_dc_output_256():
    # reference arithmetic: compression to 8x54x54, output doubles the bands
    params = init_prism_params(4, np.random.default_rng(0))
    zm = ImageCube(np.random.default_rng(1).uniform(0, 1, (4, 256, 256)))
    out = prism_forward(params, zm)
    assert out.data.shape == (8, 256, 256)


def test_forward_split_identity_preclamp(rng):
    params = init_prism_params(4, np.random.default_rng(2))
    zm = ImageCube(rng.uniform(0, 1, (4, 32, 32)))
    pre = prism_forward(params, zm, pre_clamp=True)
    d = build_spectral_response(4, 2)
    assert np.abs(d.apply(pre.data) - zm.data).max() < 1e-12


def test_forward_clamped_nonnegative(rng):
    params = init_prism_params(4, np.random.default_rng(3))
    zm = ImageCube(rng.uniform(0, 1, (4, 32, 32)))
    out = prism_forward(params, zm)
    assert out.data.min() >= 0


def test_forward_no_spectrum_shaping_width(rng):
    params = init_prism_params(4, np.random.default_rng(4), spectrum_shaping=False)
    zm = ImageCube(rng.uniform(0, 1, (4, 32, 32)))
    out = prism_forward(params, zm)
    assert out.data.shape == (8, 32, 32)


# ---------------------------------------------------------------------------
# total variation


def test_tv_constant_cube_zero():
    cube = ImageCube(np.full((3, 5, 5), 2.2))
    assert tv_spa(cube) == 0.0
    assert tv_spe(cube) == 0.0


def test_tv_spa_step_edge():
    # a vertical step of height h spanning H rows: one |h| per row
    h, rows = 1.7, 6
    img = np.zeros((1, rows, 8))
    img[:, :, 4:] = h
    assert abs(tv_spa(ImageCube(img)) - h * rows) < 1e-12


def test_tv_spe_constant_band_offset():
    base = np.random.default_rng(0).uniform(0, 1, (1, 4, 5))
    c = 0.6
    cube = ImageCube(np.concatenate([base, base + c], axis=0))
    assert abs(tv_spe(cube) - c * 20) < 1e-12


# ---------------------------------------------------------------------------
# loss and training


def test_loss_alpha_scales_spectral_tv(rng):
    params = init_prism_params(4, np.random.default_rng(5))
    zm = ImageCube(rng.uniform(0, 1, (4, 16, 16)))
    anchor = ImageCube(rng.uniform(0, 1, (8, 16, 16)))
    l1, _, t1 = prism_loss(params, zm, anchor, lam=0.1, alpha=1e-4)
    l2, _, t2 = prism_loss(params, zm, anchor, lam=0.1, alpha=2e-4)
    assert abs((l2.item() - l1.item()) - 0.1 * 1e-4 * t1.tv_spectral) < 1e-9
    assert t1.tv_spectral == t2.tv_spectral


def test_loss_self_anchor_no_gradient_without_clamping(rng):
    # anchored at its own pre-clamp output and away from active clamps, the
    # deviation terms vanish
    params = init_prism_params(4, np.random.default_rng(6))
    zm = ImageCube(rng.uniform(0.2, 1.0, (4, 16, 16)))
    anchor = prism_forward(params, zm)
    _, _, terms = prism_loss(params, zm, anchor)
    assert terms.anchor == 0.0


def test_train_smoke_loss_decreases(rng):
    params = init_prism_params(4, np.random.default_rng(7))
    zm = ImageCube(rng.uniform(0, 1, (4, 32, 32)))
    anchor = ImageCube(rng.uniform(0, 1, (8, 32, 32)))
    params, trace = train_prism(params, zm, anchor, epochs=12)
    losses = [row["loss"] for row in trace]
    assert all(np.isfinite(losses))
    assert losses[-1] <= losses[0]


def test_train_deterministic(rng):
    zm = ImageCube(rng.uniform(0, 1, (4, 16, 16)))
    anchor = ImageCube(rng.uniform(0, 1, (8, 16, 16)))

    def run():
        params = init_prism_params(4, np.random.default_rng(8))
        _, trace = train_prism(params, zm, anchor, epochs=5)
        return [row["loss"] for row in trace]

    assert run() == run()


def test_full_loss_gradcheck_sampled(rng):
    # analytic vs central differences on a random sample of parameters
    params = init_prism_params(4, np.random.default_rng(9))
    zm = ImageCube(rng.uniform(0, 1, (4, 16, 16)))
    anchor = ImageCube(rng.uniform(0, 1, (8, 16, 16)))
    loss, leaves, _ = prism_loss(params, zm, anchor)
    backward(loss)
    named = params.named()
    picks = [("rho", (1,)), ("omega", (2,)), ("theta", (0,)), ("phi", (3,)),
             ("enc0.kernel", (0, 0, 1, 1)), ("enc4.kernel", (3, 2, 0, 2)),
             ("dec7.kernel", (1, 3, 2, 0)), ("dec0.bias", (5,)),
             ("enc8.bias", (2,))]
    step = 1e-4
    for name, idx in picks:
        arr = named[name]
        orig = arr[idx]
        arr[idx] = orig + step
        hi = prism_loss(params, zm, anchor)[0].item()
        arr[idx] = orig - step
        lo = prism_loss(params, zm, anchor)[0].item()
        arr[idx] = orig
        numeric = (hi - lo) / (2 * step)
        analytic = leaves[name].grad[idx]
        err = abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))
        assert err < 1e-3, f"{name}{idx}: {err:.2e}"


# ---------------------------------------------------------------------------
# persistence


def test_params_roundtrip(tmp_path):
    params = init_prism_params(4, np.random.default_rng(10))
    save_params(params, tmp_path / "weights")
    loaded = load_params(tmp_path / "weights")
    for k, v in params.named().items():
        assert np.array_equal(v, loaded.named()[k]), k
    assert loaded.in_bands == 4 and loaded.out_bands == 4
