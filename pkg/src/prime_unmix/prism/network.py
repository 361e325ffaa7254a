"""The virtual prism network: a compressing convolutional encoder, the
4-qubit feature-extraction circuit, a transposed-convolution decoder, and
the spectrum-shaping stage that interleaves learned even half-bands with
their residual odd counterparts.

Layer stack (channels fixed at 8, kernels 3x3, stride 1):

    encoder   CB(8,3,1), CB(8,3,0) x2 | pool, CB(8,3,0) x3 | pool, CB(8,3,0) x3
    circuit   angle embed, RY, XX(0,1)(2,3), RX, XX(1,2)(3,0), RY,
              CCNOT(0,1,2)(1,2,3)(2,3,0)(3,0,1), Pauli-Z readout
    decoder   TCB(8,3) x3, up | TCB(8,3) x3, up | TCB(8,3), TCB(out,3)
    shaping   odd = input - even, interleave, clamp >= 0

For a 4x256x256 input this reproduces the reference sizes exactly
(8x252x252 -> 8x120x120 -> 8x54x54 and back). Smaller inputs where the
unpadded arithmetic underflows switch every convolution to its
shape-preserving padding so the stack still round-trips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensorops as T
from ..errors import UnmixError
from ..mixmodel import ImageCube
from ..tensorops import AdamState, Tensor, adam_step
from .gates import GateUnitary, QubitGroupState, apply_gate, expect_z

__all__ = [
    "PrismParams", "PrismShapeError", "LayerPlan", "plan_layers",
    "init_prism_params", "quantum_fe", "prism_forward",
    "tv_spa", "tv_spe", "prism_loss", "train_prism",
    "save_params", "load_params",
]

CHANNELS = 8
KSIZE = 3
LEAK = 0.2
ENC_CONVS = 9   # 3 per module
DEC_CONVS = 8   # 3 + 3 + 2


class PrismShapeError(UnmixError):
    """Input spatial dims cannot pass the fixed pooling depth."""


@dataclass(frozen=True)
class LayerPlan:
    """Resolved spatial-size chain for one input size."""

    enc_pads: tuple          # padding per encoder conv
    dec_crops: tuple         # crop per decoder transposed conv
    up_targets: tuple        # output size (h, w) of the two upsample stages
    fe_grid: tuple           # (h, w) entering the quantum stage
    strict: bool             # True when the unpadded reference arithmetic fits


def _chain(h, w, pads):
    """Spatial sizes through conv/pool stages; None where invalid."""
    sizes = []
    k = 0
    for stage in range(3):
        if stage > 0:
            if h < 2 or w < 2:
                return None, None
            h, w = h // 2, w // 2
        for _ in range(3):
            p = pads[k]
            k += 1
            h, w = h - KSIZE + 1 + 2 * p, w - KSIZE + 1 + 2 * p
            if h < 1 or w < 1:
                return None, None
        sizes.append((h, w))
    return sizes, (h, w)


def plan_layers(height: int, width: int) -> LayerPlan:
    if height < 16 or width < 16:
        raise PrismShapeError(
            f"spatial dims {height}x{width} too small for two pooling stages "
            f"(need at least 16)")
    strict_pads = (1, 0, 0, 0, 0, 0, 0, 0, 0)
    sizes, _ = _chain(height, width, strict_pads)
    strict = sizes is not None
    # strict mode also needs the pools to hit even sizes so the decoder
    # mirror is exact
    if strict:
        h1, w1 = sizes[0]
        h2, w2 = sizes[1]
        strict = h1 % 2 == 0 and w1 % 2 == 0 and h2 % 2 == 0 and w2 % 2 == 0
    pads = strict_pads if strict else (1,) * ENC_CONVS
    sizes, fe = _chain(height, width, pads)
    if sizes is None:
        raise PrismShapeError(
            f"spatial dims {height}x{width} too small for the layer stack")
    # decoder crops mirror the encoder paddings: crop 1 preserves, crop 0
    # grows by 2 and undoes an unpadded conv
    if strict:
        dec_crops = (0,) * DEC_CONVS
    else:
        dec_crops = (1,) * DEC_CONVS
    up_targets = (sizes[1], sizes[0])
    return LayerPlan(enc_pads=pads, dec_crops=dec_crops,
                     up_targets=up_targets, fe_grid=fe, strict=strict)


@dataclass
class PrismParams:
    """All trainable prism weights.

    Convolution kernels/biases for the encoder and decoder plus the four
    quantum angle families (4 angles each, 16 in total): rho for the first
    rotation-Y layer, omega split two-per-Ising-XX layer, theta for the
    rotation-X layer, phi for the final rotation-Y layer.
    """

    in_bands: int
    out_bands: int
    enc_kernels: list = field(default_factory=list)
    enc_biases: list = field(default_factory=list)
    dec_kernels: list = field(default_factory=list)
    dec_biases: list = field(default_factory=list)
    rho: np.ndarray = None
    omega: np.ndarray = None
    theta: np.ndarray = None
    phi: np.ndarray = None

    def named(self) -> dict:
        out = {}
        for i, (k, b) in enumerate(zip(self.enc_kernels, self.enc_biases)):
            out[f"enc{i}.kernel"] = k
            out[f"enc{i}.bias"] = b
        for i, (k, b) in enumerate(zip(self.dec_kernels, self.dec_biases)):
            out[f"dec{i}.kernel"] = k
            out[f"dec{i}.bias"] = b
        out["rho"] = self.rho
        out["omega"] = self.omega
        out["theta"] = self.theta
        out["phi"] = self.phi
        return out

    def copy(self) -> "PrismParams":
        p = PrismParams(self.in_bands, self.out_bands)
        p.enc_kernels = [k.copy() for k in self.enc_kernels]
        p.enc_biases = [b.copy() for b in self.enc_biases]
        p.dec_kernels = [k.copy() for k in self.dec_kernels]
        p.dec_biases = [b.copy() for b in self.dec_biases]
        p.rho = self.rho.copy()
        p.omega = self.omega.copy()
        p.theta = self.theta.copy()
        p.phi = self.phi.copy()
        return p


def init_prism_params(p_bands: int, rng, spectrum_shaping: bool = True,
                      gamma: int = 2) -> PrismParams:
    """Fresh parameters: fan-in-scaled uniform kernels, zero biases, and
    quantum angles uniform on (-pi, pi).

    With spectrum shaping the decoder emits the P even half-bands; without
    it the final layer widens to all gamma*P bands.
    """
    out_bands = p_bands if spectrum_shaping else gamma * p_bands
    params = PrismParams(in_bands=p_bands, out_bands=out_bands)

    def kernel(cout, cin):
        bound = np.sqrt(6.0 / (cin * KSIZE * KSIZE))
        return rng.uniform(-bound, bound, size=(cout, cin, KSIZE, KSIZE))

    cin = p_bands
    for _ in range(ENC_CONVS):
        params.enc_kernels.append(kernel(CHANNELS, cin))
        params.enc_biases.append(np.zeros(CHANNELS))
        cin = CHANNELS
    douts = [CHANNELS] * (DEC_CONVS - 1) + [out_bands]
    cin = CHANNELS // 2  # quantum stage halves the channel count
    for cout in douts:
        params.dec_kernels.append(kernel(cout, cin))
        params.dec_biases.append(np.zeros(cout))
        cin = cout
    params.rho = rng.uniform(-np.pi, np.pi, size=4)
    params.omega = rng.uniform(-np.pi, np.pi, size=4)
    params.theta = rng.uniform(-np.pi, np.pi, size=4)
    params.phi = rng.uniform(-np.pi, np.pi, size=4)
    return params


# ---------------------------------------------------------------------------
# quantum feature extraction


def _angle_at(angles, i):
    if isinstance(angles, Tensor):
        return T.gather(angles, np.array([i]), axis=0)
    return float(angles[i])


def quantum_fe(features, rho, omega, theta, phi):
    """Run the 4-qubit circuit on (groups, 4) features; returns (groups, 2).

    Per group: angle-embed each feature with a rotation-Y on its qubit,
    apply the trainable rotation/Ising stack, entangle with the four
    open-control Toffolis, then read Pauli-Z expectations max-pooled over
    qubit pairs.
    """
    if not isinstance(features, Tensor):
        features = Tensor(features)
    groups = features.data.shape[0]
    state = QubitGroupState.zeros(groups)
    for q in range(4):
        x_q = T.gather(features, np.array([q]), axis=1)  # (groups, 1)
        state = apply_gate(state, GateUnitary("ry", (q,), x_q))
    for q in range(4):
        state = apply_gate(state, GateUnitary("ry", (q,), _angle_at(rho, q)))
    state = apply_gate(state, GateUnitary("xx", (0, 1), _angle_at(omega, 0)))
    state = apply_gate(state, GateUnitary("xx", (2, 3), _angle_at(omega, 1)))
    for q in range(4):
        state = apply_gate(state, GateUnitary("rx", (q,), _angle_at(theta, q)))
    state = apply_gate(state, GateUnitary("xx", (1, 2), _angle_at(omega, 2)))
    state = apply_gate(state, GateUnitary("xx", (3, 0), _angle_at(omega, 3)))
    for q in range(4):
        state = apply_gate(state, GateUnitary("ry", (q,), _angle_at(phi, q)))
    for trip in ((0, 1, 2), (1, 2, 3), (2, 3, 0), (3, 0, 1)):
        state = apply_gate(state, GateUnitary("ccnot", trip))
    z = [T.reshape(expect_z(state, q), (groups, 1)) for q in range(4)]
    pooled = T.concat([T.maximum(z[0], z[1]), T.maximum(z[2], z[3])], axis=1)
    return pooled


# ---------------------------------------------------------------------------
# forward pass


def _cb(x, kernel, bias, pad):
    return T.leaky_relu(T.conv2d(x, kernel, bias, pad=pad), LEAK)


def _tcb(x, kernel, bias, crop):
    return T.leaky_relu(T.conv2d_transpose(x, kernel, bias, crop=crop), LEAK)


def _forward_tape(zm_t: Tensor, plan: LayerPlan, tensors: dict):
    """Full prism forward on the tape; returns the decoded half-bands."""
    x = zm_t
    k = 0
    for stage in range(3):
        if stage > 0:
            x = T.maxpool2(x)
        for _ in range(3):
            x = _cb(x, tensors[f"enc{k}.kernel"], tensors[f"enc{k}.bias"],
                    plan.enc_pads[k])
            k += 1
    h, w = plan.fe_grid
    # cross-feature grouping: the 8 channels split into 2 registers of 4
    feats = T.reshape(T.transpose(T.reshape(x, (2, 4, h, w)), (0, 2, 3, 1)),
                      (2 * h * w, 4))
    measured = quantum_fe(feats, tensors["rho"], tensors["omega"],
                          tensors["theta"], tensors["phi"])
    x = T.reshape(T.transpose(T.reshape(measured, (2, h, w, 2)), (0, 3, 1, 2)),
                  (4, h, w))
    k = 0
    for stage in range(3):
        n_layers = 3 if stage < 2 else 2
        for _ in range(n_layers):
            x = _tcb(x, tensors[f"dec{k}.kernel"], tensors[f"dec{k}.bias"],
                     plan.dec_crops[k])
            k += 1
        if stage < 2:
            th, tw = plan.up_targets[stage]
            x = T.upsample_bilinear(x, th, tw)
    return x


def _shape_tape(zm_t: Tensor, decoded: Tensor, spectrum_shaping: bool,
                p_bands: int):
    """Spectrum shaping: subtract, interleave, project non-negative."""
    if not spectrum_shaping:
        return T.relu(decoded), decoded
    h, w = zm_t.data.shape[1], zm_t.data.shape[2]
    even = decoded
    odd = T.sub(zm_t, even)
    pairs = T.concat([T.reshape(odd, (p_bands, 1, h, w)),
                      T.reshape(even, (p_bands, 1, h, w))], axis=1)
    pre = T.reshape(pairs, (2 * p_bands, h, w))
    return T.relu(pre), pre


def prism_forward(params: PrismParams, zm: ImageCube,
                  pre_clamp: bool = False) -> ImageCube:
    """Map the observed cube to the virtual split cube.

    With `pre_clamp` the non-negative projection is skipped and the exact
    interleaved half-bands are returned (their block sums reproduce the
    input bit-for-bit when spectrum shaping is on).
    """
    if zm.bands != params.in_bands:
        raise UnmixError(f"prism built for {params.in_bands} bands, "
                         f"cube has {zm.bands}")
    plan = plan_layers(zm.height, zm.width)
    tensors = {k: Tensor(v) for k, v in params.named().items()}
    zm_t = Tensor(zm.data)
    decoded = _forward_tape(zm_t, plan, tensors)
    ss = params.out_bands == params.in_bands
    out, pre = _shape_tape(zm_t, decoded, ss, params.in_bands)
    data = pre.data if pre_clamp else out.data
    return ImageCube(data.copy(), signed=pre_clamp)


# ---------------------------------------------------------------------------
# total variation


def tv_spa(z: ImageCube) -> float:
    """Band-wise l1 norm of the spatial forward differences."""
    d = z.data
    return float(np.abs(d[:, 1:, :] - d[:, :-1, :]).sum()
                 + np.abs(d[:, :, 1:] - d[:, :, :-1]).sum())


def tv_spe(z: ImageCube) -> float:
    """Pixel-wise l1 norm of the spectral forward differences."""
    d = z.data
    return float(np.abs(d[1:] - d[:-1]).sum())


def _tv_spa_tape(x: Tensor) -> Tensor:
    dv = T.sub(T.slice_(x, (slice(None), slice(1, None), slice(None))),
               T.slice_(x, (slice(None), slice(None, -1), slice(None))))
    dh = T.sub(T.slice_(x, (slice(None), slice(None), slice(1, None))),
               T.slice_(x, (slice(None), slice(None), slice(None, -1))))
    return T.tsum(T.abs_(dv)) + T.tsum(T.abs_(dh))


def _tv_spe_tape(x: Tensor) -> Tensor:
    ds = T.sub(T.slice_(x, (slice(1, None),)), T.slice_(x, (slice(None, -1),)))
    return T.tsum(T.abs_(ds))


def _sumsq(x: Tensor) -> Tensor:
    return T.tsum(T.square(x))


@dataclass
class PrismLossTerms:
    cycle: float      # || Zm - D f(Zm) ||_F^2
    anchor: float     # || f(Zm) - Zh ||_F^2
    tv_spatial: float
    tv_spectral: float
    lam: float
    alpha: float

    @property
    def total(self) -> float:
        return (self.cycle + self.anchor
                + self.lam * (self.tv_spatial + self.alpha * self.tv_spectral))


def _build_loss(in_bands, out_bands, leaves, zm, anchor, lam, alpha, plan):
    """Assemble the subproblem loss on the tape from existing leaf tensors."""
    zm_t = Tensor(zm.data)
    decoded = _forward_tape(zm_t, plan, leaves)
    f_out, _ = _shape_tape(zm_t, decoded, out_bands == in_bands, in_bands)
    m = f_out.data.shape[0]
    if anchor.data.shape != f_out.data.shape:
        raise UnmixError(f"anchor shape {anchor.data.shape} does not match "
                         f"prism output {f_out.data.shape}")
    folded = T.tsum(T.reshape(f_out, (m // 2, 2) + f_out.data.shape[1:]),
                    axis=1)
    cycle = _sumsq(T.sub(zm_t, folded))
    anc = _sumsq(T.sub(f_out, Tensor(anchor.data)))
    tvs = _tv_spa_tape(f_out)
    tve = _tv_spe_tape(f_out)
    loss = cycle + anc + T.scale(tvs + T.scale(tve, alpha), lam)
    terms = PrismLossTerms(cycle=cycle.item(), anchor=anc.item(),
                           tv_spatial=tvs.item(), tv_spectral=tve.item(),
                           lam=lam, alpha=alpha)
    return loss, terms


def prism_loss(params: PrismParams, zm: ImageCube, anchor: ImageCube,
               lam: float = 0.1, alpha: float = 1e-4):
    """Build the training loss on the tape.

    Returns (loss tensor, leaf tensors dict, term breakdown).
    """
    plan = plan_layers(zm.height, zm.width)
    leaves = {k: Tensor(v) for k, v in params.named().items()}
    loss, terms = _build_loss(params.in_bands, params.out_bands, leaves,
                              zm, anchor, lam, alpha, plan)
    return loss, leaves, terms


def train_prism(params: PrismParams, zm: ImageCube, anchor: ImageCube,
                epochs: int, lr: float = 0.005, lam: float = 0.1,
                alpha: float = 1e-4):
    """Full-batch Adam on the single (input, anchor) pair.

    Mutates `params` in place (warm start across outer iterations) and
    returns (params, trace) where trace rows are per-epoch loss terms.
    """
    names = sorted(params.named().keys())
    leaves = {k: Tensor(v) for k, v in params.named().items()}
    state = AdamState(leaves, lr=lr)
    plan = plan_layers(zm.height, zm.width)
    trace = []
    for epoch in range(epochs):
        loss, terms = _build_loss(params.in_bands, params.out_bands, leaves,
                                  zm, anchor, lam, alpha, plan)
        if not np.isfinite(loss.item()):
            raise UnmixError(f"non-finite training loss at epoch {epoch}")
        trace.append({"epoch": epoch, "loss": loss.item(),
                      "cycle": terms.cycle, "anchor": terms.anchor,
                      "tv_spa": terms.tv_spatial, "tv_spe": terms.tv_spectral})
        T.backward(loss)
        grads = {k: leaves[k].grad for k in names}
        adam_step(state, leaves, grads)
    # push the optimized leaves back into the parameter struct
    final = {k: leaves[k].data for k in leaves}
    for i in range(len(params.enc_kernels)):
        params.enc_kernels[i] = final[f"enc{i}.kernel"]
        params.enc_biases[i] = final[f"enc{i}.bias"]
    for i in range(len(params.dec_kernels)):
        params.dec_kernels[i] = final[f"dec{i}.kernel"]
        params.dec_biases[i] = final[f"dec{i}.bias"]
    params.rho = final["rho"]
    params.omega = final["omega"]
    params.theta = final["theta"]
    params.phi = final["phi"]
    return params, trace


# ---------------------------------------------------------------------------
# persistence: flat little-endian float64 record + JSON manifest


def save_params(params: PrismParams, path):
    """Write `<path>.json` (names/shapes) and `<path>.bin` (f64le record)."""
    path = Path(path)
    named = params.named()
    names = sorted(named.keys())
    manifest = {
        "magic": "PRIME-PRISM",
        "dtype": "f64le",
        "in_bands": params.in_bands,
        "out_bands": params.out_bands,
        "tensors": [{"name": k, "shape": list(named[k].shape)} for k in names],
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    flat = np.concatenate([named[k].ravel() for k in names])
    flat.astype("<f8").tofile(path.with_suffix(".bin"))


def load_params(path) -> PrismParams:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("magic") != "PRIME-PRISM":
        raise UnmixError(f"not a prism parameter record: {path}")
    flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    named = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        named[entry["name"]] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise UnmixError(f"parameter record size mismatch in {path}")
    params = PrismParams(in_bands=manifest["in_bands"],
                         out_bands=manifest["out_bands"])
    n_enc = sum(1 for k in named if k.startswith("enc") and k.endswith("kernel"))
    n_dec = sum(1 for k in named if k.startswith("dec") and k.endswith("kernel"))
    params.enc_kernels = [named[f"enc{i}.kernel"] for i in range(n_enc)]
    params.enc_biases = [named[f"enc{i}.bias"] for i in range(n_enc)]
    params.dec_kernels = [named[f"dec{i}.kernel"] for i in range(n_dec)]
    params.dec_biases = [named[f"dec{i}.bias"] for i in range(n_dec)]
    params.rho = named["rho"]
    params.omega = named["omega"]
    params.theta = named["theta"]
    params.phi = named["phi"]
    return params
