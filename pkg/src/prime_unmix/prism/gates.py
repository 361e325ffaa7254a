"""Classical state-vector simulation of the 4-qubit register.

Amplitudes are stored as paired real tensors (real, imaginary) of shape
(groups, 16) so the autodiff engine differentiates through every gate.
Basis convention: qubit 0 is the most significant bit of the state index,
i.e. index = 8*q0 + 4*q1 + 2*q2 + q3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensorops as T
from ..tensorops import Tensor

__all__ = ["GateUnitary", "QubitGroupState", "gate_unitary", "lift_unitary",
           "apply_gate", "expect_z"]

N_QUBITS = 4
DIM = 16

_PARAMETRIC = {"rx", "ry", "xx"}
_FIXED = {"z", "not", "ccnot"}


@dataclass(frozen=True)
class GateUnitary:
    """A gate kind, its target qubit(s), and an angle when parametric.

    Kinds: "rx", "ry" (single-qubit rotations), "xx" (two-qubit Ising
    coupling), "z" (Pauli-Z), "not" (Pauli-X), "ccnot" (Toffoli with
    positive first control and open second control).
    """

    kind: str
    targets: tuple
    angle: object = None  # float, (groups,) array, or Tensor

    def __post_init__(self):
        if self.kind not in _PARAMETRIC | _FIXED:
            raise ValueError(f"unknown gate kind '{self.kind}'")
        ts = tuple(self.targets)
        if len(set(ts)) != len(ts) or any(not 0 <= q < N_QUBITS for q in ts):
            raise ValueError(f"invalid target qubits {ts}")
        expected = {"rx": 1, "ry": 1, "z": 1, "not": 1, "xx": 2, "ccnot": 3}
        if len(ts) != expected[self.kind]:
            raise ValueError(f"gate '{self.kind}' takes {expected[self.kind]} "
                             f"target(s), got {ts}")
        if self.kind in _PARAMETRIC and self.angle is None:
            raise ValueError(f"gate '{self.kind}' needs an angle")
        object.__setattr__(self, "targets", ts)


def gate_unitary(kind: str, angle: float | None = None) -> np.ndarray:
    """Dense complex unitary of a gate on its own qubits."""
    if kind in _PARAMETRIC:
        d = np.cos(angle / 2.0)
        g = np.sin(angle / 2.0)
    if kind == "rx":
        return np.array([[d, -1j * g], [-1j * g, d]])
    if kind == "ry":
        return np.array([[d, -g], [g, d]], dtype=complex)
    if kind == "xx":
        u = np.eye(4, dtype=complex) * d
        u += -1j * g * np.fliplr(np.eye(4))
        return u
    if kind == "z":
        return np.diag([1.0, -1.0]).astype(complex)
    if kind == "not":
        return np.array([[0, 1], [1, 0]], dtype=complex)
    if kind == "ccnot":
        # block-diagonal: identity, identity, X, identity over |abc> blocks
        u = np.eye(8, dtype=complex)
        u[4, 4] = u[5, 5] = 0.0
        u[4, 5] = u[5, 4] = 1.0
        return u
    raise ValueError(f"unknown gate kind '{kind}'")


def lift_unitary(u: np.ndarray, targets, n_qubits: int = N_QUBITS) -> np.ndarray:
    """Embed a k-qubit unitary on the given targets into the full register."""
    targets = tuple(targets)
    k = len(targets)
    dim = 2 ** n_qubits
    rest = [q for q in range(n_qubits) if q not in targets]
    full = np.zeros((dim, dim), dtype=complex)

    def compose(sub_bits, rest_bits):
        idx = 0
        for q, bit in zip(targets, sub_bits):
            idx |= bit << (n_qubits - 1 - q)
        for q, bit in zip(rest, rest_bits):
            idx |= bit << (n_qubits - 1 - q)
        return idx

    for a in range(2 ** k):
        abits = [(a >> (k - 1 - t)) & 1 for t in range(k)]
        for b in range(2 ** k):
            if u[a, b] == 0:
                continue
            bbits = [(b >> (k - 1 - t)) & 1 for t in range(k)]
            for rv in range(2 ** len(rest)):
                rbits = [(rv >> (len(rest) - 1 - t)) & 1 for t in range(len(rest))]
                full[compose(abits, rbits), compose(bbits, rbits)] = u[a, b]
    return full


def _bit(index: int, qubit: int) -> int:
    return (index >> (N_QUBITS - 1 - qubit)) & 1


def _flip_perm(qubits) -> np.ndarray:
    mask = 0
    for q in qubits:
        mask |= 1 << (N_QUBITS - 1 - q)
    return np.arange(DIM) ^ mask


@dataclass
class QubitGroupState:
    """Batched 4-qubit state: real and imaginary parts, shape (groups, 16)."""

    re: Tensor
    im: Tensor

    @staticmethod
    def zeros(groups: int) -> "QubitGroupState":
        re = np.zeros((groups, DIM))
        re[:, 0] = 1.0
        return QubitGroupState(Tensor(re), Tensor(np.zeros((groups, DIM))))

    @property
    def groups(self) -> int:
        return self.re.data.shape[0]

    def amplitudes(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def norms(self) -> np.ndarray:
        a = self.amplitudes()
        return np.sqrt(np.sum(a.real ** 2 + a.imag ** 2, axis=1))


def _angle_tensors(angle, groups):
    """cos/sin of half the angle, shaped to broadcast over (groups, 16)."""
    if not isinstance(angle, Tensor):
        angle = Tensor(np.asarray(angle, dtype=np.float64))
    if angle.data.ndim == 0 or angle.data.shape == (1,):
        half = T.reshape(angle, (1, 1))
    elif angle.data.shape == (groups,):
        half = T.reshape(angle, (groups, 1))
    elif angle.data.shape in ((1, 1), (groups, 1)):
        half = angle
    else:
        raise ValueError(f"angle shape {angle.data.shape} not broadcastable")
    half = T.scale(half, 0.5)
    return T.cos(half), T.sin(half)


def apply_gate(state: QubitGroupState, gate: GateUnitary) -> QubitGroupState:
    """Multiply the state by the gate lifted onto its target qubits.

    Parametric gates reduce to delta*a + gamma*(signed permutation of a),
    which keeps the whole circuit on the autodiff tape.
    """
    re, im = state.re, state.im
    kind = gate.kind

    if kind == "ry":
        q = gate.targets[0]
        d, g = _angle_tensors(gate.angle, state.groups)
        perm = _flip_perm([q])
        sign = Tensor(np.array([1.0 if _bit(i, q) else -1.0 for i in range(DIM)]))
        new_re = T.mul(d, re) + T.mul(g, T.mul(sign, T.gather(re, perm, axis=1)))
        new_im = T.mul(d, im) + T.mul(g, T.mul(sign, T.gather(im, perm, axis=1)))
        return QubitGroupState(new_re, new_im)

    if kind in ("rx", "xx"):
        qs = gate.targets
        d, g = _angle_tensors(gate.angle, state.groups)
        perm = _flip_perm(qs)
        # delta*a - i*gamma*a[perm]
        new_re = T.mul(d, re) + T.mul(g, T.gather(im, perm, axis=1))
        new_im = T.mul(d, im) - T.mul(g, T.gather(re, perm, axis=1))
        return QubitGroupState(new_re, new_im)

    if kind == "not":
        perm = _flip_perm(gate.targets)
        return QubitGroupState(T.gather(re, perm, axis=1),
                               T.gather(im, perm, axis=1))

    if kind == "z":
        q = gate.targets[0]
        sign = Tensor(np.array([-1.0 if _bit(i, q) else 1.0 for i in range(DIM)]))
        return QubitGroupState(T.mul(sign, re), T.mul(sign, im))

    if kind == "ccnot":
        c, o, t = gate.targets
        perm = np.arange(DIM)
        for i in range(DIM):
            if _bit(i, c) == 1 and _bit(i, o) == 0:
                perm[i] = i ^ (1 << (N_QUBITS - 1 - t))
        # new[i] = a[perm[i]] since the permutation is an involution
        return QubitGroupState(T.gather(re, perm, axis=1),
                               T.gather(im, perm, axis=1))

    raise ValueError(f"unknown gate kind '{kind}'")


def expect_z(state: QubitGroupState, qubit: int) -> Tensor:
    """Pauli-Z expectation per group: sum of signed probabilities."""
    sign = Tensor(np.array([-1.0 if _bit(i, qubit) else 1.0 for i in range(DIM)]))
    prob = T.square(state.re) + T.square(state.im)
    return T.tsum(T.mul(sign, prob), axis=1)
