"""Truncated bosonic modes on the ordered composite Hilbert space |Q1, C, Q2>.

Basis states are labelled ``(n1, nc, n2)`` with Q1 first, the coupler in the
middle and Q2 last, so the string label ``"101"`` means one excitation in each
qubit and the coupler in its ground state.  Indexing is row-major in that
fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np

MODE_NAMES = ("q1", "c", "q2")


@dataclass(frozen=True)
class ModeLayout:
    """Per-mode truncation levels of the composite space.

    The default keeps three levels per mode: the controlled-phase mechanism
    needs the second excited state, and a fourth level can be enabled for
    truncation-sensitivity checks.
    """

    dims: tuple[int, ...] = (3, 3, 3)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if any(d < 2 for d in self.dims):
            raise ValueError(f"every mode needs at least 2 levels, got {self.dims}")

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def basis_index(self, labels) -> int:
        """Row-major index of the basis state with the given occupation labels."""
        labels = tuple(int(n) for n in labels)
        if len(labels) != self.n_modes:
            raise ValueError(f"expected {self.n_modes} labels, got {labels}")
        idx = 0
        for n, d in zip(labels, self.dims):
            if not 0 <= n < d:
                raise IndexError(f"label {labels} out of range for dims {self.dims}")
            idx = idx * d + n
        return idx

    def basis_labels(self, index: int) -> tuple[int, ...]:
        """Inverse of :meth:`basis_index`."""
        if not 0 <= index < self.dim:
            raise IndexError(f"basis index {index} out of range for dim {self.dim}")
        labels = []
        for d in reversed(self.dims):
            labels.append(index % d)
            index //= d
        return tuple(reversed(labels))

    def all_labels(self):
        """All occupation labels in index order."""
        return [tuple(t) for t in product(*(range(d) for d in self.dims))]

    def basis_state(self, labels) -> np.ndarray:
        """Unit vector for the bare basis state with the given labels."""
        vec = np.zeros(self.dim, dtype=complex)
        vec[self.basis_index(labels)] = 1.0
        return vec


def parse_label(label, layout: ModeLayout) -> tuple[int, ...]:
    """Accept ``"101"`` or ``(1, 0, 1)`` style labels."""
    if isinstance(label, str):
        labels = tuple(int(ch) for ch in label)
    else:
        labels = tuple(int(n) for n in label)
    if len(labels) != layout.n_modes:
        raise ValueError(f"label {label!r} does not match {layout.n_modes} modes")
    return labels


def mode_operators(dim: int):
    """Lowering, raising and number operators of a single truncated mode.

    The lowering operator carries sqrt(n) on the first superdiagonal; the
    raising operator is its adjoint and number = raising @ lowering.
    """
    if dim < 2:
        raise ValueError(f"mode dimension must be >= 2, got {dim}")
    lowering = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        lowering[n - 1, n] = np.sqrt(n)
    raising = lowering.conj().T
    number = raising @ lowering
    return lowering, raising, number


def embed(op: np.ndarray, mode_index: int, layout: ModeLayout) -> np.ndarray:
    """Tensor-embed a single-mode operator: I x ... x op x ... x I."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (layout.dims[mode_index], layout.dims[mode_index]):
        raise ValueError(
            f"operator shape {op.shape} does not match mode {mode_index} "
            f"dimension {layout.dims[mode_index]}"
        )
    factors = [
        op if m == mode_index else np.eye(d, dtype=complex)
        for m, d in enumerate(layout.dims)
    ]
    return reduce(np.kron, factors)


def embedded_ops(layout: ModeLayout):
    """Per-mode (lowering, raising, number) triples embedded in the full space."""
    out = []
    for m, d in enumerate(layout.dims):
        a, ad, n = mode_operators(d)
        out.append((embed(a, m, layout), embed(ad, m, layout), embed(n, m, layout)))
    return out


def qubit_rotation(u2: np.ndarray, mode_index: int, layout: ModeLayout) -> np.ndarray:
    """Embed an ideal 2x2 rotation on levels {0, 1} of one mode.

    Levels above |1> are untouched; used for instantaneous tomography
    prerotations and Ramsey pulses.
    """
    d = layout.dims[mode_index]
    m = np.eye(d, dtype=complex)
    m[:2, :2] = np.asarray(u2, dtype=complex)
    return embed(m, mode_index, layout)


@dataclass
class SystemState:
    """A pure state vector or a density matrix on the composite space."""

    kind: str  # "pure" | "density"
    data: np.ndarray

    @classmethod
    def pure(cls, vec) -> "SystemState":
        return cls("pure", np.asarray(vec, dtype=complex))

    @classmethod
    def density(cls, mat) -> "SystemState":
        return cls("density", np.asarray(mat, dtype=complex))

    @classmethod
    def from_labels(cls, labels, layout: ModeLayout) -> "SystemState":
        return cls.pure(layout.basis_state(parse_label(labels, layout)))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def to_density(self) -> np.ndarray:
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return self.data

    def validate(self, atol: float = 1e-9) -> None:
        if self.kind == "pure":
            if abs(np.linalg.norm(self.data) - 1.0) > atol:
                raise ValueError("pure state is not normalized")
        elif self.kind == "density":
            rho = self.data
            if np.linalg.norm(rho - rho.conj().T) > atol * max(1.0, np.linalg.norm(rho)):
                raise ValueError("density matrix is not Hermitian")
            if abs(np.trace(rho).real - 1.0) > atol:
                raise ValueError("density matrix trace is not 1")
            if np.linalg.eigvalsh(rho).min() < -atol:
                raise ValueError("density matrix has a negative eigenvalue")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")
