"""Dense operator algebra on tensor-product Hilbert spaces.

Every Hamiltonian, jump operator and density matrix in the package is an
:class:`Operator`: a square complex matrix tagged with the dimensions of
the tensor factors it acts on.  Functions here also accept bare numpy
arrays, which are treated as single-factor operators.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-10
NEGATIVITY_TOL = 1e-10
DEFAULT_FLOOR = 1e-12


class LayoutError(ValueError):
    """Operators with incompatible tensor layouts were combined."""


class NotHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class HilbertLayout:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("layout needs at least one factor")
        if any(d < 1 for d in dims):
            raise ValueError(f"subsystem dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self):
        return len(self.dims)

    def __add__(self, other: "HilbertLayout") -> "HilbertLayout":
        return HilbertLayout(self.dims + other.dims)


@dataclass(frozen=True, eq=False)
class Operator:
    """Square complex matrix acting on ``layout``.

    The matrix is copied on construction and marked read-only, so an
    Operator can be shared freely between threads.
    """

    layout: HilbertLayout
    data: np.ndarray

    def __post_init__(self):
        layout = self.layout
        if not isinstance(layout, HilbertLayout):
            layout = HilbertLayout(tuple(layout))
            object.__setattr__(self, "layout", layout)
        data = np.array(self.data, dtype=complex)
        n = layout.total
        if data.shape != (n, n):
            raise LayoutError(
                f"matrix of shape {data.shape} does not match layout {layout.dims}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, a, dims: Sequence[int] | None = None) -> "Operator":
        a = np.asarray(a)
        if dims is None:
            dims = (a.shape[0],)
        return cls(HilbertLayout(tuple(dims)), a)

    @property
    def dim(self) -> int:
        return self.layout.total

    @cached_property
    def sparse(self):
        """CSR copy when the matrix is large and mostly zero, else ``None``."""
        n = self.dim
        if n >= 32 and np.count_nonzero(self.data) < 0.1 * n * n:
            return sp.csr_matrix(self.data)
        return None

    @property
    def dag(self) -> "Operator":
        return Operator(self.layout, self.data.conj().T)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return hermiticity_error(self.data) <= tol

    def is_density(self, tol: float = 1e-9) -> bool:
        if not self.is_hermitian(tol):
            return False
        if abs(np.trace(self.data) - 1) > tol:
            return False
        return np.linalg.eigvalsh(symmetrize(self.data))[0] >= -tol

    def __add__(self, other):
        other = as_operator(other, self.layout)
        _check_same(self, other)
        return Operator(self.layout, self.data + other.data)

    def __sub__(self, other):
        other = as_operator(other, self.layout)
        _check_same(self, other)
        return Operator(self.layout, self.data - other.data)

    def __mul__(self, c):
        return Operator(self.layout, self.data * c)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_operator(other, self.layout)
        _check_same(self, other)
        return Operator(self.layout, self.data @ other.data)

    def __neg__(self):
        return Operator(self.layout, -self.data)

    def __repr__(self):
        return f"Operator(dims={self.layout.dims})"


OperatorLike = Union[Operator, np.ndarray]


def as_operator(a: OperatorLike, layout: HilbertLayout | None = None) -> Operator:
    if isinstance(a, Operator):
        return a
    a = np.asarray(a)
    if layout is not None and layout.total == a.shape[0]:
        return Operator(layout, a)
    return Operator.from_array(a)


def dot(a: Operator, b: np.ndarray) -> np.ndarray:
    """``a.data @ b``, through the sparse form of ``a`` when it has one."""
    s = a.sparse
    return np.asarray(s @ b) if s is not None else a.data @ b


def _check_same(a: Operator, b: Operator):
    if a.dim != b.dim:
        raise LayoutError(f"dimension mismatch: {a.layout.dims} vs {b.layout.dims}")


def hermiticity_error(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def tensor_product(*ops: OperatorLike) -> Operator:
    ops = [as_operator(o) for o in ops]
    layout = reduce(lambda x, y: x + y, (o.layout for o in ops))
    data = reduce(np.kron, (o.data for o in ops))
    return Operator(layout, data)


def identity(layout: HilbertLayout | Sequence[int] | int) -> Operator:
    if isinstance(layout, int):
        layout = HilbertLayout((layout,))
    elif not isinstance(layout, HilbertLayout):
        layout = HilbertLayout(tuple(layout))
    return Operator(layout, np.eye(layout.total))


def embed(op: OperatorLike, layout: HilbertLayout, index: int) -> Operator:
    """Lift a single-factor operator to ``layout``, acting on factor ``index``."""
    op = as_operator(op)
    if op.dim != layout.dims[index]:
        raise LayoutError(
            f"operator of dim {op.dim} cannot act on factor {index} of {layout.dims}")
    left = int(np.prod(layout.dims[:index]))
    right = int(np.prod(layout.dims[index + 1:]))
    data = np.kron(np.kron(np.eye(left), op.data), np.eye(right))
    return Operator(layout, data)


def partial_trace(a: OperatorLike, keep: Iterable[int]) -> Operator:
    """Trace out every factor not listed in ``keep``.

    Kept factors stay in their original order regardless of the order of
    ``keep``.
    """
    a = as_operator(a)
    dims = a.layout.dims
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    for k in keep:
        if not 0 <= k < n:
            raise IndexError(f"subsystem {k} out of range for layout {dims}")
    data = _ptrace_array(a.data, dims, keep)
    return Operator(HilbertLayout(tuple(dims[k] for k in keep)), data)


def _ptrace_array(data: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = data.reshape(tuple(dims) * 2)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            cols[i] = rows[i]
    out = "".join(rows[k] for k in keep) + "".join(cols[k] for k in keep)
    res = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    m = int(np.prod([dims[k] for k in keep]))
    return res.reshape(m, m)


def hermitian_eig(a: OperatorLike, tol: float = HERMITIAN_TOL):
    """Eigen-decomposition of a Hermitian operator.

    Returns ``(eigenvalues, U)`` with eigenvalues in descending order and the
    eigenvectors as the columns of the unitary ``U``.
    """
    a = as_operator(a)
    err = hermiticity_error(a.data)
    if err > tol:
        raise NotHermitianError(f"operator is not Hermitian (max |A - A^dag| = {err:.3g})")
    w, u = np.linalg.eigh(symmetrize(a.data))
    return w[::-1].copy(), u[:, ::-1].copy()


def log_psd(a: OperatorLike, floor: float = DEFAULT_FLOOR) -> Operator:
    """Matrix logarithm of a positive semidefinite operator.

    Eigenvalues below ``floor`` are raised to ``floor`` before the log is
    taken, which keeps the result finite on rank-deficient states.
    """
    a = as_operator(a)
    w, u = hermitian_eig(a)
    if w[-1] < -NEGATIVITY_TOL:
        raise ValueError(f"operator has negative eigenvalue {w[-1]:.3g}")
    lw = np.log(np.maximum(w, floor))
    return Operator(a.layout, (u * lw) @ u.conj().T)


def expectation(rho: OperatorLike, a: OperatorLike) -> complex:
    rho, a = as_operator(rho), as_operator(a)
    _check_same(rho, a)
    # Tr(rho a) without forming the product
    return complex(np.sum(rho.data.T * a.data))


def variance(rho: OperatorLike, a: OperatorLike) -> float:
    rho, a = as_operator(rho), as_operator(a)
    _check_same(rho, a)
    mean = expectation(rho, a).real
    # Tr(rho a a) = sum_ij (a rho)_ij a_ji
    second = float(np.sum(dot(a, rho.data) * a.data.T).real)
    var = second - mean * mean
    if var < 0:
        if var < -1e-12 * max(1.0, second):
            raise ValueError(f"variance came out negative ({var:.3g}); is rho a state?")
        var = 0.0
    return var


def spectral_norm(a: OperatorLike) -> float:
    """Operator norm: the largest singular value.

    For normal operators this is the largest eigenvalue modulus.
    """
    a = as_operator(a)
    return float(np.linalg.norm(a.data, 2))


def commutator(a: OperatorLike, b: OperatorLike) -> Operator:
    a, b = as_operator(a), as_operator(b)
    _check_same(a, b)
    return Operator(a.layout, a.data @ b.data - b.data @ a.data)


# a few named operators used by presets and tests
def sigma_x() -> Operator:
    return Operator.from_array([[0, 1], [1, 0]])


def sigma_y() -> Operator:
    return Operator.from_array([[0, -1j], [1j, 0]])


def sigma_z() -> Operator:
    return Operator.from_array([[1, 0], [0, -1]])


def ket_bra(i: int, j: int, n: int) -> Operator:
    m = np.zeros((n, n), dtype=complex)
    m[i, j] = 1
    return Operator.from_array(m)


def pure_state(psi) -> Operator:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return Operator.from_array(np.outer(psi, psi.conj()))
