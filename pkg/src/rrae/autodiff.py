"""Dense reverse-mode autodiff on 2-D float64 arrays.

A ``Node`` wraps an immutable ``numpy`` matrix and records how it was
produced.  Calling :meth:`Node.backward` on a scalar (1x1) node walks the
graph once in reverse topological order and accumulates gradients into
every ancestor.

Besides the usual elementwise and matrix ops this module carries the SVD
machinery the rank-reduction models need: a deterministic SVD, the
best rank-k reconstruction with its vector-Jacobian product, and a
differentiable nuclear norm.
"""

import warnings

import numpy as np

GAP_EPS = 1e-12


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class NumericalError(ArithmeticError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateSpectrumWarning(RuntimeWarning):
    pass


def as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


class Node:
    """A matrix value on the tape plus its accumulated gradient."""

    __slots__ = ("value", "grad", "_parents", "_backward", "op")

    def __init__(self, value, parents=(), op=""):
        self.value = as_matrix(value)
        self.value.flags.writeable = False
        self.grad = np.zeros_like(self.value)
        self._parents = parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def __repr__(self):
        return f"Node(shape={self.shape}, op={self.op!r})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, seed=None):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        if seed is None:
            if self.value.size != 1:
                raise DimensionError(
                    f"backward() without a seed needs a 1x1 node, got {self.shape}")
            seed = np.ones_like(self.value)
        self.grad = self.grad + as_matrix(seed).reshape(self.shape)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(x):
    return x if isinstance(x, Node) else Node(x, op="const")


def _result(value, parents, op, backward):
    out = Node(value, parents, op)
    if not np.all(np.isfinite(out.value)):
        raise NumericalError(f"non-finite value produced by {op}")
    out._backward = backward
    return out


def _unbroadcast(g, shape):
    # supports (r,1) column and (1,c) row and (1,1) broadcasting
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        a.grad = a.grad + _unbroadcast(g, a.shape)
        b.grad = b.grad + _unbroadcast(g, b.shape)

    return _result(a.value + b.value, (a, b), "add", backward)


def sub(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        a.grad = a.grad + _unbroadcast(g, a.shape)
        b.grad = b.grad - _unbroadcast(g, b.shape)

    return _result(a.value - b.value, (a, b), "sub", backward)


def mul(a, b):
    """Elementwise (Hadamard) product with column/row broadcasting."""
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        a.grad = a.grad + _unbroadcast(g * b.value, a.shape)
        b.grad = b.grad + _unbroadcast(g * a.value, b.shape)

    return _result(a.value * b.value, (a, b), "mul", backward)


def scale(a, c):
    a = constant(a)
    c = float(c)

    def backward(g):
        a.grad = a.grad + c * g

    return _result(c * a.value, (a,), "scale", backward)


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")

    def backward(g):
        a.grad = a.grad + g @ b.value.T
        b.grad = b.grad + a.value.T @ g

    return _result(a.value @ b.value, (a, b), "matmul", backward)


def transpose(a):
    a = constant(a)

    def backward(g):
        a.grad = a.grad + g.T

    return _result(a.value.T.copy(), (a,), "transpose", backward)


def softplus(a):
    a = constant(a)
    x = a.value

    def backward(g):
        # d/dx log(1 + e^x) = sigmoid(x)
        a.grad = a.grad + g * (0.5 * (1.0 + np.tanh(0.5 * x)))

    return _result(np.logaddexp(0.0, x), (a,), "softplus", backward)


def relu(a):
    a = constant(a)
    mask = a.value > 0

    def backward(g):
        a.grad = a.grad + g * mask

    return _result(np.where(mask, a.value, 0.0), (a,), "relu", backward)


def total(a):
    """Sum of all entries, as a 1x1 node."""
    a = constant(a)

    def backward(g):
        a.grad = a.grad + g[0, 0] * np.ones_like(a.value)

    return _result(np.array([[a.value.sum()]]), (a,), "sum", backward)


def frobenius_norm(a):
    a = constant(a)
    n = float(np.sqrt(np.sum(a.value * a.value)))

    def backward(g):
        if n > 0:
            a.grad = a.grad + g[0, 0] * a.value / n

    return _result(np.array([[n]]), (a,), "frobenius", backward)


def column_slice(a, indices):
    a = constant(a)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ParameterError("column_slice needs at least one index")
    if idx.min() < -a.cols or idx.max() >= a.cols:
        raise ParameterError(
            f"column index out of range for a matrix with {a.cols} columns")

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (slice(None), idx), g)
        a.grad = a.grad + full

    return _result(a.value[:, idx], (a,), "column_slice", backward)


# ---------------------------------------------------------------------------
# SVD


class SvdResult:
    __slots__ = ("U", "sigma", "Vt")

    def __init__(self, U, sigma, Vt):
        self.U = U
        self.sigma = sigma
        self.Vt = Vt

    def __iter__(self):
        return iter((self.U, self.sigma, self.Vt))

    def reconstruct(self, k=None):
        k = len(self.sigma) if k is None else k
        return (self.U[:, :k] * self.sigma[:k]) @ self.Vt[:k]


def svd(a):
    """Thin SVD with a deterministic sign convention.

    The first nonzero entry of every left singular vector is made positive
    (the matching right vector is flipped with it).
    """
    a = as_matrix(a.value if isinstance(a, Node) else a)
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd: input contains non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"svd did not converge: {exc}", iterations=None) from exc
    U = U.copy()
    Vt = Vt.copy()
    tol = np.finfo(np.float64).eps * max(a.shape)
    for j in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, j]) > tol)
        if nz.size and U[nz[0], j] < 0:
            U[:, j] *= -1.0
            Vt[j] *= -1.0
    return SvdResult(U, s, Vt)


def _safe_reciprocal(d, eps=GAP_EPS):
    sign = np.where(d < 0, -1.0, 1.0)
    return 1.0 / (sign * np.maximum(np.abs(d), eps))


def svd_vjp(res, dU, ds, dVt, eps=GAP_EPS):
    """Gradient wrt the input of a thin SVD given cotangents of its outputs.

    ``dU`` is m x r, ``ds`` length r, ``dVt`` r x n, for the full thin
    factorisation (pad with zeros for unused modes).
    """
    U, s, Vt = res.U, res.sigma, res.Vt
    V = Vt.T
    dV = dVt.T
    m, r = U.shape
    n = V.shape[0]

    s_sq = s * s
    F = _safe_reciprocal(s_sq[None, :] - s_sq[:, None], eps)  # 1/(s_j^2 - s_i^2)
    np.fill_diagonal(F, 0.0)

    UtdU = U.T @ dU
    VtdV = V.T @ dV
    inner = (F * (UtdU - UtdU.T)) * s[None, :] + s[:, None] * (F * (VtdV - VtdV.T))
    inner = inner + np.diag(ds)
    grad = U @ inner @ Vt

    s_inv = np.where(s > eps, 1.0 / np.maximum(s, eps), 0.0)
    if m > r:
        grad = grad + (dU - U @ UtdU) * s_inv[None, :] @ Vt
    if n > r:
        grad = grad + (U * s_inv[None, :]) @ (dV.T - VtdV.T @ V.T)
    return grad


def _check_gap(s, k, gap_tol):
    if k < len(s):
        gap = s[k - 1] - s[k]
        if gap <= gap_tol * max(s[0], np.finfo(np.float64).tiny):
            warnings.warn(
                f"singular values {k} and {k + 1} are (nearly) tied "
                f"(gap {gap:.3e}); truncation gradient is ill-conditioned",
                DegenerateSpectrumWarning,
                stacklevel=3,
            )


def truncated_reconstruct(a, k, gap_tol=1e-10):
    """Best rank-``k`` approximation sum_{i<=k} s_i u_i v_i^T of ``a``."""
    a = constant(a)
    r = min(a.shape)
    if not 1 <= k <= r:
        raise ParameterError(f"rank k={k} outside [1, {r}] for shape {a.shape}")
    res = svd(a.value)
    _check_gap(res.sigma, k, gap_tol)
    Uk = res.U[:, :k]
    sk = res.sigma[:k]
    Vtk = res.Vt[:k]
    value = (Uk * sk) @ Vtk

    def backward(g):
        dU = np.zeros_like(res.U)
        dVt = np.zeros_like(res.Vt)
        ds = np.zeros_like(res.sigma)
        dU[:, :k] = g @ Vtk.T * sk[None, :]
        dVt[:k] = sk[:, None] * (Uk.T @ g)
        ds[:k] = np.einsum("ik,ij,kj->k", Uk, g, Vtk)
        a.grad = a.grad + svd_vjp(res, dU, ds, dVt)

    return _result(value, (a,), "truncated_svd", backward)


def nuclear_norm(a):
    a = constant(a)
    res = svd(a.value)

    def backward(g):
        a.grad = a.grad + g[0, 0] * (res.U @ res.Vt)

    return _result(np.array([[res.sigma.sum()]]), (a,), "nuclear_norm", backward)
