"""Covariance kernel expression trees.

Kernels are immutable expression trees built from four stationary base
kernels (squared exponential, Matern 5/2, periodic, rational quadratic)
combined by sums and products.  Two special nodes extend the family:
``Spectral`` evaluates a stationary kernel from a discretized spectral
density by trapezoidal cosine quadrature, and ``Warped`` evaluates its
child at warped inputs ``g(x) = x + h(x)``, producing a non-stationary
kernel from a stationary one.

Every tree exposes

* vectorized Gram-matrix evaluation,
* a flat view of its hyperparameters as dotted paths (used by the
  marginal-likelihood optimizer, the hyperparameter-posterior sampler and
  run configs),
* analytic Gram derivatives with respect to each hyperparameter, and
* analytic Gram derivatives with respect to the inputs (the hook the
  warp optimizer backpropagates through).

Hyperparameter paths name the node structure, e.g. the lengthscale of the
second summand of a sum is ``sum.1.se.lengthscale``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedError, ValidationError

__all__ = [
    "Kernel",
    "SquaredExponential",
    "Matern52",
    "Periodic",
    "RationalQuadratic",
    "Sum",
    "Product",
    "Warped",
    "Spectral",
    "eval_kernel",
    "gram",
    "node_paths",
    "wrap_nodes",
    "kernel_to_dict",
    "kernel_from_dict",
    "parse_kernel",
]

SQRT5 = math.sqrt(5.0)


def as_points(X) -> np.ndarray:
    """Coerce input locations to a float64 (N, D) array.

    Scalars become a single 1-d point; 1-d arrays are read as N points in
    one dimension.
    """
    A = np.asarray(X, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A[:, None]
    elif A.ndim != 2:
        raise ValidationError(f"input points must be at most 2-d, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("input points contain non-finite values")
    return A


def as_point(x) -> np.ndarray:
    """Coerce a single location to a float64 (D,) vector."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise ValidationError(f"expected a single point, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("input point contains non-finite values")
    return a


def _sqdist(Xa, Xb):
    d = Xa[:, None, :] - Xb[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _dist(Xa, Xb):
    return np.sqrt(np.maximum(_sqdist(Xa, Xb), 0.0))


def _require_positive(**params):
    for name, value in params.items():
        if not (np.isfinite(value) and value > 0.0):
            raise ValidationError(f"hyperparameter {name!r} must be strictly positive, got {value!r}")


class Kernel:
    """Base class of all kernel expression nodes."""

    kind = "abstract"

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------
    def gram(self, Xa, Xb=None) -> np.ndarray:
        """Gram matrix K[i, j] = k(Xa[i], Xb[j]); Xb defaults to Xa."""
        A = as_points(Xa)
        B = A if Xb is None else as_points(Xb)
        if A.shape[1] != B.shape[1]:
            raise ValidationError(
                f"point sets have mismatched dimension: {A.shape[1]} vs {B.shape[1]}"
            )
        return self._gram(A, B)

    def __call__(self, x, x2) -> float:
        return eval_kernel(self, x, x2)

    def _gram(self, Xa, Xb):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def stationary(self) -> bool:
        return True

    # ------------------------------------------------------------------
    # hyperparameter plumbing
    # ------------------------------------------------------------------
    def param_items(self) -> list[tuple[str, float]]:
        """Flat (path, value) list of all hyperparameters, depth first."""
        out: list[tuple[str, float]] = []
        self._collect_params(self.kind, out)
        return out

    def with_params(self, updates: dict) -> "Kernel":
        """Rebuild the tree with hyperparameters replaced by path.

        Every key in ``updates`` must name an existing hyperparameter.
        """
        used: set = set()
        new = self._with_params(self.kind, updates, used)
        unknown = set(updates) - used
        if unknown:
            raise ValidationError(f"unknown hyperparameter path(s): {sorted(unknown)}")
        return new

    def gram_param_grads(self, Xa, Xb=None) -> dict:
        """Derivative of the Gram matrix with respect to each hyperparameter."""
        A = as_points(Xa)
        B = A if Xb is None else as_points(Xb)
        return self._param_grads(self.kind, A, B)

    def _collect_params(self, prefix, out):
        return

    def _with_params(self, prefix, updates, used):
        return self

    def _param_grads(self, prefix, Xa, Xb):
        return {}

    # ------------------------------------------------------------------
    # input derivatives (used by the warp optimizer)
    # ------------------------------------------------------------------
    def gram_input_grad(self, bar, Xa, Xb):
        """Accumulate the cotangent ``bar`` onto the inputs.

        Returns (barXa, barXb) with barXa[i] = sum_j bar[i, j] * dk/dXa[i].
        Only defined for stationary subtrees.
        """
        raise UnsupportedError(f"input gradients not supported for {self.kind!r} nodes")

    # ------------------------------------------------------------------
    # sugar
    # ------------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        left = self.children if isinstance(self, Sum) else (self,)
        right = other.children if isinstance(other, Sum) else (other,)
        return Sum(left + right)

    def __mul__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        left = self.children if isinstance(self, Product) else (self,)
        right = other.children if isinstance(other, Product) else (other,)
        return Product(left + right)


class _StationaryLeaf(Kernel):
    """Shared machinery for the radial base kernels."""

    _param_names: tuple = ()

    def _local_params(self):
        return {name: getattr(self, name) for name in self._param_names}

    def _collect_params(self, prefix, out):
        for name, value in self._local_params().items():
            out.append((f"{prefix}.{name}", value))

    def _with_params(self, prefix, updates, used):
        kwargs = {}
        for name in self._param_names:
            key = f"{prefix}.{name}"
            if key in updates:
                kwargs[name] = float(updates[key])
                used.add(key)
            else:
                kwargs[name] = getattr(self, name)
        return type(self)(**kwargs)

    def _param_grads(self, prefix, Xa, Xb):
        return {f"{prefix}.{name}": g for name, g in self._local_grads(Xa, Xb).items()}

    def _local_grads(self, Xa, Xb):  # pragma: no cover - abstract
        raise NotImplementedError

    def _dk_dr_over_r(self, Xa, Xb):  # pragma: no cover - abstract
        raise NotImplementedError

    def gram_input_grad(self, bar, Xa, Xb):
        M = bar * self._dk_dr_over_r(Xa, Xb)
        barXa = M.sum(axis=1)[:, None] * Xa - M @ Xb
        barXb = M.sum(axis=0)[:, None] * Xb - M.T @ Xa
        return barXa, barXb


@dataclass(frozen=True, eq=False)
class SquaredExponential(_StationaryLeaf):
    """k(x, x') = amplitude^2 exp(-|x - x'|^2 / (2 lengthscale^2))"""

    amplitude: float
    lengthscale: float

    kind = "se"
    _param_names = ("amplitude", "lengthscale")

    def __post_init__(self):
        _require_positive(amplitude=self.amplitude, lengthscale=self.lengthscale)

    def _gram(self, Xa, Xb):
        d2 = _sqdist(Xa, Xb)
        return self.amplitude**2 * np.exp(-0.5 * d2 / self.lengthscale**2)

    def _local_grads(self, Xa, Xb):
        K = self._gram(Xa, Xb)
        d2 = _sqdist(Xa, Xb)
        return {
            "amplitude": 2.0 * K / self.amplitude,
            "lengthscale": K * d2 / self.lengthscale**3,
        }

    def _dk_dr_over_r(self, Xa, Xb):
        return -self._gram(Xa, Xb) / self.lengthscale**2


@dataclass(frozen=True, eq=False)
class Matern52(_StationaryLeaf):
    """k(r) = amplitude^2 (1 + u + u^2/3) exp(-u),  u = sqrt(5) r / lengthscale"""

    amplitude: float
    lengthscale: float

    kind = "matern52"
    _param_names = ("amplitude", "lengthscale")

    def __post_init__(self):
        _require_positive(amplitude=self.amplitude, lengthscale=self.lengthscale)

    def _gram(self, Xa, Xb):
        u = SQRT5 * _dist(Xa, Xb) / self.lengthscale
        return self.amplitude**2 * (1.0 + u + u * u / 3.0) * np.exp(-u)

    def _local_grads(self, Xa, Xb):
        u = SQRT5 * _dist(Xa, Xb) / self.lengthscale
        E = np.exp(-u)
        K = self.amplitude**2 * (1.0 + u + u * u / 3.0) * E
        dlam = self.amplitude**2 * E * (u * u / 3.0) * (1.0 + u) / self.lengthscale
        return {"amplitude": 2.0 * K / self.amplitude, "lengthscale": dlam}

    def _dk_dr_over_r(self, Xa, Xb):
        u = SQRT5 * _dist(Xa, Xb) / self.lengthscale
        return (
            -self.amplitude**2
            * (5.0 / (3.0 * self.lengthscale**2))
            * (1.0 + u)
            * np.exp(-u)
        )


@dataclass(frozen=True, eq=False)
class Periodic(_StationaryLeaf):
    """k(x, x') = amplitude^2 exp(-2 sum_d sin^2(pi (x_d - x'_d) / period) / lengthscale^2)

    The per-dimension form keeps the kernel positive definite in every
    dimension; for 1-d inputs it is the classic periodic kernel.
    """

    amplitude: float
    lengthscale: float
    period: float

    kind = "periodic"
    _param_names = ("amplitude", "lengthscale", "period")

    def __post_init__(self):
        _require_positive(
            amplitude=self.amplitude, lengthscale=self.lengthscale, period=self.period
        )

    def _sin2(self, Xa, Xb):
        d = Xa[:, None, :] - Xb[None, :, :]
        s = np.sin(np.pi * d / self.period)
        return np.einsum("ijk,ijk->ij", s, s)

    def _gram(self, Xa, Xb):
        return self.amplitude**2 * np.exp(-2.0 * self._sin2(Xa, Xb) / self.lengthscale**2)

    def _local_grads(self, Xa, Xb):
        d = Xa[:, None, :] - Xb[None, :, :]
        s2 = self._sin2(Xa, Xb)
        K = self.amplitude**2 * np.exp(-2.0 * s2 / self.lengthscale**2)
        dlam = K * 4.0 * s2 / self.lengthscale**3
        # d/dp sin^2(pi d / p) = -(pi d / p^2) sin(2 pi d / p), summed over dims
        dsum = np.einsum(
            "ijk,ijk->ij", d, np.sin(2.0 * np.pi * d / self.period)
        )
        dper = K * (2.0 * np.pi / (self.lengthscale**2 * self.period**2)) * dsum
        return {"amplitude": 2.0 * K / self.amplitude, "lengthscale": dlam, "period": dper}

    def gram_input_grad(self, bar, Xa, Xb):
        d = Xa[:, None, :] - Xb[None, :, :]
        K = self.amplitude**2 * np.exp(-2.0 * self._sin2(Xa, Xb) / self.lengthscale**2)
        M = bar * K * (-2.0 * np.pi / (self.period * self.lengthscale**2))
        S = np.sin(2.0 * np.pi * d / self.period)
        barXa = np.einsum("ij,ijk->ik", M, S)
        barXb = -np.einsum("ij,ijk->jk", M, S)
        return barXa, barXb


@dataclass(frozen=True, eq=False)
class RationalQuadratic(_StationaryLeaf):
    """k(r) = amplitude^2 (1 + r^2 / (2 lengthscale^2 alpha))^(-alpha)"""

    amplitude: float
    lengthscale: float
    alpha: float

    kind = "rq"
    _param_names = ("amplitude", "lengthscale", "alpha")

    def __post_init__(self):
        _require_positive(
            amplitude=self.amplitude, lengthscale=self.lengthscale, alpha=self.alpha
        )

    def _base(self, Xa, Xb):
        return 1.0 + _sqdist(Xa, Xb) / (2.0 * self.lengthscale**2 * self.alpha)

    def _gram(self, Xa, Xb):
        return self.amplitude**2 * self._base(Xa, Xb) ** (-self.alpha)

    def _local_grads(self, Xa, Xb):
        B = self._base(Xa, Xb)
        K = self.amplitude**2 * B ** (-self.alpha)
        d2 = _sqdist(Xa, Xb)
        dlam = self.amplitude**2 * B ** (-self.alpha - 1.0) * d2 / self.lengthscale**3
        dalpha = K * ((B - 1.0) / B - np.log(B))
        return {"amplitude": 2.0 * K / self.amplitude, "lengthscale": dlam, "alpha": dalpha}

    def _dk_dr_over_r(self, Xa, Xb):
        B = self._base(Xa, Xb)
        return -self.amplitude**2 * B ** (-self.alpha - 1.0) / self.lengthscale**2


class _Combination(Kernel):
    def __init__(self, children):
        children = tuple(children)
        if not children:
            raise ValidationError(f"{self.kind} kernel needs at least one child")
        for c in children:
            if not isinstance(c, Kernel):
                raise ValidationError(f"{self.kind} children must be kernels, got {type(c)!r}")
        self.children = children

    @property
    def stationary(self):
        return all(c.stationary for c in self.children)

    def _child_prefix(self, prefix, i):
        return f"{prefix}.{i}.{self.children[i].kind}"

    def _collect_params(self, prefix, out):
        for i, c in enumerate(self.children):
            c._collect_params(self._child_prefix(prefix, i), out)

    def _with_params(self, prefix, updates, used):
        return type(self)(
            tuple(
                c._with_params(self._child_prefix(prefix, i), updates, used)
                for i, c in enumerate(self.children)
            )
        )


class Sum(_Combination):
    kind = "sum"

    def _gram(self, Xa, Xb):
        out = self.children[0]._gram(Xa, Xb)
        for c in self.children[1:]:
            out = out + c._gram(Xa, Xb)
        return out

    def _param_grads(self, prefix, Xa, Xb):
        out = {}
        for i, c in enumerate(self.children):
            out.update(c._param_grads(self._child_prefix(prefix, i), Xa, Xb))
        return out

    def gram_input_grad(self, bar, Xa, Xb):
        barXa = np.zeros_like(Xa)
        barXb = np.zeros_like(Xb)
        for c in self.children:
            ga, gb = c.gram_input_grad(bar, Xa, Xb)
            barXa += ga
            barXb += gb
        return barXa, barXb


class Product(_Combination):
    kind = "product"

    def _gram(self, Xa, Xb):
        out = self.children[0]._gram(Xa, Xb)
        for c in self.children[1:]:
            out = out * c._gram(Xa, Xb)
        return out

    def _others_product(self, Xa, Xb, skip, grams):
        out = None
        for j, g in enumerate(grams):
            if j == skip:
                continue
            out = g if out is None else out * g
        return 1.0 if out is None else out

    def _param_grads(self, prefix, Xa, Xb):
        grams = [c._gram(Xa, Xb) for c in self.children]
        out = {}
        for i, c in enumerate(self.children):
            others = self._others_product(Xa, Xb, i, grams)
            for path, g in c._param_grads(self._child_prefix(prefix, i), Xa, Xb).items():
                out[path] = g * others
        return out

    def gram_input_grad(self, bar, Xa, Xb):
        grams = [c._gram(Xa, Xb) for c in self.children]
        barXa = np.zeros_like(Xa)
        barXb = np.zeros_like(Xb)
        for i, c in enumerate(self.children):
            others = self._others_product(Xa, Xb, i, grams)
            ga, gb = c.gram_input_grad(bar * others, Xa, Xb)
            barXa += ga
            barXb += gb
        return barXa, barXb


def _contains_spectral(k: Kernel) -> bool:
    if isinstance(k, Spectral):
        return True
    if isinstance(k, _Combination):
        return any(_contains_spectral(c) for c in k.children)
    if isinstance(k, Warped):
        return _contains_spectral(k.child)
    return False


class Warped(Kernel):
    """Evaluate the child kernel at warped inputs: k(x, x') = child(g(x), g(x')).

    ``warp`` is any object with a ``transform(X) -> X'`` method mapping
    (N, D) point arrays to (N, D) point arrays.
    """

    kind = "warped"

    def __init__(self, child, warp):
        if not isinstance(child, Kernel):
            raise ValidationError("warped child must be a kernel")
        if _contains_spectral(child):
            raise ValidationError("cannot warp a spectral-density kernel node")
        if not hasattr(warp, "transform"):
            raise ValidationError("warp object must provide a transform(X) method")
        self.child = child
        self.warp = warp

    @property
    def stationary(self):
        return False

    def _gram(self, Xa, Xb):
        dim = getattr(self.warp, "dim", None)
        if dim is not None and dim != Xa.shape[1]:
            raise ValidationError(
                f"warp expects dimension {dim}, inputs have dimension {Xa.shape[1]}"
            )
        return self.child._gram(self.warp.transform(Xa), self.warp.transform(Xb))

    def _child_prefix(self, prefix):
        return f"{prefix}.{self.child.kind}"

    def _collect_params(self, prefix, out):
        self.child._collect_params(self._child_prefix(prefix), out)

    def _with_params(self, prefix, updates, used):
        return Warped(self.child._with_params(self._child_prefix(prefix), updates, used), self.warp)

    def _param_grads(self, prefix, Xa, Xb):
        Ua = self.warp.transform(Xa)
        Ub = self.warp.transform(Xb)
        return self.child._param_grads(self._child_prefix(prefix), Ua, Ub)

    def gram_input_grad(self, bar, Xa, Xb):
        raise UnsupportedError("nested input gradients through a warp are not supported")


class Spectral(Kernel):
    """Stationary kernel defined by a one-sided discretized spectral density.

    k(tau) = sum_g w_g cos(2 pi tau omega_g) S_g with trapezoidal weights
    w_g over the frequency grid.  Only one-dimensional inputs are
    supported.
    """

    kind = "spectral"

    _CHUNK = 1 << 16

    def __init__(self, omegas, values):
        omegas = np.array(omegas, dtype=float)
        values = np.array(values, dtype=float)
        if omegas.ndim != 1 or values.ndim != 1 or omegas.shape != values.shape:
            raise ValidationError("frequency and density arrays must be 1-d with equal length")
        if omegas.size < 2:
            raise ValidationError("spectral grid needs at least two frequencies")
        if omegas[0] != 0.0:
            raise ValidationError("spectral grid must start at frequency 0")
        if not np.all(np.diff(omegas) > 0.0):
            raise ValidationError("spectral grid frequencies must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValidationError("spectral density values must be finite and nonnegative")
        omegas.setflags(write=False)
        values.setflags(write=False)
        self.omegas = omegas
        self.values = values
        w = trapezoid_weights(omegas)
        w.setflags(write=False)
        self.weights = w

    def k_of_tau(self, tau) -> np.ndarray:
        """Evaluate k at (possibly negative) lags; even in tau."""
        t = np.asarray(tau, dtype=float)
        ws = self.weights * self.values
        flat = t.reshape(-1)
        out = np.empty(flat.shape, dtype=float)
        for start in range(0, flat.size, self._CHUNK):
            block = flat[start : start + self._CHUNK]
            out[start : start + self._CHUNK] = (
                np.cos(2.0 * np.pi * block[:, None] * self.omegas[None, :]) @ ws
            )
        return out.reshape(t.shape)

    def _gram(self, Xa, Xb):
        if Xa.shape[1] != 1:
            raise UnsupportedError("spectral kernels support one-dimensional inputs only")
        return self.k_of_tau(np.abs(Xa[:, 0][:, None] - Xb[:, 0][None, :]))

    def gram_input_grad(self, bar, Xa, Xb):
        raise UnsupportedError("input gradients not supported for spectral nodes")


def trapezoid_weights(omegas: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature weights for a strictly increasing grid."""
    w = np.zeros_like(omegas)
    d = np.diff(omegas)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


# ----------------------------------------------------------------------
# free-function views of the two evaluation operations
# ----------------------------------------------------------------------
def eval_kernel(k: Kernel, x, x2) -> float:
    """Evaluate k(x, x') for two single points."""
    a = as_point(x)
    b = as_point(x2)
    if a.shape != b.shape:
        raise ValidationError(f"point dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    return float(k.gram(a[None, :], b[None, :])[0, 0])


def gram(k: Kernel, X, X2=None) -> np.ndarray:
    """Gram matrix of ``k`` over point sets (alias of ``k.gram``)."""
    return k.gram(X, X2)


# ----------------------------------------------------------------------
# node paths and warp flags
# ----------------------------------------------------------------------
def node_paths(k: Kernel) -> list[str]:
    """Dotted path of every node in the tree, depth first."""
    out: list[str] = []

    def walk(node, prefix):
        out.append(prefix)
        if isinstance(node, _Combination):
            for i, c in enumerate(node.children):
                walk(c, node._child_prefix(prefix, i))
        elif isinstance(node, Warped):
            walk(node.child, node._child_prefix(prefix))

    walk(k, k.kind)
    return out


def wrap_nodes(k: Kernel, paths, warp) -> Kernel:
    """Wrap the nodes named by ``paths`` in ``Warped(node, warp)``.

    Paths use the dotted scheme of :func:`node_paths`.  Wrapping a node
    covers its whole subtree; paths inside a wrapped subtree are invalid.
    """
    targets = set(paths)
    consumed: set = set()

    def walk(node, prefix):
        if prefix in targets:
            consumed.add(prefix)
            return Warped(node, warp)
        if isinstance(node, _Combination):
            return type(node)(
                tuple(
                    walk(c, node._child_prefix(prefix, i))
                    for i, c in enumerate(node.children)
                )
            )
        if isinstance(node, Warped):
            return Warped(walk(node.child, node._child_prefix(prefix)), node.warp)
        return node

    new = walk(k, k.kind)
    missing = targets - consumed
    if missing:
        raise ValidationError(f"warp flag(s) name no reachable node: {sorted(missing)}")
    return new


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------
def kernel_to_dict(k: Kernel) -> dict:
    """Serialize a kernel tree to plain Python containers."""
    if isinstance(k, SquaredExponential):
        return {"kind": "se", "amplitude": k.amplitude, "lengthscale": k.lengthscale}
    if isinstance(k, Matern52):
        return {"kind": "matern52", "amplitude": k.amplitude, "lengthscale": k.lengthscale}
    if isinstance(k, Periodic):
        return {
            "kind": "periodic",
            "amplitude": k.amplitude,
            "lengthscale": k.lengthscale,
            "period": k.period,
        }
    if isinstance(k, RationalQuadratic):
        return {
            "kind": "rq",
            "amplitude": k.amplitude,
            "lengthscale": k.lengthscale,
            "alpha": k.alpha,
        }
    if isinstance(k, (Sum, Product)):
        return {"kind": k.kind, "children": [kernel_to_dict(c) for c in k.children]}
    if isinstance(k, Warped):
        return {"kind": "warped", "child": kernel_to_dict(k.child), "warp": k.warp.to_dict()}
    if isinstance(k, Spectral):
        return {
            "kind": "spectral",
            "omegas": [float(v) for v in k.omegas],
            "values": [float(v) for v in k.values],
        }
    raise ValidationError(f"cannot serialize kernel of type {type(k)!r}")


def kernel_from_dict(d: dict) -> Kernel:
    """Inverse of :func:`kernel_to_dict`."""
    if not isinstance(d, dict) or "kind" not in d:
        raise ValidationError("kernel dict must be a mapping with a 'kind' key")
    kind = d["kind"]
    if kind == "se":
        return SquaredExponential(d["amplitude"], d["lengthscale"])
    if kind == "matern52":
        return Matern52(d["amplitude"], d["lengthscale"])
    if kind == "periodic":
        return Periodic(d["amplitude"], d["lengthscale"], d["period"])
    if kind == "rq":
        return RationalQuadratic(d["amplitude"], d["lengthscale"], d["alpha"])
    if kind in ("sum", "product"):
        cls = Sum if kind == "sum" else Product
        return cls(tuple(kernel_from_dict(c) for c in d["children"]))
    if kind == "warped":
        from .warp import WarpNet  # deferred to avoid an import cycle

        return Warped(kernel_from_dict(d["child"]), WarpNet.from_dict(d["warp"]))
    if kind == "spectral":
        return Spectral(d["omegas"], d["values"])
    raise ValidationError(f"unknown kernel kind {kind!r}")


# ----------------------------------------------------------------------
# kernel expression strings
# ----------------------------------------------------------------------
_LEAF_SPECS = {
    "se": (SquaredExponential, ("amplitude", "lengthscale")),
    "matern52": (Matern52, ("amplitude", "lengthscale")),
    "periodic": (Periodic, ("amplitude", "lengthscale", "period")),
    "rq": (RationalQuadratic, ("amplitude", "lengthscale", "alpha")),
}

_ARG_ALIASES = {
    "h": "amplitude",
    "amp": "amplitude",
    "amplitude": "amplitude",
    "l": "lengthscale",
    "ls": "lengthscale",
    "lengthscale": "lengthscale",
    "p": "period",
    "period": "period",
    "a": "alpha",
    "alpha": "alpha",
}


def parse_kernel(text: str) -> Kernel:
    """Parse a kernel expression string.

    Supported syntax: ``se(a, l)``, ``matern52(a, l)``, ``periodic(a, l, p)``
    and ``rq(a, l, alpha)`` combined with ``+`` and ``*``.  Arguments may be
    positional or keyword (``se(h=1, l=0.5)``).
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise ValidationError(f"invalid kernel expression: {e}") from None

    def number(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -number(node.operand)
        raise ValidationError("kernel arguments must be numeric literals")

    def build(node):
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Add):
            return build(node.left) + build(node.right)
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Mult):
            return build(node.left) * build(node.right)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            name = node.func.id.lower()
            if name not in _LEAF_SPECS:
                raise ValidationError(f"unknown kernel {name!r} in expression")
            cls, argnames = _LEAF_SPECS[name]
            if len(node.args) > len(argnames):
                raise ValidationError(f"too many arguments for {name}()")
            kwargs = {argnames[i]: number(a) for i, a in enumerate(node.args)}
            for kw in node.keywords:
                canon = _ARG_ALIASES.get((kw.arg or "").lower())
                if canon is None or canon not in argnames:
                    raise ValidationError(f"unknown argument {kw.arg!r} for {name}()")
                if canon in kwargs:
                    raise ValidationError(f"duplicate argument {canon!r} for {name}()")
                kwargs[canon] = number(kw.value)
            missing = [a for a in argnames if a not in kwargs]
            if missing:
                raise ValidationError(f"{name}() missing argument(s): {missing}")
            return cls(**kwargs)
        raise ValidationError("kernel expressions support calls, '+' and '*' only")

    return build(tree.body)
