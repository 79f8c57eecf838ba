"""Non-stationary kernel perturbations by input warping.

The warp is g(x) = x + h(x) with h a small fully connected network
(rectified-linear hidden layers, identity output, equal input and output
dimension).  Selected nodes of a base kernel are evaluated at warped
inputs; the network weights are fit by gradient descent on a pluggable
loss of the posterior functional plus a grid regularizer
(1/eps)(1/M) sum_m ||h(x_m)||^2 that keeps the warp near the identity.

All gradients are computed in closed form: posterior adjoints give the
cotangents on the Gram entries, the analytic input-derivatives of the
base kernels push those onto the warped coordinates, and plain
backpropagation carries them into the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError, OptimizationError, ValidationError
from .functionals import FunctionalSpec
from .gp import FittedGp, chol_with_jitter, posterior_adjoints
from .kernels import Kernel, Product, Sum, Warped, as_points, wrap_nodes

__all__ = [
    "WarpNet",
    "WarpObjectiveSpec",
    "warp_forward",
    "warped_kernel",
    "warp_paths_excluding",
    "warp_objective",
    "warp_gradient",
    "minimize_warp",
]


class WarpNet:
    """Fully connected network h: R^D -> R^D with ReLU hidden layers.

    With all weights and biases zero, h vanishes identically, so the warp
    g(x) = x + h(x) starts at the identity.
    """

    def __init__(self, weights, biases):
        weights = [np.array(W, dtype=float) for W in weights]
        biases = [np.array(b, dtype=float) for b in biases]
        if not weights or len(weights) != len(biases):
            raise ValidationError("need one bias vector per weight matrix")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise ValidationError(f"layer {i}: weight/bias shapes inconsistent")
            if i > 0 and W.shape[1] != weights[i - 1].shape[0]:
                raise ValidationError(f"layer {i}: input size does not match previous layer")
        if weights[0].shape[1] != weights[-1].shape[0]:
            raise ValidationError("warp input and output dimension must match")
        self.weights = weights
        self.biases = biases

    # ------------------------------------------------------------------
    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @classmethod
    def zeros(cls, sizes) -> "WarpNet":
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2:
            raise ValidationError("need at least an input and an output size")
        return cls(
            [np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)],
            [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)],
        )

    @classmethod
    def random(cls, sizes, init_scale: float = 0.1, rng=None) -> "WarpNet":
        """Weights ~ N(0, init_scale^2 / fan_in), biases zero."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        net = cls.zeros(sizes)
        for i, W in enumerate(net.weights):
            fan_in = W.shape[1]
            net.weights[i] = rng.normal(0.0, init_scale / np.sqrt(fan_in), size=W.shape)
        return net

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------
    def h(self, X) -> np.ndarray:
        A = np.asarray(X, dtype=float)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            A = A @ W.T + b
            if i < len(self.weights) - 1:
                A = np.maximum(A, 0.0)
        return A

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X + self.h(X)

    def forward_cache(self, X):
        """Forward pass keeping the per-layer activations for backprop."""
        acts = [np.asarray(X, dtype=float)]
        pre = []
        A = acts[0]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = A @ W.T + b
            pre.append(Z)
            A = np.maximum(Z, 0.0) if i < len(self.weights) - 1 else Z
            acts.append(A)
        return A, acts, pre

    def backprop(self, cache, bar_out):
        """Weight/bias gradients of sum(bar_out * h(X)) at a cached forward pass.

        The rectifier subgradient is taken as 0 at exactly-zero
        pre-activations.
        """
        _, acts, pre = cache
        gW = [np.zeros_like(W) for W in self.weights]
        gb = [np.zeros_like(b) for b in self.biases]
        delta = np.asarray(bar_out, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                delta = delta * (pre[i] > 0.0)
            gW[i] = delta.T @ acts[i]
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
        return gW, gb

    # ------------------------------------------------------------------
    # flat-parameter view
    # ------------------------------------------------------------------
    def pack(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.weights]
                              + [b.ravel() for b in self.biases])

    def with_flat(self, flat) -> "WarpNet":
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValidationError(f"expected {self.n_params} parameters, got {flat.size}")
        weights, biases, k = [], [], 0
        for W in self.weights:
            weights.append(flat[k : k + W.size].reshape(W.shape))
            k += W.size
        for b in self.biases:
            biases.append(flat[k : k + b.size].copy())
            k += b.size
        return WarpNet(weights, biases)

    def pack_grads(self, gW, gb) -> np.ndarray:
        return np.concatenate([g.ravel() for g in gW] + [g.ravel() for g in gb])

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "sizes": [int(s) for s in self.sizes],
            "weights": [[float(v) for v in W.ravel()] for W in self.weights],
            "biases": [[float(v) for v in b] for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WarpNet":
        sizes = d["sizes"]
        weights = [
            np.asarray(d["weights"][i], dtype=float).reshape(sizes[i + 1], sizes[i])
            for i in range(len(sizes) - 1)
        ]
        return cls(weights, d["biases"])


def warp_forward(net: WarpNet, x) -> np.ndarray:
    """g(x) = x + h(x) for a single point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != net.dim:
        raise ValidationError(f"warp expects dimension {net.dim}, point has {x.size}")
    return net.transform(x[None, :])[0]


def warped_kernel(k0: Kernel, net: WarpNet, paths=None) -> Kernel:
    """Wrap the flagged nodes of ``k0`` so they see warped inputs.

    ``paths`` uses the dotted node-path scheme; None warps the whole
    kernel.  Unflagged nodes keep evaluating at the raw inputs.
    """
    if paths is None:
        return Warped(k0, net)
    paths = tuple(paths)
    if not paths:
        raise ValidationError("at least one kernel node must be flagged for warping")
    return wrap_nodes(k0, paths, net)


def warp_paths_excluding(k0: Kernel, unwarped_paths) -> tuple:
    """Largest node set covering the whole tree except the named subtrees.

    Used for partial warps: e.g. excluding a periodic factor warps every
    other summand/factor while that node keeps raw inputs.
    """
    excluded = set(unwarped_paths)
    found: set = set()
    out: list[str] = []

    def walk(node, prefix) -> bool:
        """Returns True when the subtree contains an excluded node."""
        if prefix in excluded:
            found.add(prefix)
            return True
        if isinstance(node, (Sum, Product)):
            prefixes = [node._child_prefix(prefix, i) for i in range(len(node.children))]
            hits = [walk(c, p) for c, p in zip(node.children, prefixes)]
            if not any(hits):
                return False
            for hit, p, c in zip(hits, prefixes, node.children):
                if not hit:
                    out.append(p)
            return True
        return False

    if not walk(k0, k0.kind):
        # nothing excluded anywhere: warp the root
        missing = excluded - found
        if missing:
            raise ValidationError(f"unwarped path(s) name no reachable node: {sorted(missing)}")
        return (k0.kind,)
    missing = excluded - found
    if missing:
        raise ValidationError(f"unwarped path(s) name no reachable node: {sorted(missing)}")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class WarpObjectiveSpec:
    """Loss + regularizer definition for the warp search.

    ``loss`` is "threshold-squared" or a callable hook
    ``(mu, std, threshold) -> (value, d/dmu, d/dstd)`` evaluated on the
    posterior moments at the test point.  ``grid`` holds the regularizer
    points; ``epsilon`` scales the neighborhood (larger epsilon = weaker
    regularization = wider search).  ``warp_paths`` flags the kernel nodes
    receiving warped inputs (None = whole kernel).
    """

    threshold: float
    grid: np.ndarray
    epsilon: float
    warp_paths: tuple | None = None
    loss: object = "threshold-squared"

    def __post_init__(self):
        grid = as_points(self.grid)
        if grid.shape[0] < 1:
            raise ValidationError("regularizer grid needs at least one point")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon!r}")
        if self.loss != "threshold-squared" and not callable(self.loss):
            raise ValidationError("loss must be 'threshold-squared' or a callable hook")
        if self.warp_paths is not None:
            object.__setattr__(self, "warp_paths", tuple(self.warp_paths))
            if not self.warp_paths:
                raise ValidationError("warp_paths must flag at least one node")
        object.__setattr__(self, "grid", grid)

    def loss_value_and_grads(self, functional: FunctionalSpec, mu, var, noise_variance):
        """(loss, dloss/dmu, dloss/dvar, fstar) at the posterior moments."""
        if callable(self.loss):
            std = float(np.sqrt(max(var, 0.0)))
            value, dmu, dstd = self.loss(mu, std, self.threshold)
            dvar = dstd / (2.0 * std) if std > 0.0 else 0.0
            fstar = functional.value(mu, var, noise_variance)
            return value, dmu, dvar, fstar
        fstar = functional.value(mu, var, noise_variance)
        df_dmu, df_dvar = functional.grads(mu, var, noise_variance)
        c = 2.0 * (fstar - self.threshold)
        return (fstar - self.threshold) ** 2, c * df_dmu, c * df_dvar, fstar


class _WarpProblem:
    """Objective/gradient evaluations shared by one warp search."""

    def __init__(self, gp0: FittedGp, functional: FunctionalSpec, spec: WarpObjectiveSpec):
        if spec.grid.shape[1] != gp0.data.dim:
            raise ValidationError("regularizer grid dimension does not match the data")
        self.gp0 = gp0
        self.functional = functional
        self.spec = spec
        self.X = gp0.data.X
        self.xs = functional.point[None, :]
        self.resid = gp0.data.y - gp0.mean_const
        self.noise_variance = gp0.noise_variance

    def _moments(self, net: WarpNet):
        kw = warped_kernel(self.gp0.kernel, net, self.spec.warp_paths)
        K = kw.gram(self.X)
        A = K + self.noise_variance * np.eye(self.X.shape[0])
        L, _ = chol_with_jitter(A)
        alpha = cho_solve((L, True), self.resid)
        kstar = kw.gram(self.xs, self.X)[0]
        kss = float(kw.gram(self.xs)[0, 0])
        mu = self.gp0.mean_const + float(kstar @ alpha)
        v = solve_triangular(L, kstar, lower=True)
        var = max(kss - float(v @ v), 0.0)
        return kw, L, alpha, kstar, mu, var

    def _regularizer(self, net: WarpNet):
        h = net.h(self.spec.grid)
        m = self.spec.grid.shape[0]
        return float(np.sum(h * h)) / (self.spec.epsilon * m), h

    def objective(self, net: WarpNet):
        _, _, _, _, mu, var = self._moments(net)
        loss, _, _, fstar = self.spec.loss_value_and_grads(
            self.functional, mu, var, self.noise_variance
        )
        reg, _ = self._regularizer(net)
        return loss + reg, fstar

    def objective_and_gradient(self, net: WarpNet):
        kw, L, alpha, kstar, mu, var = self._moments(net)
        loss, dmu, dvar, fstar = self.spec.loss_value_and_grads(
            self.functional, mu, var, self.noise_variance
        )
        beta = cho_solve((L, True), kstar)
        bar_K, bar_kstar, _ = posterior_adjoints(alpha, beta, dmu, dvar)
        # k** under a warp of stationary nodes is constant, so bar_kss drops out.

        barU_X = np.zeros_like(self.X)
        barU_s = np.zeros((1, self.X.shape[1]))

        def collect(node, Xa, Xb, bar, sink_a, sink_b):
            if isinstance(node, Warped):
                Ua = node.warp.transform(Xa)
                Ub = node.warp.transform(Xb)
                ga, gb = node.child.gram_input_grad(bar, Ua, Ub)
                sink_a += ga
                sink_b += gb
            elif isinstance(node, Sum):
                for c in node.children:
                    collect(c, Xa, Xb, bar, sink_a, sink_b)
            elif isinstance(node, Product):
                grams = [c._gram(Xa, Xb) for c in node.children]
                for i, c in enumerate(node.children):
                    others = node._others_product(Xa, Xb, i, grams)
                    collect(c, Xa, Xb, bar * others, sink_a, sink_b)
            # unwarped leaves: inputs are fixed training data, nothing to do

        collect(kw, self.X, self.X, bar_K, barU_X, barU_X)
        collect(kw, self.xs, self.X, bar_kstar[None, :], barU_s, barU_X)

        cache_X = net.forward_cache(self.X)
        cache_s = net.forward_cache(self.xs)
        gW, gb = net.backprop(cache_X, barU_X)
        gW_s, gb_s = net.backprop(cache_s, barU_s)
        for i in range(len(gW)):
            gW[i] += gW_s[i]
            gb[i] += gb_s[i]

        reg, h_grid = self._regularizer(net)
        cache_g = net.forward_cache(self.spec.grid)
        m = self.spec.grid.shape[0]
        gW_r, gb_r = net.backprop(cache_g, (2.0 / (self.spec.epsilon * m)) * h_grid)
        for i in range(len(gW)):
            gW[i] += gW_r[i]
            gb[i] += gb_r[i]

        return loss + reg, fstar, gW, gb


def warp_objective(gp0: FittedGp, functional: FunctionalSpec,
                   spec: WarpObjectiveSpec, net: WarpNet) -> float:
    """Loss of the functional under the warped kernel plus the grid regularizer.

    Hyperparameters and noise variance stay frozen at the original fit.
    """
    return _WarpProblem(gp0, functional, spec).objective(net)[0]


def warp_gradient(gp0: FittedGp, functional: FunctionalSpec,
                  spec: WarpObjectiveSpec, net: WarpNet) -> np.ndarray:
    """Flat gradient of the warp objective with respect to all weights and biases."""
    problem = _WarpProblem(gp0, functional, spec)
    _, _, gW, gb = problem.objective_and_gradient(net)
    return net.pack_grads(gW, gb)


_BACKOFFS = 20


def _descend(problem: _WarpProblem, net: WarpNet, steps: int, step_size: float | None):
    """Monotone gradient descent from one start; returns (net, obj, fstar, trace)."""
    obj, fstar, gW, gb = problem.objective_and_gradient(net)
    if not np.isfinite(obj):
        raise OptimizationError("non-finite objective at the initial weights")
    g = net.pack_grads(gW, gb)
    params = net.pack()
    if step_size is None:
        lr0 = 0.01 / (float(np.max(np.abs(g))) + 1e-12)
    else:
        lr0 = float(step_size)
    lr = lr0
    trace = [obj]
    for _ in range(steps):
        improved = False
        for _ in range(_BACKOFFS):
            cand = net.with_flat(params - lr * g)
            try:
                cobj, cfstar = problem.objective(cand)
            except NumericalError:
                cobj = np.inf
            if np.isfinite(cobj) and cobj < obj:
                net, params, obj, fstar = cand, cand.pack(), cobj, cfstar
                trace.append(obj)
                improved = True
                break
            lr *= 0.5
        if not improved:
            break
        lr = min(lr * 2.0, lr0)
        _, _, gW, gb = problem.objective_and_gradient(net)
        g = net.pack_grads(gW, gb)
    return net, obj, fstar, trace


def minimize_warp(
    gp0: FittedGp,
    functional: FunctionalSpec,
    spec: WarpObjectiveSpec,
    hidden_sizes=(50, 50),
    init_scale: float = 0.1,
    steps: int = 300,
    step_size: float | None = None,
    restarts: int = 5,
    seed: int = 0,
    warm_start: WarpNet | None = None,
) -> tuple[WarpNet, float, dict]:
    """Fit warp weights by gradient descent with geometric step backoff.

    Restart 0 starts from the zero network (identity warp); later restarts
    draw N(0, init_scale^2 / fan_in) weights.  Returns the network with
    the lowest final objective, its functional value, and per-restart
    diagnostics including the accepted-objective trace of the winner.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    problem = _WarpProblem(gp0, functional, spec)
    D = gp0.data.dim
    sizes = (D,) + tuple(int(s) for s in hidden_sizes) + (D,)

    starts: list[tuple[int, WarpNet]] = []
    if warm_start is not None:
        starts.append((-1, warm_start))
    starts.append((0, WarpNet.zeros(sizes)))
    for r in range(1, restarts):
        rng = np.random.default_rng([seed, 11, r])
        starts.append((r, WarpNet.random(sizes, init_scale, rng)))

    best = None
    info = {"restarts": []}
    for index, start in starts:
        entry = {"index": index, "aborted": False, "objective": None, "fstar": None}
        try:
            net, obj, fstar, trace = _descend(problem, start, steps, step_size)
        except (OptimizationError, NumericalError) as e:
            entry["aborted"] = True
            entry["message"] = str(e)
            info["restarts"].append(entry)
            continue
        entry["objective"] = obj
        entry["fstar"] = fstar
        entry["iterations"] = len(trace) - 1
        info["restarts"].append(entry)
        if best is None or obj < best[1]:
            best = (net, obj, fstar, trace, index)
    if best is None:
        raise OptimizationError("every warp restart diverged", info["restarts"])
    info["best_index"] = best[4]
    info["trace"] = best[3]
    info["objective"] = best[1]
    return best[0], best[2], info
