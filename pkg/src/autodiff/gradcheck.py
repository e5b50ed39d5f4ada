# src/autodiff/gradcheck.py
"""
Central finite-difference gradient checking.

Each check evaluates loss = sum(fn(*inputs) * R) for a fixed random R and
compares the analytic gradient against central differences along random
directions and at a few random coordinates. Failures are reported, never raised.

Piecewise ops (relu, leaky relu, abs, max-pool, clamped log) expose the branch
they took. When either side of a difference lands on a different branch than
the base point, the step is shrunk and then the direction redrawn.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Graph, Tensor, backward
from src.errors import UsageError
from src.utils.logging_utils import get_logger

LOG = get_logger("gradcheck")

REL_FLOOR = 1e-6
STEP_SHRINK = (1.0, 0.1, 0.01)
MAX_REDRAWS = 8

Branches = Tuple[np.ndarray, ...]


@dataclass
class GradCheckReport:
    name: str
    passed: bool
    max_rel_error: float
    tolerance: float
    n_points: int
    details: List[str] = field(default_factory=list)
    skipped: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}\t{self.name}\tmax_rel_error={self.max_rel_error:.3e}\ttol={self.tolerance:.0e}"
                f"\tpoints={self.n_points}\tskipped={self.skipped}")


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def branches_of(out: Tensor) -> Branches:
    """Branch arrays of every piecewise op in out's graph, in topological order."""
    patterns = []
    for node in Graph.from_output(out).nodes:
        b = node.fn.branch()
        if b is not None:
            patterns.append(np.array(b, copy=True))
    return tuple(patterns)


def same_branches(a: Branches, b: Branches) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], tolerance: float = 1e-4,
               step: float = 1e-5, n_directions: int = 3, n_coords: int = 4, seed: int = 0,
               name: str = "op") -> GradCheckReport:
    """Check fn's gradient w.r.t. every input at one point. Inputs must be float64 arrays."""
    arrays = [np.asarray(a) for a in inputs]
    if any(a.dtype != np.float64 for a in arrays):
        raise UsageError("grad_check needs float64 inputs")
    rng = np.random.default_rng(seed)

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape)
    base_branches = branches_of(out)
    backward(ops.sum_(ops.mul(out, Tensor(weights))))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    def evaluate(arrs) -> Tuple[float, Branches]:
        # leaves need grad so the piecewise ops stay on the graph
        res = fn(*[Tensor(a, requires_grad=True) for a in arrs])
        return float(np.sum(res.data * weights)), branches_of(res)

    def central(idx: int, direction: np.ndarray):
        for factor in STEP_SHRINK:
            h = step * factor
            f_plus, b_plus = evaluate([a if i != idx else a + h * direction for i, a in enumerate(arrays)])
            f_minus, b_minus = evaluate([a if i != idx else a - h * direction for i, a in enumerate(arrays)])
            if same_branches(b_plus, base_branches) and same_branches(b_minus, base_branches):
                return (f_plus - f_minus) / (2 * h)
        return None

    worst, details, points, skipped = 0.0, [], 0, 0
    for idx, base in enumerate(arrays):
        flat_size = base.size
        coords = list(rng.permutation(flat_size))
        n_unit = min(n_coords, flat_size)
        for kind in ["dir"] * n_directions + ["coord"] * n_unit:
            numeric, direction = None, None
            for _ in range(MAX_REDRAWS):
                if kind == "dir":
                    direction = rng.standard_normal(base.shape)
                elif coords:
                    direction = np.zeros(flat_size)
                    direction[coords.pop()] = 1.0
                    direction = direction.reshape(base.shape)
                else:
                    break
                numeric = central(idx, direction)
                if numeric is not None:
                    break
                LOG.debug("%s input %d: %s crosses a kink, redrawing", name, idx, kind)
            if numeric is None:
                skipped += 1
                continue
            exact = float(np.sum(analytic[idx] * direction))
            err = relative_error(exact, numeric)
            points += 1
            if err > worst:
                worst = err
            if err > tolerance:
                details.append(f"input {idx}: analytic={exact:.6e} numeric={numeric:.6e} rel={err:.2e}")
    if skipped:
        LOG.warning("%s: %d directions skipped, no kink-free draw found", name, skipped)
    report = GradCheckReport(name, worst <= tolerance and points > 0, worst, tolerance, points, details, skipped)
    LOG.debug(report.line())
    return report


# -------------------------
# Primitive suite
# -------------------------
def _primitive_cases(rng: np.random.Generator) -> Dict[str, tuple]:
    """name -> (fn, inputs). Inputs drawn in [-2, 2]."""
    u = lambda *shape: rng.uniform(-2, 2, size=shape)
    pos = lambda *shape: rng.uniform(0.2, 2, size=shape)
    # max-pool inputs without near-ties so the argmax is stable under the finite-difference step
    pool_in = rng.permutation(np.linspace(-2, 2, 2 * 3 * 4 * 4)).reshape(2, 3, 4, 4)
    mod = lambda: ops.SpadeModulation(Tensor(u(2, 3, 3, 3) * 0.3), Tensor(u(1, 2, 1, 1)),
                                      Tensor(u(2, 3, 3, 3) * 0.3), Tensor(u(1, 2, 1, 1)))
    spade_mod = mod()
    return {
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=1, pad=1), [u(2, 3, 5, 5), u(4, 3, 3, 3), u(1, 4, 1, 1)]),
        "conv2d_stride2": (lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=0), [u(1, 2, 6, 6), u(3, 2, 3, 3), u(1, 3, 1, 1)]),
        "pool_max2": (ops.pool_max2, [pool_in]),
        "upsample2": (ops.upsample2, [u(1, 2, 3, 3)]),
        "normalize_batch": (lambda x, g, b: ops.normalize_batch(x, g, b), [u(2, 3, 4, 4), u(1, 3, 1, 1), u(1, 3, 1, 1)]),
        "normalize_spade": (lambda x, c: ops.normalize_spade(x, c, spade_mod), [u(1, 2, 4, 4), u(1, 3, 8, 8)]),
        "dense": (ops.dense, [u(2, 3, 2, 2), u(1, 1, 12, 5), u(1, 5, 1, 1)]),
        "relu": (lambda x: ops.activation(x, "relu"), [u(1, 2, 3, 3)]),
        "leaky_relu": (lambda x: ops.activation(x, "leaky_relu"), [u(1, 2, 3, 3)]),
        "sigmoid": (lambda x: ops.activation(x, "sigmoid"), [u(1, 2, 3, 3)]),
        "tanh": (lambda x: ops.activation(x, "tanh"), [u(1, 2, 3, 3)]),
        "softmax": (lambda x: ops.activation(x, "softmax"), [u(2, 9, 1, 1)]),
        "concat_channels": (ops.concat_channels, [u(1, 2, 3, 3), u(1, 3, 3, 3)]),
        "slice_channels": (lambda x: ops.slice_channels(x, 1, 3), [u(1, 4, 2, 2)]),
        "add_residual": (ops.add_residual, [u(1, 2, 3, 3), u(1, 2, 3, 3)]),
        "pool_global_avg": (ops.pool_global_avg, [u(2, 3, 4, 4)]),
        "resize_bilinear": (lambda x: ops.resize_bilinear(x, (5, 7)), [u(1, 2, 3, 4)]),
        "mul": (ops.mul, [u(1, 2, 3, 3), u(1, 2, 1, 1)]),
        "abs": (ops.abs_, [u(1, 2, 3, 3)]),
        "log": (ops.log, [pos(1, 2, 3, 3)]),
        "mean": (ops.mean, [u(1, 2, 3, 3)]),
    }


def _network_cases(seed: int) -> Dict[str, tuple]:
    # imported here: networks depend on this package
    from src.networks.classifier import ClassifierSpec, build_policy_classifier
    from src.networks.discriminator import DiscriminatorSpec, build_discriminator
    from src.networks.generator import GeneratorSpec, build_generator

    rng = np.random.default_rng(seed)
    g = build_generator(GeneratorSpec(), seed, dtype=np.float64)
    d = build_discriminator(DiscriminatorSpec(), seed, dtype=np.float64)
    q = build_policy_classifier(ClassifierSpec(), seed, dtype=np.float64)
    z = rng.standard_normal((1, 1, 8, 8))
    return {
        "generator": (lambda x: g.forward(x, z=z), [rng.uniform(-1, 1, size=(1, 3, 8, 8))]),
        "discriminator": (lambda x: d.forward(x), [rng.uniform(-1, 1, size=(2, 6, 8, 8))]),
        "policy_classifier": (lambda x: q.forward(x).probs, [rng.uniform(-1, 1, size=(2, 3, 16, 16))]),
    }


def run_primitive_suite(seed: int = 0, n_points: int = 5, tolerance: float = 1e-4,
                        include_networks: bool = True) -> List[GradCheckReport]:
    """Check every primitive (and optionally G, D, Q) at n_points random points each."""
    reports: List[GradCheckReport] = []
    for point in range(n_points):
        rng = np.random.default_rng([seed, point])
        cases = _primitive_cases(rng)
        if include_networks:
            cases.update(_network_cases(seed + point))
        for name, (fn, inputs) in cases.items():
            reports.append(grad_check(fn, inputs, tolerance=tolerance, seed=seed + point, name=f"{name}#{point}"))
    failed = [r for r in reports if not r.passed]
    LOG.info("gradient suite: %d checks, %d failed", len(reports), len(failed))
    return reports
