"""Seeded gradient suite: every primitive plus the full model loss.

Analytic gradients are computed at the requested precision; the finite
differences always run in float64 on the same (precision-rounded) inputs,
so the float32 result is compared against an accurate reference rather
than against float32 differencing noise.

Inputs are drawn away from the non-differentiable points of PReLU and the
Euclidean norm. For the model, parameters are perturbed off their
initial values and the batch-norm running statistics are randomized: with
default statistics the all-zero first motion step would sit exactly on the
PReLU kink and a central difference would straddle it.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .autodiff import (
    Tensor,
    batch_norm2d,
    check_parameters,
    conv2d,
    cumsum,
    dropout,
    l2_norm,
    log,
    matmul,
    mul,
    numeric_gradient,
    permute,
    prelu,
    relative_error,
    reshape,
    softmax,
    sub,
    tensor_sum,
)
from .autodiff.tensor import add
from .data import T_IN, T_OUT, Scene
from .losses import total_loss
from .model import STAGE, ModelConfig

TOLERANCES = {"float32": 1e-3, "float64": 1e-4}
STEP = 1e-5
MODEL_ENTRIES = 64

# Conv biases feeding straight into a training-mode batch norm: the
# normalization removes any per-channel shift, so their exact gradient is
# zero and a relative error against it only measures rounding noise.
BN_ABSORBED = ("attn.tconv.bias", "gcn.tconv.bias")


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


@dataclass
class SuiteReport:
    dtype: str
    results: List[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def lines(self) -> List[str]:
        out = []
        for r in self.results:
            tag = "ok  " if r.passed else "FAIL"
            where = f" at {r.worst}" if r.worst else ""
            out.append(f"{tag} [{self.dtype}] {r.name}: max rel error {r.max_rel_error:.3e} (tol {r.tol:.0e}){where}")
        return out


def _off_zero(rng, shape, low=0.1, high=1.0) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, shape)


def check_op(name: str, fn: Callable[..., Tensor], inputs: Dict[str, np.ndarray], dtype,
             tol: float, h: float = STEP, seed: int = 0) -> List[CheckResult]:
    """Check d(w . fn)/d(input) for every named input of ``fn``.

    ``w`` is a fixed random projection so every output element contributes.
    """
    dtype = np.dtype(dtype)
    rounded = {k: np.asarray(v).astype(dtype) for k, v in inputs.items()}
    ts = {k: Tensor(v.copy(), requires_grad=True) for k, v in rounded.items()}
    out = fn(**ts)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    tensor_sum(mul(out, Tensor(weights.astype(dtype)))).backward()

    base = {k: v.astype(np.float64) for k, v in rounded.items()}
    results = []
    for key in inputs:
        def scalar(v, _key=key) -> float:
            args = {j: Tensor(v if j == _key else base[j], dtype=np.float64) for j in base}
            return float(np.sum(fn(**args).values.astype(np.float64) * weights))

        numeric = numeric_gradient(scalar, base[key].copy(), h)
        err = relative_error(ts[key].grad, numeric)
        worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        results.append(CheckResult(f"{name}/{key}", float(err.max()), tol, str(tuple(int(i) for i in worst))))
    return results


def primitive_checks(dtype, seed: int = 0) -> List[CheckResult]:
    tol = TOLERANCES[np.dtype(dtype).name]
    rng = np.random.default_rng(seed)
    n = rng.standard_normal
    rm, rv = rng.uniform(-0.5, 0.5, 3), rng.uniform(0.5, 1.5, 3)

    def bn(training):
        def f(x, gamma, beta):
            # fresh copies: training mode updates the running statistics in place
            return batch_norm2d(x, gamma, beta, rm.copy(), rv.copy(), training)
        return f

    cases = [
        ("add", lambda a, b: add(a, b), {"a": n((3, 4)), "b": n((4,))}),
        ("sub", lambda a, b: sub(a, b), {"a": n((2, 3, 4)), "b": n((3, 1))}),
        ("mul", lambda a, b: mul(a, b), {"a": n((3, 4)), "b": n((3, 4))}),
        ("matmul", lambda a, b: matmul(a, b), {"a": n((2, 3, 4)), "b": n((2, 4, 5))}),
        ("reshape", lambda x: reshape(x, (6, 4)), {"x": n((2, 3, 4))}),
        ("permute", lambda x: permute(x, (2, 0, 1)), {"x": n((2, 3, 4))}),
        ("sum", lambda x: tensor_sum(x, axis=1), {"x": n((3, 4, 2))}),
        ("cumsum", lambda x: cumsum(x, axis=1), {"x": n((3, 5, 2))}),
        ("l2_norm", lambda x: l2_norm(x, axis=2), {"x": _off_zero(rng, (3, 4, 5))}),
        ("softmax", lambda x: softmax(x, axis=1), {"x": 3 * n((2, 5, 3))}),
        ("log", lambda x: log(x, 1e-12), {"x": rng.uniform(0.2, 2.0, (3, 4))}),
        ("prelu", lambda x, alpha: prelu(x, alpha), {"x": _off_zero(rng, (2, 3, 4)), "alpha": np.array([0.3])}),
        ("dropout", lambda x: dropout(x, 0.3, True, np.random.default_rng(seed + 1)), {"x": n((4, 6))}),
        ("conv2d_3x1", lambda x, w, b: conv2d(x, w, b, (1, 0)),
         {"x": n((1, 2, 6, 3)), "w": n((2, 3, 3, 1)), "b": n(3)}),
        ("conv2d_3x3", lambda x, w, b: conv2d(x, w, b, (1, 1)),
         {"x": n((2, 3, 4, 5)), "w": n((3, 2, 3, 3)), "b": n(2)}),
        ("conv2d_1x1", lambda x, w, b: conv2d(x, w, b, (0, 0)),
         {"x": n((1, 2, 4, 3)), "w": n((2, 2, 1, 1)), "b": n(2)}),
        ("batch_norm_train", bn(True), {"x": n((2, 3, 4, 3)), "gamma": rng.uniform(0.5, 1.5, 3), "beta": n(3)}),
        ("batch_norm_eval", bn(False), {"x": n((2, 3, 4, 3)), "gamma": rng.uniform(0.5, 1.5, 3), "beta": n(3)}),
    ]
    out: List[CheckResult] = []
    for i, (name, fn, inputs) in enumerate(cases):
        out.extend(check_op(name, fn, inputs, dtype, tol, seed=seed + i))
    return out


def gradient_scene(seed: int = 0, agents: int = 2) -> Scene:
    """A seeded random-walk scene used as the end-to-end fixture."""
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.normal(0.0, 0.3, (agents, T_IN + T_OUT, 2)), axis=1)
    return Scene(0, list(range(1, agents + 1)), pos, "synthetic")


def gradient_model(dtype, seed: int = 0, modes: int = 2, dropout_rate: float = 0.0) -> STAGE:
    """Model with perturbed parameters and randomized running statistics."""
    rng = np.random.default_rng(seed + 1000)
    model = STAGE(ModelConfig(modes=modes, dropout_rate=dropout_rate), seed=seed, dtype=dtype)
    for p in model.parameters():
        p.values = (p.values.astype(np.float64) + rng.uniform(-0.1, 0.1, p.shape)).astype(dtype)
    for name, buf in model.named_buffers().items():
        if name.endswith("running_mean"):
            buf[...] = rng.uniform(-0.5, 0.5, buf.shape)
        else:
            buf[...] = rng.uniform(0.5, 1.5, buf.shape)
    return model


def model_check(dtype, seed: int = 0, training: bool = False, max_entries: Optional[int] = MODEL_ENTRIES,
                h: float = STEP, skip=()) -> List[CheckResult]:
    """Loss gradient with respect to every model parameter (K=2, M=2).

    In training mode dropout is active with a mask that is re-drawn from
    the same seed on every evaluation, so the loss is a fixed function.
    """
    dtype = np.dtype(dtype)
    tol = TOLERANCES[dtype.name]
    scene = gradient_scene(seed)
    model = gradient_model(dtype, seed, dropout_rate=0.1 if training else 0.0)
    oracle = copy.deepcopy(model).astype(np.float64)
    model.train(training)
    oracle.train(training)

    def loss(m):
        return lambda: total_loss(m(scene, np.random.default_rng(seed + 7)), scene).total

    params = {k: v for k, v in model.named_parameters().items() if k not in skip}
    rep = check_parameters(loss(model), params, h=h, tol=tol, oracle_fn=loss(oracle),
                           oracle_params=oracle.named_parameters(), max_entries=max_entries, seed=seed)
    mode = "train" if training else "eval"
    out = []
    for name, err in rep.per_name.items():
        worst = ".".join(str(i) for i in rep.worst_index) if rep.worst_index and rep.worst_index[0] == name else ""
        out.append(CheckResult(f"model[{mode}]/{name}", err, tol, worst))
    return out


def absorbed_bias_gradients(dtype, seed: int = 0) -> Dict[str, float]:
    """Largest |gradient| of the conv biases that feed a training-mode batch norm."""
    scene = gradient_scene(seed)
    model = gradient_model(np.dtype(dtype), seed).train()
    model.zero_grad()
    total_loss(model(scene), scene).total.backward()
    params = model.named_parameters()
    return {k: float(np.abs(params[k].grad).max()) for k in BN_ABSORBED}


def run_suite(dtype=np.float32, seed: int = 0, max_entries: Optional[int] = MODEL_ENTRIES) -> SuiteReport:
    """Primitives, the model in eval mode and the model in training mode."""
    dtype = np.dtype(dtype)
    t0 = time.perf_counter()
    report = SuiteReport(dtype.name)
    report.results.extend(primitive_checks(dtype, seed))
    report.results.extend(model_check(dtype, seed, training=False, max_entries=max_entries))
    report.results.extend(model_check(dtype, seed, training=True, max_entries=max_entries, skip=BN_ABSORBED))
    report.elapsed = time.perf_counter() - t0
    return report
