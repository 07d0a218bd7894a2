"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .nn import Module
from .tensor import Rng


@dataclass
class CaseResult:
    tensor: str
    worst_index: list[int] | None
    analytic: float
    numeric: float
    rel_err: float
    passed: bool
    checked: int = 0
    skipped_kinks: int = 0
    first_failure: list[int] | None = None

    def to_json(self) -> dict:
        return {
            "tensor": self.tensor,
            "worst_index": self.worst_index,
            "analytic": self.analytic,
            "numeric": self.numeric,
            "rel_err": self.rel_err,
            "pass": self.passed,
            "checked": self.checked,
            "skipped_kinks": self.skipped_kinks,
        }


@dataclass
class GradCheckReport:
    node: str
    cases: list[CaseResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    @property
    def worst(self) -> float:
        return max((c.rel_err for c in self.cases), default=0.0)

    def failures(self) -> list[CaseResult]:
        return [c for c in self.cases if not c.passed]

    def to_json(self) -> dict:
        return {"node": self.node, "pass": self.passed, "cases": [c.to_json() for c in self.cases]}


def _same_kinks(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(node: Module | Callable, input_shapes: Sequence[Sequence[int]], seed: int = 0,
               h: float = 1e-5, tol: float = 1e-6, name: str | None = None,
               max_per_tensor: int | None = None, inputs: Sequence[np.ndarray] | None = None,
               check_inputs: bool = True) -> GradCheckReport:
    """Compare VJP gradients with central differences for every input and parameter.

    The node's output ``y`` is reduced to ``L = <y, c>`` with a random
    cotangent ``c`` (scalar outputs use ``c = 1``). Each probed element gets
    ``rel = |analytic - numeric| / max(1, |analytic|)``. Probes whose +h or -h
    evaluation changes the active region of any ReLU/ReLU6/max op are skipped
    as kink crossings, after retrying with steps shrunk tenfold down to 1e-7.
    ``max_per_tensor`` caps the probes per tensor with a
    seeded random subset that always includes the largest-gradient element.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-7, 1e-3], got {h}")
    rng = Rng(seed)
    name = name or type(node).__name__
    if inputs is None:
        inputs = [rng.uniform(-1.0, 1.0, tuple(s)) for s in input_shapes]
    xs = [ad.Var(np.array(x, dtype=np.float64), requires_grad=check_inputs) for x in inputs]
    params = list(node.named_params()) if isinstance(node, Module) else []
    for _, p in params:
        p.grad = None

    with ad.record_kinks() as base_kinks:
        out = node(*xs)
    cot = np.ones_like(out.data) if out.data.size == 1 else rng.uniform(-1.0, 1.0, out.shape)
    ad.backward(out, cot)

    def loss() -> tuple[float, list]:
        with ad.record_kinks() as kinks:
            y = node(*xs)
        return float(np.vdot(y.data, cot)), kinks

    targets = []
    if check_inputs:
        targets += [(f"input{i}", x) for i, x in enumerate(xs)]
    targets += [(pname, p) for pname, p in params]
    report = GradCheckReport(name)
    pick = np.random.Generator(np.random.PCG64(seed + 1))
    for tname, var in targets:
        analytic = var.grad if var.grad is not None else np.zeros_like(var.data)
        indices = list(np.ndindex(*var.shape)) if var.data.ndim else [()]
        if max_per_tensor is not None and len(indices) > max_per_tensor:
            top = np.unravel_index(int(np.argmax(np.abs(analytic))), var.shape)
            chosen = pick.choice(len(indices), size=max_per_tensor - 1, replace=False)
            indices = [tuple(int(i) for i in top)] + [indices[i] for i in sorted(chosen)]
        worst = CaseResult(tname, None, 0.0, 0.0, 0.0, True)
        for idx in indices:
            orig = var.data[idx]
            step = h
            while True:
                var.data[idx] = orig + step
                fp, kp = loss()
                var.data[idx] = orig - step
                fm, km = loss()
                var.data[idx] = orig
                clean = _same_kinks(kp, base_kinks) and _same_kinks(km, base_kinks)
                # a crossing far from the probe may vanish at a smaller step
                if clean or step / 10 < 1e-7:
                    break
                step /= 10
            if not clean:
                worst.skipped_kinks += 1
                continue
            worst.checked += 1
            num = (fp - fm) / (2 * step)
            a = float(analytic[idx])
            rel = abs(a - num) / max(1.0, abs(a))
            if rel > tol and worst.first_failure is None:
                worst.first_failure = [int(i) for i in idx]
            if worst.worst_index is None or rel > worst.rel_err:
                worst.worst_index = [int(i) for i in idx]
                worst.analytic, worst.numeric, worst.rel_err = a, num, rel
        worst.passed = worst.rel_err <= tol and worst.checked > 0
        report.cases.append(worst)
    for x in xs:
        x.grad = None
    for _, p in params:
        p.grad = None
    return report
