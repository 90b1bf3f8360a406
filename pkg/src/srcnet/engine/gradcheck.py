"""Central-finite-difference gradient checking.

Compares analytic gradients (one backward pass) against central
differences f(x+h)-f(x-h) / 2h, elementwise, for every checked tensor.
The error metric is |analytic - numeric| / max(1, |analytic|, |numeric|),
so it behaves as a relative error for large gradients and an absolute
error near zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradcheckResult:
    max_err: float
    tol: float
    n_checked: int
    worst: tuple = ()          # (tensor label, flat index)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_err) and self.max_err < self.tol)

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        return (f"gradcheck {state}: max err {self.max_err:.3e} "
                f"(tol {self.tol:.1e}, {self.n_checked} entries)")


def gradcheck(f, wrt, h: float = 1e-5, tol: float = 1e-4,
              max_entries: int | None = None,
              rng: np.random.Generator | None = None,
              labels=None) -> GradcheckResult:
    """Check d f() / d t for every tensor t in `wrt`.

    f is a zero-argument callable returning a scalar Tensor; it must read
    the tensors in `wrt` (directly or through modules that own them) so
    that in-place perturbation of their .data changes the output. When a
    tensor has more elements than `max_entries`, a deterministic random
    subset is checked.
    """
    wrt = list(wrt)
    if labels is None:
        labels = [f"t{i}" for i in range(len(wrt))]
    for t in wrt:
        if not t.requires_grad:
            raise ValueError("gradcheck: all checked tensors need requires_grad")
        t.grad = None

    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("gradcheck: f must return a scalar Tensor")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in wrt]
    for t in wrt:
        t.grad = None

    if rng is None:
        rng = np.random.default_rng(0)

    max_err, worst = 0.0, ()
    failures = []
    n_checked = 0
    for t, a, label in zip(wrt, analytic, labels):
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = a.reshape(-1)[i]
            if not np.isfinite(numeric) or not np.isfinite(ana):
                failures.append((label, int(i), "non-finite"))
                max_err = np.inf
                worst = (label, int(i))
                continue
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            n_checked += 1
            if err > max_err:
                max_err, worst = err, (label, int(i))
            if err >= tol:
                failures.append((label, int(i), float(err)))
    return GradcheckResult(max_err=float(max_err), tol=tol,
                           n_checked=n_checked, worst=worst, failures=failures)
