"""Flow-matching mathematics, independent of any particular network: the
linear interpolation schedule, the regression loss, fixed-step ODE solvers
with exact NFE accounting, the decoupled-weight-decay optimizer, and the
warmup+cosine learning-rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOLVERS = ("euler", "heun", "rk4")


class InvalidSolverSpec(ValueError):
    pass


@dataclass(frozen=True)
class SolverSpec:
    method: str
    nfe: int

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise InvalidSolverSpec(f"unknown solver {self.method!r}")
        if self.nfe < 1:
            raise InvalidSolverSpec("nfe must be >= 1")
        if self.method == "heun" and self.nfe % 2:
            raise InvalidSolverSpec("heun needs an even nfe (2 evaluations per step)")
        if self.method == "rk4" and self.nfe % 4:
            raise InvalidSolverSpec("rk4 needs nfe divisible by 4")

    @property
    def steps(self) -> int:
        return {"euler": self.nfe, "heun": self.nfe // 2, "rk4": self.nfe // 4}[self.method]


def interpolate(z: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Linear schedule: x_t = t*z + (1-t)*eps."""
    z = np.asarray(z, np.float64)
    eps = np.asarray(eps, np.float64)
    if z.shape != eps.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {eps.shape}")
    return t * z + (1.0 - t) * eps


def cfm_loss(u_pred: np.ndarray, z: np.ndarray, eps: np.ndarray) -> float:
    """Mean squared error between the predicted field and the straight-line
    velocity target z - eps (mean over all components)."""
    u_pred = np.asarray(u_pred, np.float64)
    z = np.asarray(z, np.float64)
    eps = np.asarray(eps, np.float64)
    if not (u_pred.shape == z.shape == eps.shape):
        raise ValueError("shape mismatch between prediction and targets")
    diff = u_pred - (z - eps)
    return float(np.mean(diff * diff))


def make_training_pair(z: np.ndarray, rng: np.random.Generator):
    """Draw (x_t, t, target) with t ~ U(0,1), eps ~ N(0, I); the regression
    target z - eps does not depend on t."""
    z = np.asarray(z, np.float64)
    t = float(rng.uniform(0.0, 1.0))
    eps = rng.standard_normal(z.shape)
    return interpolate(z, eps, t), t, z - eps


def ode_integrate(field, x0: np.ndarray, spec: SolverSpec) -> np.ndarray:
    """Integrate dx/dt = field(x, t) from t=0 to t=1 on a uniform grid.

    The NFE counts field evaluations, not steps, so solvers compared at equal
    NFE spend equal compute: Euler does nfe steps, Heun nfe/2, RK4 nfe/4.
    """
    x = np.array(x0, np.float64, copy=True)
    steps = spec.steps
    h = 1.0 / steps
    t = 0.0
    if spec.method == "euler":
        for _ in range(steps):
            x = x + h * field(x, t)
            t += h
    elif spec.method == "heun":
        for _ in range(steps):
            k1 = field(x, t)
            k2 = field(x + h * k1, t + h)
            x = x + (h / 2.0) * (k1 + k2)
            t += h
    else:  # rk4
        for _ in range(steps):
            k1 = field(x, t)
            k2 = field(x + (h / 2.0) * k1, t + h / 2.0)
            k3 = field(x + (h / 2.0) * k2, t + h / 2.0)
            k4 = field(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
    return x


def lr_schedule(step: int, total: int, peak: float, warmup_frac: float = 0.05) -> float:
    """Linear warmup to the peak over warmup_frac*total steps, then cosine
    annealing to zero at step == total."""
    if not 0 <= step <= total:
        raise ValueError("step outside [0, total]")
    warmup = warmup_frac * total
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    progress = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class OptimState:
    """Decoupled-weight-decay adaptive-moment optimizer state over a named
    parameter dict."""
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.1
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict, beta1: float = 0.9, beta2: float = 0.999,
             weight_decay: float = 0.1) -> "OptimState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   beta1=beta1, beta2=beta2, weight_decay=weight_decay)


def optim_step(params: dict, grads: dict, state: OptimState, lr: float):
    """One bias-corrected moment update plus decoupled decay p -= lr*wd*p.

    Non-finite gradients skip the step (parameters and state untouched) and
    report it via the returned flag: (params, state, applied).
    """
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(g)):
            return params, state, False
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    new_params = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / bias1
        v_hat = state.v[k] / bias2
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        new_params[k] = p - lr * update - lr * state.weight_decay * p
    return new_params, state, True
