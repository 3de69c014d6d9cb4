"""Delayed-input history and the time-tau predictor.

At coarse time t_n the input is

    u(t_n) = K Y(t_n + tau),   Y' + A Y + A_rc Y = B u(. - tau),  Y(t_n) = yhat(t_n),

where the inputs acting on (t_n, t_n + tau) were all computed earlier and sit
in the history buffer.  The predictor is integrated with the same backward
Euler steps (and the same factorizations) as the coarse observer.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .actuation import ActuatorArray
from .errors import InvalidParameter, NumericalFailure
from .fem import CoefficientField, SemidiscreteOperators


def steps_per_delay(tau: float, t_s: float, tol: float = 1e-12) -> int:
    """tau / t_s as an integer, or raise if it is not one."""
    if tau < 0 or not t_s > 0:
        raise InvalidParameter(f"need tau >= 0 and t_s > 0, got tau={tau!r}, t_s={t_s!r}")
    ratio = tau / t_s
    n = int(round(ratio))
    if abs(ratio - n) > tol * max(1.0, ratio):
        raise InvalidParameter(f"tau={tau!r} is not an integer multiple of t_s={t_s!r}")
    return n


class InputHistory:
    """Ring buffer of coarse-step inputs u_0, u_1, ... .

    ``read(k)`` returns u_k for k in [head - N_tau - 1, head) and zero for
    k < 0 (the input vanishes before time zero).  ``delayed(n)`` is the input
    acting on the plant during coarse step n, i.e. u_{n - N_tau}.
    """

    def __init__(self, m: int, n_tau: int):
        self.m = int(m)
        self.n_tau = int(n_tau)
        self._buf = np.zeros((self.n_tau + 1, self.m))
        self.head = 0

    def push(self, u) -> None:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m,):
            raise InvalidParameter(f"input must have shape ({self.m},), got {u.shape}")
        self._buf[self.head % len(self._buf)] = u
        self.head += 1

    def read(self, k: int) -> np.ndarray:
        if k < 0:
            return np.zeros(self.m)
        if not self.head - len(self._buf) <= k < self.head:
            raise IndexError(
                f"input index {k} outside stored window "
                f"[{self.head - len(self._buf)}, {self.head})"
            )
        return self._buf[k % len(self._buf)].copy()

    def delayed(self, n: int) -> np.ndarray:
        return self.read(n - self.n_tau)


class CoarsePropagator:
    """Backward-Euler steps on one mesh with a fixed step ``dt``.

    The step from t_j - dt to t_j = j*dt uses A_rc(t_j); its sparse LU
    factorization is cached by j, so all predictor windows and the observer
    reuse it.  Entries older than the requested index minus ``keep`` are
    dropped.
    """

    def __init__(self, ops: SemidiscreteOperators, coeff: CoefficientField, dt: float,
                 keep: int = 1):
        self.ops = ops
        self.coeff = coeff
        self.dt = float(dt)
        self.keep = max(int(keep), 1)
        self._lu: OrderedDict[int, object] = OrderedDict()
        self._low = 0

    def factor(self, j: int):
        lu = self._lu.get(j)
        if lu is None:
            mat = self.ops.step_matrix(self.coeff, j * self.dt, self.dt)
            lu = spla.splu(mat)
            self._lu[j] = lu
        return lu

    def release_before(self, j: int) -> None:
        while self._lu and next(iter(self._lu)) < j:
            self._lu.popitem(last=False)

    def step(self, j: int, y: np.ndarray, load: np.ndarray | None = None) -> np.ndarray:
        """Advance to t_j: solve (M + dt(A + A_rc(t_j))) y+ = M y + dt*load."""
        rhs = self.ops.mass @ y
        if load is not None:
            rhs += self.dt * load
        return self.factor(j).solve(rhs)


@dataclass
class PredictorConfig:
    tau: float
    t_s: float
    propagator: CoarsePropagator
    actuators: ActuatorArray

    def __post_init__(self):
        self.n_tau = steps_per_delay(self.tau, self.t_s)


def predict(cfg: PredictorConfig, t_index: int, yhat: np.ndarray, hist: InputHistory) -> np.ndarray:
    """Forecast of the state at t_index*t_s + tau, from ``yhat`` at t_index*t_s.

    Runs N_tau backward-Euler steps with the buffered inputs held constant on
    each step (zero-order hold).
    """
    Y = np.array(yhat, dtype=float)
    prop = cfg.propagator
    for k in range(cfg.n_tau):
        u = hist.read(t_index - cfg.n_tau + k)
        load = cfg.actuators.control_load(u) if np.any(u) else None
        Y = prop.step(t_index + k + 1, Y, load)
    if not np.all(np.isfinite(Y)):
        raise NumericalFailure(f"predictor diverged at coarse step {t_index}")
    return Y


def compute_input(cfg: PredictorConfig, t_index: int, yhat: np.ndarray,
                  hist: InputHistory) -> np.ndarray:
    """u(t_index*t_s) = K predict(...).  The caller pushes the result."""
    return cfg.actuators.feedback(predict(cfg, t_index, yhat, hist))
