"""Luenberger observer on the coarse mesh with noisy average sensors.

    yhat' + A yhat + A_rc yhat = B u(. - tau) + L (W yhat - w_zeta)

Backward Euler; since L W = -lam_L P_W, the injection acting on the new
iterate is a rank-s term and is handled by a Woodbury correction of the
cached step factorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actuation import ActuatorArray, SensorArray
from .errors import NumericalFailure
from .predictor import CoarsePropagator


class NoiseGenerator:
    """Uniform sensor noise zeta_mag * (-1 + 2 rand) from a seeded Mersenne
    Twister (numpy's legacy ``RandomState``)."""

    def __init__(self, zeta_mag: float, seed: int = 1):
        if zeta_mag < 0:
            raise ValueError(f"zeta_mag must be nonnegative, got {zeta_mag!r}")
        self.zeta_mag = float(zeta_mag)
        self.seed = int(seed)
        self._rng = np.random.RandomState(self.seed)

    def sample(self, s: int) -> np.ndarray:
        if self.zeta_mag == 0.0:
            return np.zeros(s)
        return self.zeta_mag * (-1.0 + 2.0 * self._rng.random_sample(s))


def sample_noise(gen: NoiseGenerator, s: int) -> np.ndarray:
    return gen.sample(s)


@dataclass
class ObserverState:
    yhat: np.ndarray
    t_index: int = 0


class Observer:
    def __init__(self, propagator: CoarsePropagator, sensors: SensorArray,
                 actuators: ActuatorArray):
        self.prop = propagator
        self.sensors = sensors
        self.actuators = actuators
        self._wood: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _woodbury(self, j: int):
        """Z = S^{-1} C_W and the capacitance inverse for step index j."""
        cached = self._wood.get(j)
        if cached is None:
            sens = self.sensors
            lu = self.prop.factor(j)
            Z = lu.solve(sens.loads)
            # S + c C V^{-1} C^T,  c = dt*lam_L
            c = self.prop.dt * sens.gain
            cap = np.linalg.inv(sens.gram / c + sens.loads.T @ Z)
            cached = (Z, cap)
            self._wood = {j: cached}
        return cached

    def step(self, state: ObserverState, w_meas: np.ndarray, u_delayed: np.ndarray) -> ObserverState:
        """Advance one coarse step with measurement ``w_meas`` taken at the
        start of the step and ``u_delayed`` held over it."""
        j = state.t_index + 1
        dt = self.prop.dt
        sens = self.sensors
        load = np.zeros(self.prop.ops.dof_count)
        if np.any(u_delayed):
            load += self.actuators.control_load(u_delayed)
        if sens.gain:
            # -L w = lam_L C V^{-1} w
            load -= sens.injection_load(w_meas)
        x = self.prop.step(j, state.yhat, load)
        if sens.gain:
            Z, cap = self._woodbury(j)
            x = x - Z @ (cap @ (sens.loads.T @ x))
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"observer diverged at coarse step {j}")
        return ObserverState(x, j)


def observer_step(obs: ObserverState, w_meas, u_delayed, observer: Observer) -> ObserverState:
    return observer.step(obs, np.asarray(w_meas, float), np.asarray(u_delayed, float))
