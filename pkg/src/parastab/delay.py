"""Delayed proportional feedback for the scalar plant y' = rho*y.

    y'(t) = rho y(t)                      t in [0, tau)
    y'(t) = rho y(t) + kappa y(t - tau)   t >= tau

For kappa < -rho < 0 the loop is asymptotically stable iff tau < tau_hat with

    tau_hat = (kappa^2 - rho^2)^(-1/2) * arccos(-rho/kappa),

and tau_hat < 1/rho whatever the gain.  The diagonal (spectral) version
reproduces the same instability for a shifted Neumann Laplacian with the
first m eigenmodes as actuators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .predictor import steps_per_delay


def tau_hat(rho: float, kappa: float) -> float:
    if not (rho > 0 and kappa < -rho):
        raise InvalidParameter(f"need kappa < -rho < 0, got rho={rho!r}, kappa={kappa!r}")
    return math.acos(-rho / kappa) / math.sqrt(kappa * kappa - rho * rho)


@dataclass(frozen=True)
class DDEParams:
    rho: float = 1.0
    kappa: float = -2.0
    tau: float = 0.5
    y0: float = 1.0
    h: float = 1e-3
    T: float = 40.0  # default horizon for command-line runs

    def validate(self) -> DDEParams:
        if not (self.rho > 0 and self.kappa < -self.rho):
            raise InvalidParameter(
                f"need kappa < -rho < 0, got rho={self.rho!r}, kappa={self.kappa!r}"
            )
        if not self.h > 0:
            raise InvalidParameter(f"step h must be positive, got {self.h!r}")
        if not self.T > 0:
            raise InvalidParameter(f"horizon T must be positive, got {self.T!r}")
        steps_per_delay(self.tau, self.h, tol=1e-9)
        return self


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # (len(t),) or (len(t), N)


def _method_of_steps(rates, gains, tau, y0, h, T) -> Trajectory:
    """Diagonal system y_i' = r_i y_i + k_i y_i(t - tau) (delay term for t >= tau).

    Exact exponentials on [0, tau]; RK4 afterwards.  Stage values at
    t - tau + h/2 come from the exact branch when t - tau + h/2 < tau and
    otherwise from cubic Hermite interpolation of the stored grid, which keeps
    fourth order.
    """
    rates = np.asarray(rates, dtype=float)
    gains = np.asarray(gains, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n_tau = steps_per_delay(tau, h, tol=1e-9)
    ratio = T / h
    N = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio) else int(math.ceil(ratio))
    t = np.arange(N + 1) * h
    Y = np.empty((N + 1, rates.size))
    F = np.empty_like(Y)  # derivative at grid nodes (right-sided at t = tau)

    if n_tau == 0:
        lam = rates + gains
        f = lambda y: lam * y  # noqa: E731
        Y[0] = y0
        for k in range(N):
            y = Y[k]
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            Y[k + 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return Trajectory(t, Y)

    free = lambda s: y0 * np.exp(rates * s)  # noqa: E731
    m = min(n_tau, N)
    Y[: m + 1] = y0[None, :] * np.exp(np.outer(t[: m + 1], rates))

    def delayed_grid(k):
        return Y[k - n_tau]

    def delayed_mid(k):
        s = (k - n_tau + 0.5) * h
        if k - n_tau + 1 <= n_tau:
            return free(s)
        a, b = k - n_tau, k - n_tau + 1
        return 0.5 * (Y[a] + Y[b]) + h / 8.0 * (F[a] - F[b])

    for k in range(n_tau, N):
        F[k] = rates * Y[k] + gains * delayed_grid(k)
        y = Y[k]
        dm = delayed_mid(k)
        dn = Y[k + 1 - n_tau]
        k1 = F[k]
        k2 = rates * (y + 0.5 * h * k1) + gains * dm
        k3 = rates * (y + 0.5 * h * k2) + gains * dm
        k4 = rates * (y + h * k3) + gains * dn
        Y[k + 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Trajectory(t, Y)


def solve_dde(p: DDEParams, T: float) -> Trajectory:
    """Scalar trajectory on the grid t_k = k*h, 0 <= t_k <= T."""
    p.validate()
    if not T > 0:
        raise InvalidParameter(f"horizon T must be positive, got {T!r}")
    traj = _method_of_steps([p.rho], [p.kappa], p.tau, [p.y0], p.h, T)
    return Trajectory(traj.t, traj.y[:, 0])


def window_ratio(values, window_fraction: float = 0.25) -> float:
    """max|v| over the last window divided by max|v| over the one before."""
    v = np.abs(np.asarray(values, dtype=float))
    w = max(int(round(window_fraction * len(v))), 1)
    if 2 * w > len(v):
        raise InvalidParameter("trajectory too short for two windows")
    last = np.max(v[-w:])
    prev = np.max(v[-2 * w:-w])
    if prev == 0:
        return math.inf if last > 0 else 1.0
    return float(last / prev)


def classify(trajectory, window_fraction: float = 0.25) -> str:
    """'growing', 'decaying' or 'marginal' from the windowed amplitude ratio
    (last window against the previous equal window)."""
    y = trajectory.y if isinstance(trajectory, Trajectory) else trajectory
    ratio = window_ratio(y, window_fraction)
    if ratio > 1.05:
        return "growing"
    if ratio < 0.95:
        return "decaying"
    return "marginal"


# --------------------------------------------------------------------------
# spectral example

def neumann_eigenvalues(nu: float = 0.1, count: int = 20) -> np.ndarray:
    """Smallest eigenvalues nu*pi^2*(i^2 + j^2) + 1 of -nu*Lap + 1 on the unit
    square with Neumann conditions, with multiplicity, ascending."""
    k = int(math.ceil(math.sqrt(count))) + 2
    i, j = np.meshgrid(np.arange(k), np.arange(k))
    vals = np.sort((nu * math.pi**2 * (i**2 + j**2) + 1.0).ravel())
    return vals[:count]


@dataclass
class SpectralParams:
    alphas: np.ndarray
    rho: float = 1.0
    kappa: float = -2.0
    m: int = 3
    tau: float = 0.5
    y0: np.ndarray | None = None
    h: float = 1e-3

    @classmethod
    def default(cls, **kw) -> SpectralParams:
        nu = kw.pop("nu", 0.1)
        count = kw.pop("count", 20)
        return cls(alphas=neumann_eigenvalues(nu, count), **kw)

    def validate(self) -> SpectralParams:
        a = np.asarray(self.alphas, dtype=float)
        if a.ndim != 1 or a.size < 2 or a[0] <= 0 or np.any(np.diff(a) < 0):
            raise InvalidParameter("eigenvalues must be positive and nondecreasing")
        if not (self.rho > 0 and self.kappa < -self.rho):
            raise InvalidParameter("need kappa < -rho < 0")
        if not (1 <= self.m < a.size):
            raise InvalidParameter(f"controlled modes m must satisfy 1 <= m < {a.size}")
        if not a[self.m] > self.rho + a[0]:
            raise InvalidParameter(
                f"alpha_(m+1)={a[self.m]:.6g} must exceed rho + alpha_1={self.rho + a[0]:.6g}"
            )
        if self.y0 is not None and np.asarray(self.y0).shape != a.shape:
            raise InvalidParameter("initial coordinates must match the eigenvalue count")
        steps_per_delay(self.tau, self.h, tol=1e-9)
        return self


def spectral_demo(p: SpectralParams, T: float, kappa: float | None = None) -> Trajectory:
    """Coordinates of y' = -(A - (rho+alpha_1)) y + kappa P_m y(t - tau).

    ``kappa`` overrides ``p.kappa`` (0 gives the free dynamics); it is not
    subject to the kappa < -rho restriction.
    """
    p.validate()
    a = np.asarray(p.alphas, dtype=float)
    kap = p.kappa if kappa is None else float(kappa)
    rates = -a + p.rho + a[0]
    gains = np.zeros_like(a)
    gains[: p.m] = kap
    y0 = np.zeros_like(a) if p.y0 is None else np.asarray(p.y0, dtype=float)
    if p.y0 is None:
        y0[0] = 1.0
    return _method_of_steps(rates, gains, p.tau, y0, p.h, T)
