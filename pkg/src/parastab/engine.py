"""Coupled plant / observer / predictor simulation on two meshes and two steps.

The plant runs on the rf-times refined mesh with step 2^-(2+rf) t_s; the
observer and predictor run on the coarse mesh with step t_s.  The only
channels between them are the s sensor averages (plant -> observer) and the
m actuator amplitudes (observer -> plant), the latter held constant over each
coarse step.
"""
from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .actuation import ActuatorArray, SensorArray
from .delay import window_ratio  # noqa: F401
from .errors import InvalidParameter, NumericalFailure, UndefinedFit
from .fem import SemidiscreteOperators, coefficient_field, interpolate
from .mesh import build_regions, build_structured_mesh, check_alignment, prolongation_matrix, refine_times
from .observer import NoiseGenerator, Observer, ObserverState
from .predictor import CoarsePropagator, InputHistory, PredictorConfig, compute_input, steps_per_delay

MODES = ("free", "nominal", "delayed_plain", "delayed_predictor", "open_loop")
MAX_RF = 4


# --------------------------------------------------------------------------
# closed-form initial fields

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def parse_field(expr: str) -> Callable:
    """Compile an arithmetic expression in ``x1``, ``x2`` (and ``pi``) into a
    vectorized function.  Only arithmetic and a few elementary functions are
    accepted."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise InvalidParameter(f"cannot parse field expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise InvalidParameter(f"disallowed syntax in field expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in {"x1", "x2", "pi", *_ALLOWED_FUNCS}:
            raise InvalidParameter(f"unknown name {node.id!r} in field expression {expr!r}")
        if isinstance(node, ast.Call) and not (
            isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS
        ):
            raise InvalidParameter(f"disallowed call in field expression {expr!r}")
    code = compile(tree, "<field>", "eval")

    def func(x1, x2):
        env = {"x1": x1, "x2": x2, "pi": math.pi, **_ALLOWED_FUNCS}
        return eval(code, {"__builtins__": {}}, env)

    return func


# --------------------------------------------------------------------------
# configuration

@dataclass
class ScenarioConfig:
    mode: str = "delayed_predictor"
    nu: float = 0.1
    coefficients: str = "default"
    M: int = 2
    S: int = 2
    lambda_K: float = 100.0
    lambda_L: float = 200.0
    tau: float = 0.1
    t_s: float = 1e-3
    rf: int = 0
    T: float = 10.0
    zeta_mag: float = 1e-7
    seed: int = 1
    coarse_n: int = 16
    y0: str = "1 - 2*x1*x2"
    yhat0: str = "-1 - 3*x2**2"
    # plant on the coarse mesh with step t_s (identical propagators)
    matched_plant: bool = False
    # observer replaced by the exact state
    full_state: bool = False
    # nominal mode: feedback switched on at this time
    activation: float = 0.0
    # open_loop mode: size of the constant perturbation added to y0
    epsilon: float = 0.0

    @property
    def n_tau(self) -> int:
        return steps_per_delay(self.tau, self.t_s)

    @property
    def n_steps(self) -> int:
        return steps_per_delay(self.T, self.t_s)

    @property
    def substeps(self) -> int:
        return 1 if self.matched_plant else 2 ** (2 + self.rf)

    @property
    def t_s_fine(self) -> float:
        return self.t_s / self.substeps

    def validate(self) -> ScenarioConfig:
        if self.mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.nu > 0:
            raise InvalidParameter(f"nu must be positive, got {self.nu!r}")
        for name in ("M", "S", "coarse_n"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameter(f"{name} must be a positive integer, got {v!r}")
        if self.lambda_K < 0 or self.lambda_L < 0:
            raise InvalidParameter("gains lambda_K, lambda_L must be nonnegative")
        if not (isinstance(self.rf, int) and 0 <= self.rf <= MAX_RF):
            raise InvalidParameter(f"rf must be an integer in 0..{MAX_RF}, got {self.rf!r}")
        if not self.t_s > 0:
            raise InvalidParameter(f"t_s must be positive, got {self.t_s!r}")
        if not self.T > 0:
            raise InvalidParameter(f"T must be positive, got {self.T!r}")
        if self.zeta_mag < 0:
            raise InvalidParameter(f"zeta_mag must be nonnegative, got {self.zeta_mag!r}")
        self.n_tau  # noqa: B018  (raises if tau/t_s is not integral)
        try:
            self.n_steps  # noqa: B018
        except InvalidParameter:
            raise InvalidParameter(f"T={self.T!r} is not an integer multiple of t_s={self.t_s!r}") from None
        steps_per_delay(self.activation, self.t_s)
        need = 8 * max(self.M, self.S)
        if self.coarse_n % need:
            raise InvalidParameter(
                f"coarse_n={self.coarse_n} must be a multiple of 8*max(M,S)={need} "
                "for the patches to align with the mesh"
            )
        coefficient_field(self.coefficients, self.nu)
        parse_field(self.y0)
        parse_field(self.yhat0)
        return self

    def replace(self, **changes) -> ScenarioConfig:
        data = asdict(self)
        data.update(changes)
        return ScenarioConfig(**data)


CONFIG_FIELDS = {f.name: f.type for f in fields(ScenarioConfig)}


# --------------------------------------------------------------------------
# traces

@dataclass
class SimulationTrace:
    t: np.ndarray
    norm_y: np.ndarray
    norm_err: np.ndarray
    norm_u: np.ndarray
    config: ScenarioConfig | None = None
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def window(self, t_lo: float, t_hi: float | None = None) -> np.ndarray:
        t_hi = self.t[-1] if t_hi is None else t_hi
        eps = 1e-9 * max(1.0, abs(t_hi))
        return (self.t >= t_lo - eps) & (self.t <= t_hi + eps)


def fit_decay_rate(trace: SimulationTrace, t_lo: float, t_hi: float,
                   column: str = "norm_y") -> float:
    """Least-squares slope of log(norm) over [t_lo, t_hi]."""
    if not t_lo < t_hi:
        raise UndefinedFit(f"empty fit window [{t_lo}, {t_hi}]")
    sel = trace.window(t_lo, t_hi)
    if sel.sum() < 2:
        raise UndefinedFit(f"fewer than two samples in [{t_lo}, {t_hi}]")
    vals = trace.column(column)[sel]
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise UndefinedFit(f"nonpositive or non-finite {column} values in fit window")
    slope, _ = np.polyfit(trace.t[sel], np.log(vals), 1)
    return float(slope)


def plateau_level(trace: SimulationTrace, t_lo: float, column: str = "norm_y") -> float:
    """max of the chosen norm over [t_lo, T_final]."""
    sel = trace.window(t_lo)
    if not sel.any():
        raise InvalidParameter(f"t_lo={t_lo} lies beyond the trace")
    return float(np.max(trace.column(column)[sel]))


# --------------------------------------------------------------------------
# engine

class _Plant:
    """Fine-mesh plant with per-substep factorizations."""

    def __init__(self, ops, coeff, actuators, sensors, dt, shared: CoarsePropagator | None):
        self.ops = ops
        self.coeff = coeff
        self.actuators = actuators
        self.sensors = sensors
        self.dt = dt
        self.shared = shared

    def advance(self, y, n: int, substeps: int, u) -> np.ndarray:
        load = self.actuators.control_load(u) if np.any(u) else None
        if self.shared is not None:
            return self.shared.step(n + 1, y, load)
        for k in range(substeps):
            t = (n * substeps + k + 1) * self.dt
            lu = spla.splu(self.ops.step_matrix(self.coeff, t, self.dt))
            rhs = self.ops.mass @ y
            if load is not None:
                rhs += self.dt * load
            y = lu.solve(rhs)
        return y


class Simulation:
    """One closed-loop run; construct, then call :meth:`run`."""

    def __init__(self, config: ScenarioConfig):
        self.config = cfg = config.validate()
        lam_K, lam_L = cfg.lambda_K, cfg.lambda_L
        if cfg.mode == "free":
            lam_K = lam_L = 0.0
        self.coeff = coefficient_field(cfg.coefficients, cfg.nu)
        self.coarse = build_structured_mesh(cfg.coarse_n)
        self.fine = self.coarse if cfg.matched_plant else refine_times(self.coarse, cfg.rf)
        act_regions, sen_regions = build_regions(cfg.M, cfg.S)
        for mesh in {id(self.coarse): self.coarse, id(self.fine): self.fine}.values():
            for regions in (act_regions, sen_regions):
                if not check_alignment(mesh, regions):
                    raise InvalidParameter(f"{regions.role} patches not aligned with mesh")
        self.ops_c = SemidiscreteOperators(self.coarse, cfg.nu)
        self.ops_f = self.ops_c if self.fine is self.coarse else SemidiscreteOperators(self.fine, cfg.nu)
        self.act_c = ActuatorArray(self.ops_c, act_regions, lam_K)
        self.sen_c = SensorArray(self.ops_c, sen_regions, lam_L)
        if self.ops_f is self.ops_c:
            self.act_f, self.sen_f = self.act_c, self.sen_c
        else:
            self.act_f = ActuatorArray(self.ops_f, act_regions, lam_K)
            self.sen_f = SensorArray(self.ops_f, sen_regions, lam_L)
        self.prolong = prolongation_matrix(self.coarse, self.fine)
        self.prop = CoarsePropagator(self.ops_c, self.coeff, cfg.t_s)
        self.plant = _Plant(
            self.ops_f, self.coeff, self.act_f, self.sen_f, cfg.t_s_fine,
            self.prop if cfg.matched_plant else None,
        )
        self.observer = Observer(self.prop, self.sen_c, self.act_c)
        self.noise = NoiseGenerator(cfg.zeta_mag, cfg.seed)

    # -- input laws ---------------------------------------------------------
    def _open_loop_inputs(self, y0_coarse: np.ndarray) -> np.ndarray:
        """K z(t_n + tau) for n = 0..N, from the offline free + nominal solve."""
        cfg = self.config
        n_tau, N = cfg.n_tau, cfg.n_steps
        z = y0_coarse + cfg.epsilon
        for j in range(1, n_tau + 1):
            z = self.prop.step(j, z)
        out = np.zeros((N + 1, self.act_c.size))
        for n in range(N + 1):
            j = n + n_tau
            u = self.act_c.feedback(z)
            out[n] = u
            if n < N:
                load = self.act_c.control_load(u) if np.any(u) else None
                z = self.prop.step(j + 1, z, load)
                self.prop.release_before(j + 1)
        return out

    def run(self) -> SimulationTrace:
        cfg = self.config
        mode = cfg.mode
        N, n_tau = cfg.n_steps, cfg.n_tau
        mass_f = self.ops_f.mass
        y = interpolate(self.fine, parse_field(cfg.y0))
        use_observer = mode in ("free", "delayed_plain", "delayed_predictor") and not cfg.full_state
        obs = ObserverState(interpolate(self.coarse, parse_field(cfg.yhat0)), 0)
        nv_c = self.coarse.n_vertices

        if mode == "nominal":
            hist = InputHistory(self.act_f.size, 0)
            n_act = steps_per_delay(cfg.activation, cfg.t_s)
        else:
            hist = InputHistory(self.act_c.size, n_tau)
        pcfg = PredictorConfig(cfg.tau, cfg.t_s, self.prop, self.act_c)
        olc = None
        if mode == "open_loop":
            olc = self._open_loop_inputs(interpolate(self.coarse, parse_field(cfg.y0)))
            self.prop.release_before(0)

        def estimate():
            if use_observer:
                return obs.yhat
            # exact state restricted to the coarse nodes (nested meshes)
            return y[:nv_c]

        def new_input(n):
            if mode == "free":
                return np.zeros(self.act_c.size)
            if mode == "nominal":
                if n < n_act:
                    return np.zeros(self.act_f.size)
                return self.act_f.feedback(y)
            if mode == "delayed_plain":
                return self.act_c.feedback(estimate())
            if mode == "delayed_predictor":
                return compute_input(pcfg, n, estimate(), hist)
            return np.zeros(self.act_c.size)  # open loop: inputs precomputed

        t = np.arange(N + 1) * cfg.t_s
        norm_y = np.empty(N + 1)
        norm_err = np.zeros(N + 1)
        norm_u = np.empty(N + 1)

        hist.push(new_input(0))
        for n in range(N + 1):
            if mode == "open_loop":
                u_app = olc[n - n_tau] if n >= n_tau else np.zeros(self.act_c.size)
            else:
                u_app = hist.delayed(n)
            norm_y[n] = math.sqrt(max(float(y @ (mass_f @ y)), 0.0))
            if use_observer:
                e = self.prolong @ obs.yhat - y
                norm_err[n] = math.sqrt(max(float(e @ (mass_f @ e)), 0.0))
            norm_u[n] = float(np.linalg.norm(u_app))
            if not math.isfinite(norm_y[n]):
                raise NumericalFailure(f"plant state non-finite at t={t[n]:.6g}")
            if n == N:
                break
            if use_observer:
                w = self.sen_f.measure(y) + self.noise.sample(self.sen_f.size)
                obs = self.observer.step(obs, w, u_app)
            y = self.plant.advance(y, n, cfg.substeps, u_app)
            hist.push(new_input(n + 1))
            self.prop.release_before(n + 2)

        return SimulationTrace(t, norm_y, norm_err, norm_u, cfg,
                               meta={"dofs_coarse": nv_c, "dofs_fine": self.fine.n_vertices})


def run(config: ScenarioConfig) -> SimulationTrace:
    return Simulation(config).run()


# --------------------------------------------------------------------------
# sweeps

def _workers() -> int:
    import os

    try:
        return max(int(os.environ.get("PARASTAB_THREADS", "1")), 1)
    except ValueError:
        return 1


def run_many(configs: list[ScenarioConfig]) -> list[SimulationTrace]:
    """Independent runs, fanned out over ``PARASTAB_THREADS`` worker threads."""
    from concurrent.futures import ThreadPoolExecutor

    n = min(_workers(), len(configs))
    if n <= 1:
        return [run(c) for c in configs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run, configs))


@dataclass
class TauSweep:
    taus: list[float]
    ratios: list[float]
    classes: list[str]
    nominal_ratio: float
    nominal_class: str
    traces: list[SimulationTrace] = field(repr=False, default_factory=list)

    @property
    def onset(self) -> float | None:
        """Smallest swept delay whose delayed_plain loop grows."""
        for tau, c in zip(self.taus, self.classes):
            if c == "growing":
                return tau
        return None


def _class_of(ratio: float) -> str:
    if ratio > 1.05:
        return "growing"
    if ratio < 0.95:
        return "decaying"
    return "marginal"


def sweep_tau(base: ScenarioConfig, taus=(0.2, 0.4, 0.6, 0.8, 1.0, 1.2),
              window_fraction: float = 0.25) -> TauSweep:
    """delayed_plain runs over a grid of delays plus the undelayed nominal loop."""
    configs = [base.replace(mode="delayed_plain", tau=float(tau)) for tau in taus]
    configs.append(base.replace(mode="nominal", tau=0.0, activation=0.0))
    traces = run_many(configs)
    ratios = [window_ratio(tr.norm_y, window_fraction) for tr in traces]
    return TauSweep(
        taus=[float(x) for x in taus],
        ratios=ratios[:-1],
        classes=[_class_of(r) for r in ratios[:-1]],
        nominal_ratio=ratios[-1],
        nominal_class=_class_of(ratios[-1]),
        traces=traces,
    )


def sweep_noise(base: ScenarioConfig, zetas=(0.0, 1e-7, 1e-5, 1e-3),
                tail: float = 0.2) -> tuple[list[float], list[float], list[SimulationTrace]]:
    """delayed_predictor runs over noise magnitudes; plateau of ||y|| over the
    last ``tail`` fraction of the horizon."""
    configs = [base.replace(mode="delayed_predictor", zeta_mag=float(z)) for z in zetas]
    traces = run_many(configs)
    t_lo = base.T * (1.0 - tail)
    return list(zetas), [plateau_level(tr, t_lo) for tr in traces], traces
