"""Path simulation used to cross-check the lattice.

Reduced runs simulate the BDR ``X`` under the portfolio-numeraire measure,
where values need no discounting. Full runs simulate the portfolio ``A`` and
reserve ``R`` under the risk-neutral measure and discount explicitly; after
dividing by ``a0`` both must agree.

Random numbers come from Philox (a counter-based generator) keyed by
``(seed, stream, block)``. Paths are grouped in fixed blocks of
``BLOCK_SIZE`` and every block always draws a full block of variates, so path
``i`` sees the same noise whatever ``n_paths`` is and however blocks are
spread over threads. The bridge uniforms are drawn even when the correction
is off, so toggling it leaves the Gaussian increments unchanged.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .boundary import BoundaryCurves, Regime, stopping_mask_from_curves
from .model import ParameterError, PolicyParams, drift_pi, payoff_h, running_cost

__all__ = [
    "BLOCK_SIZE",
    "Measure",
    "McSpec",
    "McEstimate",
    "FlowReport",
    "PathRecords",
    "simulate_x",
    "mc_european_reduced",
    "mc_european_full",
    "mc_strategy_value",
    "coupled_flow_check",
    "flow_slack",
]

BLOCK_SIZE = 8192

_STREAM_REDUCED = 0
_STREAM_FULL = 1
_STREAM_FLOW = 2


class Measure(str, enum.Enum):
    P_REDUCED = "P_reduced"
    Q_FULL = "Q_full"


@dataclass(frozen=True)
class McSpec:
    n_paths: int = 100_000
    steps_per_year: int = 250
    seed: int = 42
    bridge_correction: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        if int(self.n_paths) < 1:
            raise ParameterError("n_paths must be >= 1")
        if int(self.steps_per_year) < 1:
            raise ParameterError("steps_per_year must be >= 1")
        if int(self.workers) < 1:
            raise ParameterError("workers must be >= 1")

    def n_steps(self, T: float) -> int:
        """Number of time steps over ``[0, T]``; zero when ``T`` is under half a step."""
        return int(round(T * self.steps_per_year))

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "steps_per_year": self.steps_per_year, "seed": self.seed,
                "bridge_correction": self.bridge_correction}


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    measure: Measure
    units: str = "normalized"

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n_paths": self.n_paths,
                "seed": self.seed, "measure": self.measure.value, "units": self.units}


@dataclass(frozen=True)
class FlowReport:
    n_paths: int
    max_lip_violation: float
    max_lower_violation: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.max_lip_violation <= self.slack and self.max_lower_violation <= self.slack

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "max_lip_violation": self.max_lip_violation,
                "max_lower_violation": self.max_lower_violation, "slack": self.slack,
                "passed": self.passed}


@dataclass(frozen=True, eq=False)
class PathRecords:
    """Per-path outcome of a reduced simulation, indexed by path number.

    ``end_time`` is when the path left the contract: absorption, surrender,
    or ``T``. ``payoff`` is ``h(x_end)`` minus the accrued fees.
    """

    x_end: np.ndarray
    end_time: np.ndarray
    absorbed: np.ndarray
    surrendered: np.ndarray
    fee_integral: np.ndarray
    payoff: np.ndarray


def _generator(seed: int, stream: int, block: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (stream << 48) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_blocks(n_paths: int, workers: int, work: Callable[[int], dict]) -> dict:
    n_blocks = -(-n_paths // BLOCK_SIZE)
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    else:
        parts = [work(b) for b in range(n_blocks)]
    return {key: np.concatenate([p[key] for p in parts])[:n_paths] for key in parts[0]}


def _bridge_hit(x_prev, x_next, u, sigma: float, dt: float) -> np.ndarray:
    both = (x_prev > 0) & (x_next > 0)
    prob = np.exp(-2.0 * np.where(both, x_prev * x_next, 0.0) / (sigma**2 * dt))
    return both & (u < prob)


def _estimate(values: np.ndarray, seed: int, measure: Measure, units: str) -> McEstimate:
    n = values.size
    if np.all(values == values[0]):
        return McEstimate(mean=float(values[0]), std_error=0.0, n_paths=n, seed=seed,
                          measure=measure, units=units)
    mean = math.fsum(values) / n
    if n > 1:
        var = math.fsum((values - mean) ** 2) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return McEstimate(mean=mean, std_error=se, n_paths=n, seed=seed, measure=measure, units=units)


StopRule = Callable[[float, np.ndarray], np.ndarray]


def simulate_x(params: PolicyParams, x0: float, spec: McSpec,
               stop_rule: Optional[StopRule] = None) -> PathRecords:
    """Euler-Maruyama paths of the BDR from ``x0`` with absorption at 0.

    With ``bridge_correction`` a path that stays positive at both ends of a
    step is still absorbed with the Brownian-bridge crossing probability.
    ``stop_rule(t, x)`` (optional) returns a mask of paths to surrender at
    time ``t``; it is consulted at ``t = 0`` and after every step but the last.
    """
    if x0 < 0:
        raise ParameterError("x0 must be >= 0")
    T, sigma = params.T, params.sigma
    M = spec.n_steps(T)
    dt = T / M if M else 0.0
    sqdt = math.sqrt(dt)

    def work(block: int) -> dict:
        gen = _generator(spec.seed, _STREAM_REDUCED, block)
        x = np.full(BLOCK_SIZE, float(x0))
        absorbed = x <= 0
        alive = ~absorbed
        end_time = np.where(absorbed, 0.0, T)
        surrendered = np.zeros(BLOCK_SIZE, dtype=bool)
        fee = np.zeros(BLOCK_SIZE)
        if stop_rule is not None and M:
            s = stop_rule(0.0, x) & alive
            surrendered |= s
            end_time[s] = 0.0
            alive &= ~s
        for i in range(M):
            z = gen.standard_normal(BLOCK_SIZE)
            u = gen.random(BLOCK_SIZE)
            fee += np.where(alive, running_cost(np.maximum(x, 0.0), params) * dt, 0.0)
            x_next = x + drift_pi(x, params) * dt + sigma * sqdt * z
            hit = x_next <= 0
            if spec.bridge_correction:
                hit |= _bridge_hit(x, x_next, u, sigma, dt)
            hit &= alive
            x = np.where(alive, x_next, x)
            x[hit] = 0.0
            end_time[hit] = (i + 1) * dt
            absorbed |= hit
            alive &= ~hit
            if stop_rule is not None and i + 1 < M:
                s = stop_rule((i + 1) * dt, x) & alive
                surrendered |= s
                end_time[s] = (i + 1) * dt
                alive &= ~s
        payoff = payoff_h(np.maximum(x, 0.0), params) - fee
        return {"x_end": x, "end_time": end_time, "absorbed": absorbed, "surrendered": surrendered,
                "fee_integral": fee, "payoff": payoff}

    out = _run_blocks(spec.n_paths, spec.workers, work)
    return PathRecords(**out)


def mc_european_reduced(params: PolicyParams, spec: McSpec, x0: Optional[float] = None) -> McEstimate:
    """Hold-to-maturity value in units of ``a0``, from ``x_alpha`` by default."""
    start = params.x_alpha if x0 is None else x0
    records = simulate_x(params, start, spec)
    return _estimate(records.payoff, spec.seed, Measure.P_REDUCED, "normalized")


def mc_european_full(params: PolicyParams, spec: McSpec, a_init: Optional[float] = None,
                     r_init: Optional[float] = None) -> McEstimate:
    """Hold-to-maturity value in currency from the (portfolio, reserve) dynamics.

    The portfolio follows exact GBM steps and the reserve a log-Euler step at
    the current crediting rate. Insolvency is checked on ``ln(A/R)`` with
    the same bridge correction as the reduced run; an insolvent path pays the
    discounted portfolio value at the step end, which is the reserve at the
    crossing. Defaults start from ``A = a0``, ``R = alpha * a0``.
    """
    a_start = params.a0 if a_init is None else float(a_init)
    r_start = params.alpha * params.a0 if r_init is None else float(r_init)
    if a_start <= 0 or r_start <= 0:
        raise ParameterError("initial portfolio and reserve must be > 0")
    T, sigma, r = params.T, params.sigma, params.r
    M = spec.n_steps(T)
    dt = T / M if M else 0.0
    sqdt = math.sqrt(dt)
    growth = (r - 0.5 * sigma**2) * dt

    def work(block: int) -> dict:
        gen = _generator(spec.seed, _STREAM_FULL, block)
        A = np.full(BLOCK_SIZE, a_start)
        R = np.full(BLOCK_SIZE, r_start)
        done = A <= R
        payoff = np.where(done, R, 0.0)
        alive = ~done
        fee = np.zeros(BLOCK_SIZE)
        for i in range(M):
            z = gen.standard_normal(BLOCK_SIZE)
            u = gen.random(BLOCK_SIZE)
            t = i * dt
            fee += np.where(alive, math.exp(-r * t) * (params.p * A + params.q * R) * dt, 0.0)
            rate = np.maximum(params.delta * (np.log(A / R) - params.beta), params.r_g)
            A_next = A * np.exp(growth + sigma * sqdt * z)
            R_next = R * np.exp(rate * dt)
            x_prev, x_next = np.log(A / R), np.log(A_next / R_next)
            hit = x_next <= 0
            if spec.bridge_correction:
                hit |= _bridge_hit(x_prev, x_next, u, sigma, dt)
            hit &= alive
            payoff[hit] = math.exp(-r * (i + 1) * dt) * A_next[hit]
            A = np.where(alive, A_next, A)
            R = np.where(alive, R_next, R)
            alive &= ~hit
        terminal = math.exp(-r * T) * (R + params.gamma * np.maximum(params.alpha * A - R, 0.0))
        payoff = np.where(alive, terminal, payoff) - fee
        return {"payoff": payoff}

    out = _run_blocks(spec.n_paths, spec.workers, work)
    return _estimate(out["payoff"], spec.seed, Measure.Q_FULL, "currency")


def mc_strategy_value(params: PolicyParams, curves: BoundaryCurves, spec: McSpec) -> McEstimate:
    """Value of surrendering on the extracted boundaries, from ``x_alpha``.

    Uses the same noise as ``mc_european_reduced`` for equal ``spec``, so a
    never-stop rule reproduces it exactly.
    """
    if curves.regime is Regime.B and (curves.b2.size == 0 or curves.b3.size == 0):
        warnings.warn("regime B curves without an inner band; using the b1 rule only",
                      RuntimeWarning, stacklevel=2)

    def rule(t: float, x: np.ndarray) -> np.ndarray:
        return stopping_mask_from_curves(curves, t, x)

    records = simulate_x(params, params.x_alpha, spec, stop_rule=rule)
    return _estimate(records.payoff, spec.seed, Measure.P_REDUCED, "normalized")


def flow_slack(params: PolicyParams, x: float, y: float, spec: McSpec) -> float:
    """Allowance for the Euler drift-difference error, ``delta^2 (y - x) e^{delta T} dt``."""
    M = spec.n_steps(params.T)
    dt = params.T / M if M else 0.0
    return params.delta**2 * (y - x) * math.exp(params.delta * params.T) * dt


def coupled_flow_check(params: PolicyParams, x: float, y: float, spec: McSpec) -> FlowReport:
    """Drive two unabsorbed paths from ``x <= y`` with the same noise.

    Records the largest defects of ``|X^x - X^y| <= |x - y| e^{delta t}`` and
    ``X^y - X^x >= (y - x)(2 - e^{delta t})`` over all paths and steps.
    """
    if x > y:
        raise ParameterError(f"requires x <= y, got x={x!r}, y={y!r}")
    T, sigma, delta = params.T, params.sigma, params.delta
    M = spec.n_steps(T)
    dt = T / M if M else 0.0
    sqdt = math.sqrt(dt)
    gap0 = y - x

    def work(block: int) -> dict:
        gen = _generator(spec.seed, _STREAM_FLOW, block)
        xs = np.full(BLOCK_SIZE, float(x))
        ys = np.full(BLOCK_SIZE, float(y))
        lip = np.zeros(BLOCK_SIZE)
        low = np.zeros(BLOCK_SIZE)
        for i in range(M):
            noise = sigma * sqdt * gen.standard_normal(BLOCK_SIZE)
            xs = xs + drift_pi(xs, params) * dt + noise
            ys = ys + drift_pi(ys, params) * dt + noise
            growth = math.exp(delta * (i + 1) * dt)
            lip = np.maximum(lip, np.abs(xs - ys) - gap0 * growth)
            low = np.maximum(low, gap0 * (2.0 - growth) - (ys - xs))
        return {"lip": lip, "low": low}

    out = _run_blocks(spec.n_paths, spec.workers, work)
    return FlowReport(
        n_paths=spec.n_paths,
        max_lip_violation=float(np.max(out["lip"])),
        max_lower_violation=float(np.max(out["low"])),
        slack=flow_slack(params, x, y, spec),
    )
