"""Contract mechanics and closed-form quantities for the participating policy.

Everything here is expressed in the reduced coordinate ``x = ln(A / R)``
(the bonus distribution rate) unless the name says otherwise. Values such as
``payoff_h`` are normalised by the initial portfolio value ``a0``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ParameterError",
    "NumericalError",
    "FeeCase",
    "PolicyParams",
    "DerivedThresholds",
    "FeeCaseReport",
    "derive_thresholds",
    "payoff_h",
    "drift_pi",
    "crediting_rate",
    "intrinsic_value",
    "generator_H",
    "running_cost",
    "classify_fee_case",
    "DEGENERATE_CASE_II_TOL",
]

# Discriminants in (0, DEGENERATE_CASE_II_TOL] are reported as Case I.
DEGENERATE_CASE_II_TOL = 1e-8


class ParameterError(ValueError):
    """Raised when an input lies outside the model's domain."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails to converge or bracket."""


class FeeCase(str, enum.Enum):
    NO_FEE_BASELINE = "NoFeeBaseline"
    CASE_I = "CaseI"
    CASE_II = "CaseII"


@dataclass(frozen=True)
class PolicyParams:
    """Contract and market constants. Rates are annualised decimals, time in years.

    Attributes:
        T: maturity.
        r: risk-free rate.
        sigma: volatility of the reference portfolio.
        r_g: minimum guaranteed crediting rate, ``0 < r_g < r``.
        delta: share of the excess BDR credited to the reserve.
        beta: target buffer ratio.
        gamma: participation coefficient in the intrinsic value, in (0, 1).
        alpha: fraction of the portfolio covered by the initial reserve, in (0, 1).
        a0: initial portfolio value (currency).
        p: management fee rate charged on the portfolio.
        q: management fee rate charged on the reserve.
    """

    T: float = 10.0
    r: float = 0.015
    sigma: float = 0.18
    r_g: float = 0.01
    delta: float = 0.1
    beta: float = 3.0
    gamma: float = 0.4
    alpha: float = 0.1
    a0: float = 1000.0
    p: float = 0.0
    q: float = 0.0

    def __post_init__(self) -> None:
        for name in ("T", "r", "sigma", "r_g", "delta", "beta", "gamma", "alpha", "a0", "p", "q"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite number, got {value!r}")
        checks = [
            (self.T > 0, "T > 0"),
            (self.sigma > 0, "sigma > 0"),
            (self.delta > 0, "delta > 0"),
            (self.beta > 0, "beta > 0"),
            (self.a0 > 0, "a0 > 0"),
            (0 < self.r_g < self.r, "0 < r_g < r"),
            (0 < self.gamma < 1, "0 < gamma < 1"),
            (0 < self.alpha < 1, "0 < alpha < 1"),
            (self.p >= 0, "p >= 0"),
            (self.q >= 0, "q >= 0"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ParameterError(f"invalid policy parameters: requires {rule} ({self._describe()})")

    def _describe(self) -> str:
        return ", ".join(f"{k}={v!r}" for k, v in asdict(self).items())

    @property
    def has_fees(self) -> bool:
        return self.p > 0 or self.q > 0

    @property
    def x_alpha(self) -> float:
        return math.log(1.0 / self.alpha)

    def replace(self, **changes) -> "PolicyParams":
        data = asdict(self)
        data.update(changes)
        return PolicyParams(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FeeCaseReport:
    case: FeeCase
    discriminant: float
    roots: Optional[tuple[float, float]] = None
    root_residuals: float = 0.0
    x_star: Optional[float] = None


@dataclass(frozen=True)
class DerivedThresholds:
    x_alpha: float
    x_bar0: float
    x_g: float
    x_bar_q: float
    x_bar_q_gamma: float
    fee_case: FeeCase
    hat_x1: Optional[float] = None
    hat_x2: Optional[float] = None
    fee_report: Optional[FeeCaseReport] = field(default=None, repr=False, compare=False)

    @property
    def upper_threshold(self) -> float:
        """Right end of the interval where the inner stopping component can live.

        This is ``x_bar0`` without fees, ``x_bar_q_gamma`` with reserve fees
        only, ``hat_x1`` in fee Case II and ``inf`` in fee Case I.
        """
        if self.fee_case is FeeCase.CASE_II:
            return self.hat_x1
        if self.fee_case is FeeCase.CASE_I:
            return math.inf
        return self.x_bar_q_gamma

    def to_dict(self) -> dict:
        return {
            "x_alpha": self.x_alpha,
            "x_bar0": self.x_bar0,
            "x_g": self.x_g,
            "x_bar_q": self.x_bar_q,
            "x_bar_q_gamma": self.x_bar_q_gamma,
            "fee_case": self.fee_case.value,
            "hat_x1": self.hat_x1,
            "hat_x2": self.hat_x2,
        }


def derive_thresholds(params: PolicyParams) -> DerivedThresholds:
    report = classify_fee_case(params)
    roots = report.roots or (None, None)
    r, d, b = params.r, params.delta, params.beta
    return DerivedThresholds(
        x_alpha=params.x_alpha,
        x_bar0=b + r / d,
        x_g=b + params.r_g / d,
        x_bar_q=b + (r + params.q) / d,
        x_bar_q_gamma=b + (r + params.q / (1.0 - params.gamma)) / d,
        fee_case=report.case,
        hat_x1=roots[0],
        hat_x2=roots[1],
        fee_report=report,
    )


def _check_nonnegative(x, what: str = "x"):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ParameterError(f"{what} must be >= 0")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def payoff_h(x, params: PolicyParams):
    """Normalised intrinsic value ``e^{-x} + gamma * (alpha - e^{-x})^+``.

    Accepts scalars or arrays; ``x`` must be non-negative.
    """
    arr = _check_nonnegative(x)
    ex = np.exp(-arr)
    return _out(ex + params.gamma * np.maximum(params.alpha - ex, 0.0), x)


def drift_pi(x, params: PolicyParams):
    """Drift of the BDR under the portfolio-numeraire measure."""
    arr = np.asarray(x, dtype=float)
    base = params.r - params.r_g + 0.5 * params.sigma**2
    return _out(base - np.maximum(params.delta * (arr - params.beta) - params.r_g, 0.0), x)


def crediting_rate(a, reserve, params: PolicyParams):
    a_arr = np.asarray(a, dtype=float)
    r_arr = np.asarray(reserve, dtype=float)
    if np.any(a_arr <= 0) or np.any(r_arr <= 0):
        raise ParameterError("portfolio value and reserve must be > 0")
    rate = np.maximum(params.delta * (np.log(a_arr / r_arr) - params.beta), params.r_g)
    return _out(rate, a if np.ndim(a) else reserve)


def intrinsic_value(a, reserve, params: PolicyParams):
    """Amount paid on surrender, insolvency or maturity, in currency."""
    a_arr = np.asarray(a, dtype=float)
    r_arr = np.asarray(reserve, dtype=float)
    if np.any(a_arr <= 0) or np.any(r_arr < 0):
        raise ParameterError("requires portfolio value > 0 and reserve >= 0")
    value = r_arr + params.gamma * np.maximum(params.alpha * a_arr - r_arr, 0.0)
    return _out(value, a if np.ndim(a) else reserve)


def generator_H(x, params: PolicyParams):
    """Generator applied to the payoff, i.e. the running reward of ``v - h``.

    With fees this is the fee-adjusted variant. At ``x == x_alpha`` the left
    branch is used.
    """
    arr = _check_nonnegative(x)
    sigma2 = 0.5 * params.sigma**2
    pi = drift_pi(arr, params)
    ex = np.exp(-arr)
    left = ex * (sigma2 - params.q - pi) - params.p
    right = (1.0 - params.gamma) * ex * (sigma2 - params.q / (1.0 - params.gamma) - pi) - params.p
    return _out(np.where(arr <= params.x_alpha, left, right), x)


def running_cost(x, params: PolicyParams):
    arr = _check_nonnegative(x)
    return _out(params.p + params.q * np.exp(-arr), x)


def _bisect(f, lo: float, hi: float, max_iter: int = 200) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NumericalError(f"root not bracketed on [{lo!r}, {hi!r}]: f(lo)={flo!r}, f(hi)={fhi!r}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fmid = f(mid)
        if fmid == 0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def classify_fee_case(params: PolicyParams) -> FeeCaseReport:
    """Sign structure of the fee-adjusted generator above ``x_alpha``.

    With ``p > 0`` the fee-adjusted generator is positive exactly where
    ``x - x_bar_q_gamma > (p / delta) e^x / (1 - gamma)``. The gap function is
    concave with maximum at ``x* = ln(delta (1 - gamma) / p)``, so it has two
    roots iff its value there, ``x* - 1 - x_bar_q_gamma``, is positive.
    """
    if params.p == 0:
        return FeeCaseReport(case=FeeCase.NO_FEE_BASELINE, discriminant=math.nan)

    g, d, p = params.gamma, params.delta, params.p
    x_qg = params.beta + (params.r + params.q / (1.0 - g)) / d
    coef = p / (d * (1.0 - g))
    x_star = math.log(d * (1.0 - g) / p)
    disc = x_star - (1.0 + x_qg)

    if disc <= 0:
        return FeeCaseReport(case=FeeCase.CASE_I, discriminant=disc, x_star=x_star)
    if disc <= DEGENERATE_CASE_II_TOL:
        warnings.warn(
            f"fee case discriminant {disc:.3e} is within {DEGENERATE_CASE_II_TOL:g} of zero; reporting Case I",
            RuntimeWarning,
            stacklevel=2,
        )
        return FeeCaseReport(case=FeeCase.CASE_I, discriminant=disc, x_star=x_star)

    def gap(x: float) -> float:
        return (x - x_qg) - coef * math.exp(x)

    root1 = _bisect(gap, x_qg, x_star)
    width = 1.0
    while gap(x_star + width) > 0:
        width *= 2.0
        if width > 1e3:
            raise NumericalError(f"could not bracket upper fee root above x*={x_star!r}")
    root2 = _bisect(gap, x_star, x_star + width)
    residual = max(abs(gap(root1)), abs(gap(root2)))
    return FeeCaseReport(
        case=FeeCase.CASE_II,
        discriminant=disc,
        roots=(root1, root2),
        root_residuals=residual,
        x_star=x_star,
    )
