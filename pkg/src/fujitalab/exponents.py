"""Closed-form exponent arithmetic for the weighted parabolic system.

    u_t - div(w(x) grad u) = t^r v^p,    v_t - div(w(x) grad v) = t^s u^q

with w(x) = |x_1|^alpha (case A) or |x|^alpha (case B).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# beta**k_max must stay finite in double precision for every beta > 1 we accept
K_MAX_CAP = 60


class WeightCase(str, Enum):
    A = "A"
    B = "B"


class Verdict(str, Enum):
    NO_GLOBAL = "NoGlobal"
    GLOBAL_POSSIBLE = "GlobalPossible"


class ParameterError(ValueError):
    """Raised when a parameter tuple violates the admissibility conditions."""


def alpha_upper_bound(case: WeightCase | str, N: int) -> float:
    """Exclusive upper bound for the degeneracy exponent."""
    case = WeightCase(case)
    if case is WeightCase.A and N >= 3:
        return 2.0 / N
    return 1.0


def check_alpha(case: WeightCase | str, alpha: float, N: int) -> None:
    case = WeightCase(case)
    hi = alpha_upper_bound(case, N)
    if not (0.0 <= alpha < hi):
        if case is WeightCase.B:
            rule = "condition (B): |x|^alpha requires alpha in [0, 1)"
        elif N >= 3:
            rule = f"condition (A): |x_1|^alpha requires alpha in [0, 2/N) = [0, {hi:g}) for N={N}"
        else:
            rule = "condition (A): |x_1|^alpha requires alpha in [0, 1) for N <= 2"
        raise ParameterError(f"alpha={alpha!r} violates {rule}")


@dataclass(frozen=True)
class ProblemParams:
    p: float
    q: float
    r: float = 0.0
    s: float = 0.0
    alpha: float = 0.0
    N: int = 1
    weight_case: WeightCase = WeightCase.A

    def __post_init__(self):
        object.__setattr__(self, "weight_case", WeightCase(self.weight_case))
        if not (self.p > 0 and self.q > 0):
            raise ParameterError(f"p and q must be positive, got p={self.p}, q={self.q}")
        if not self.p * self.q > 1:
            raise ParameterError(f"pq > 1 required, got pq={self.p * self.q!r}")
        if not (self.r > -1 and self.s > -1):
            raise ParameterError(f"r > -1 and s > -1 required, got r={self.r}, s={self.s}")
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N!r}")
        check_alpha(self.weight_case, self.alpha, int(self.N))

    @property
    def beta(self) -> float:
        return self.p * self.q

    @property
    def gamma1(self) -> float:
        return ((self.r + 1) + (self.s + 1) * self.p) / (self.p * self.q - 1)

    @property
    def gamma2(self) -> float:
        return ((self.s + 1) + (self.r + 1) * self.q) / (self.p * self.q - 1)

    @property
    def scaling_dim(self) -> float:
        return self.N / (2 - self.alpha)


@dataclass(frozen=True)
class ExponentReport:
    gamma1: float
    gamma2: float
    gamma: float
    r1_star: float
    r2_star: float
    scaling_dim: float
    verdict: Verdict
    critical_product: float

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["verdict"] = self.verdict.value
        return d


def derive_exponents(params: ProblemParams) -> ExponentReport:
    """Exponents, weak-Lebesgue indices and the Fujita verdict for `params`.

    The boundary case ``gamma == N/(2 - alpha)`` is classified NoGlobal.
    """
    g1, g2 = params.gamma1, params.gamma2
    gamma = max(g1, g2)
    dim = params.scaling_dim
    two_minus_a = 2 - params.alpha
    r1 = params.N / (two_minus_a * g1)
    r2 = params.N / (two_minus_a * g2)
    verdict = Verdict.NO_GLOBAL if gamma >= dim else Verdict.GLOBAL_POSSIBLE
    p, q, r, s = params.p, params.q, params.r, params.s
    crit = 1 + two_minus_a * max((s + 1) * p + r + 1, (r + 1) * q + s + 1) / params.N
    return ExponentReport(g1, g2, gamma, r1, r2, dim, verdict, crit)


@dataclass
class PicardConstants:
    """Lower-bound constants C_k of the blow-up iteration, stored in log form."""

    beta: float
    log_c: np.ndarray
    theta: np.ndarray
    kappa_lower: float
    c_list: np.ndarray = field(init=False)

    def __post_init__(self):
        with np.errstate(under="ignore"):
            self.c_list = np.exp(self.log_c)


def picard_constants(params: ProblemParams, k_max: int) -> PicardConstants:
    """Evaluate C_0..C_{k_max} of the iterated lower bound

        u(t) >= C_k t^((beta^k - 1) gamma1) [S(t) u0]^(beta^k),   beta = pq,

    with C_0 = 1 and

        C_k = C_{k-1}^beta [(beta^{k-1}-1) q gamma1 + s + 1]^(-p)
                           [(beta^{k-1}-1) gamma1 beta + p(s+1) + (r+1)]^(-1).

    Works in log space; C_k underflows doubly exponentially otherwise.
    theta_k = -beta^-k ln C_k, and kappa_lower = exp(-max_k theta_k) bounds
    C_k^(1/beta^k) from below over the computed range.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if k_max > K_MAX_CAP:
        raise ValueError(f"k_max={k_max} exceeds the cap {K_MAX_CAP} (beta^k overflow)")
    beta = params.beta
    g1 = params.gamma1
    p, q, r, s = params.p, params.q, params.r, params.s
    log_c = np.zeros(k_max + 1)
    for k in range(1, k_max + 1):
        bk1 = beta ** (k - 1) - 1
        log_c[k] = (beta * log_c[k - 1]
                    - p * math.log(bk1 * q * g1 + s + 1)
                    - math.log(bk1 * g1 * beta + p * (s + 1) + (r + 1)))
    ks = np.arange(k_max + 1)
    theta = -log_c / beta ** ks
    return PicardConstants(beta=beta, log_c=log_c, theta=theta,
                           kappa_lower=math.exp(-theta.max()))


def theta_increment_bound(params: ProblemParams, k: int) -> float:
    """Upper bound for theta_k - theta_{k-1}.

    beta^-k ln([g1 (beta^k - 1)]^(p+1))   for p > 1
    beta^-k ln(q [g1 (beta^k - 1)]^2)     for p <= 1
    """
    beta, g1 = params.beta, params.gamma1
    x = g1 * (beta ** k - 1)
    if params.p > 1:
        val = (params.p + 1) * math.log(x)
    else:
        val = math.log(params.q) + 2 * math.log(x)
    return val / beta ** k


@dataclass(frozen=True)
class IdentityResiduals:
    u_identity: float
    v_identity: float
    p_r1_gt_r2: bool
    q_r2_gt_r1: bool

    @property
    def max_residual(self) -> float:
        return max(self.u_identity, self.v_identity)


def identity_residuals(params: ProblemParams) -> IdentityResiduals:
    """Residuals of p*gamma2 = gamma1 + (r+1) and q*gamma1 = gamma2 + (s+1),
    plus the sign checks p*r1* > r2* and q*r2* > r1*."""
    rep = derive_exponents(params)
    p, q = params.p, params.q
    res_u = abs(p * rep.gamma2 - rep.gamma1 - (params.r + 1))
    res_v = abs(q * rep.gamma1 - rep.gamma2 - (params.s + 1))
    return IdentityResiduals(res_u, res_v,
                             p * rep.r1_star > rep.r2_star,
                             q * rep.r2_star > rep.r1_star)
