"""Second-order interference dynamics and their finite-difference oracles.

Everything here differentiates the *update direction* g(theta) of an
objective (see :func:`tdlab.learners.objectives.gradient_field`).  For a
plain loss g is the loss gradient and its Jacobian is the Hessian; for a
self-bootstrapped TD loss g is the semi-gradient and its Jacobian also
carries the moving-target term.

With ``d = dJ/df`` (``d = delta`` for the halved loss and ``2 delta`` for the
unhalved one) and ``s = d(dJ/df)/df`` (1 or 2) the squared-loss terms read

    r1 = s d_B^2 rb_AB (rb_AB - gamma rb_A'B)
    r2 = s d_A d_B rb_AB (rb_BB - gamma rb_B'B)
    r3 = d_A d_B^2 grad f_B . (Hb_A grad f_B + Hb_B grad f_A)

so that rho' = -(r1 + r2 + r3).  Regression is the gamma = 0 case.  Under the
halved loss these are the textbook expressions; under the unhalved loss all
three terms are 8x the textbook ones written in delta (and rho is 4x).
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import engine as E
from .autodiff import LayoutMismatch, ParamVector, dot, function_hvp, grad
from .autodiff.calculus import _collect, _leaves
from .learners.objectives import Objective, Sample, gradient_field
from .models import ValueModel
from .records import fmt

# Coefficient on r2 in the regression decomposition.  The correct value is 1;
# a hook below can switch in the misprinted 2 to show the oracle rejecting it.
_REG_R2_COEF = 1.0


@contextlib.contextmanager
def _misprinted_reg_r2(coef: float = 2.0):
    global _REG_R2_COEF
    old, _REG_R2_COEF = _REG_R2_COEF, coef
    try:
        yield
    finally:
        _REG_R2_COEF = old


TARGET_KINDS = ("self", "frozen", "ema")


@dataclass(frozen=True)
class RhoPrimeBreakdown:
    total: float
    r1: float
    r2: float
    r3: float
    objective: str
    pair: tuple
    delta_a: float
    delta_b: float
    rho_bar: dict = field(default_factory=dict)  # AB, BB, A'B, B'B


@dataclass(frozen=True)
class MomentumInterference:
    rho_mu: float
    rho_prime_mu: float  # derivative along grad J_B (the analysed form, reduces to rho' at beta=0)
    beta: float
    mu: ParamVector
    rho_prime_mu_step: float  # derivative along the momentum update itself
    magnitude_mu: float = 0.0  # sums of absolute terms, the scale for finite-difference relative errors
    magnitude_mu_step: float = 0.0


def _sum_dot(gs, hs) -> E.Var:
    total = E.Var(0.0)
    for g, h in zip(gs, hs):
        if g is not None and h is not None:
            total = total + E.sum(g * h)
    return total


def _vals(gs, params: ParamVector) -> ParamVector:
    return _collect(gs, params)


def _consts(v: ParamVector) -> list:
    return [E.Var(b) for b in v.blocks().values()]


def _vjp(out: E.Var, leaves, params: ParamVector) -> ParamVector:
    if not out.requires_grad:
        return ParamVector.zeros(params.layout)
    return _collect(E.backward(out, leaves), params)


class _Fields:
    """Update directions of A and B recorded once on shared parameter leaves."""

    def __init__(self, model: ValueModel, objective: Objective, a: Sample, b: Sample, target_params=None):
        self.params = model.params
        self.pv = _leaves(model.params)
        self.leaves = list(self.pv.values())
        self.ga = gradient_field(objective, model.spec, self.pv, a, target_params)
        self.gb = gradient_field(objective, model.spec, self.pv, b, target_params)
        self.ga_val = _vals(self.ga, self.params)
        self.gb_val = _vals(self.gb, self.params)

    def jt(self, gs, v: ParamVector) -> ParamVector:
        """J^T v for the Jacobian J of the field ``gs``."""
        return _vjp(_sum_dot(gs, _consts(v)), self.leaves, self.params)


def update_direction(model: ValueModel, objective: Objective, s: Sample, target_params=None) -> ParamVector:
    pv = _leaves(model.params)
    return _collect(gradient_field(objective, model.spec, pv, s, target_params), model.params)


def rho_value(model: ValueModel, objective: Objective, a: Sample, b: Sample, target_params=None) -> float:
    return dot(update_direction(model, objective, a, target_params),
               update_direction(model, objective, b, target_params))


def rho_prime_general(model: ValueModel, objective: Objective, a: Sample, b: Sample,
                      target_params=None) -> float:
    """-(g_B^T J_A + g_A^T J_B) g_B from two Jacobian-transpose products (HVPs for plain losses)."""
    f = _Fields(model, objective, a, b, target_params)
    return -(dot(f.jt(f.ga, f.gb_val), f.gb_val) + dot(f.jt(f.gb, f.ga_val), f.gb_val))


def hessian_free_rho_prime(model: ValueModel, objective: Objective, a: Sample, b: Sample,
                           target_params=None) -> float:
    """-grad(g_A . g_B) . g_B with a single double-backward pass."""
    f = _Fields(model, objective, a, b, target_params)
    return -dot(_vjp(_sum_dot(f.ga, f.gb), f.leaves, f.params), f.gb_val)


def rho_bar_prime(model: ValueModel, objective: Objective, a, b, target_params=None) -> float:
    """-(grad f_B^T Hb_A + grad f_A^T Hb_B) g_B for the scalarized outputs."""
    prog = model.scalar_program()
    xa = a.x if isinstance(a, Sample) else a
    xb = b.x if isinstance(b, Sample) else b
    fa = grad(prog, model.params, xa).grad
    fb = grad(prog, model.params, xb).grad
    gb = update_direction(model, objective, b, target_params)
    return -(dot(function_hvp(prog, model.params, fb, xa), gb) + dot(function_hvp(prog, model.params, fa, xb), gb))


def rho_bar_value(model: ValueModel, a, b) -> float:
    prog = model.scalar_program()
    xa = a.x if isinstance(a, Sample) else a
    xb = b.x if isinstance(b, Sample) else b
    return dot(grad(prog, model.params, xa).grad, grad(prog, model.params, xb).grad)


# ---------------------------------------------------------------------------
# term decompositions


def _terms(objective: Objective, model: ValueModel, a: Sample, b: Sample, gamma: float,
           target_params, coupling: float, kind: str, r2_coef: float = 1.0) -> RhoPrimeBreakdown:
    pred = objective.prediction_program(model.spec)
    fa = grad(pred, model.params, a).grad
    fb = grad(pred, model.params, b).grad
    s = objective.scale
    da = s * objective.delta(model, a, target_params)
    db = s * objective.delta(model, b, target_params)
    rab, rbb = dot(fa, fb), dot(fb, fb)
    rapb = rbpb = 0.0
    if gamma != 0.0 and coupling != 0.0:
        boot = objective.bootstrap_program(model.spec)
        if not a.done:
            rapb = dot(grad(boot, model.params, a).grad, fb)
        if not b.done:
            rbpb = dot(grad(boot, model.params, b).grad, fb)
    gc = gamma * coupling
    r1 = s * db * db * rab * (rab - gc * rapb)
    r2 = r2_coef * s * da * db * rab * (rbb - gc * rbpb)
    curv = dot(fb, function_hvp(pred, model.params, fb, a)) + dot(fb, function_hvp(pred, model.params, fa, b))
    r3 = da * db * db * curv
    return RhoPrimeBreakdown(-(r1 + r2 + r3), r1, r2, r3, kind, (a.key, b.key), da, db,
                             {"AB": rab, "BB": rbb, "A'B": rapb, "B'B": rbpb})


def rho_prime_reg_terms(model: ValueModel, objective: Objective, a: Sample, b: Sample) -> RhoPrimeBreakdown:
    if objective.kind != "regression":
        raise ValueError("regression decomposition needs a regression objective")
    return _terms(objective, model, a, b, 0.0, None, 0.0, "reg", _REG_R2_COEF)


def rho_prime_td_terms(model: ValueModel, objective: Objective, a: Sample, b: Sample,
                       target_kind: str = "self", target_params: ParamVector | None = None,
                       tau: float | None = None) -> RhoPrimeBreakdown:
    """TD decomposition; ``frozen``/``ema`` shadows drop the gamma-coupled terms.

    With ``tau`` given for an EMA shadow the gamma terms are kept at weight
    ``tau`` instead of dropped.
    """
    if not objective.is_bootstrapped:
        raise ValueError("TD decomposition needs a bootstrapped objective")
    if target_kind not in TARGET_KINDS:
        raise ValueError(f"target kind must be one of {TARGET_KINDS}")
    for s in (a, b):
        if s.x_next is None and not s.done:
            raise ValueError("TD decomposition needs successor states")
    if target_kind == "self":
        target_params, coupling = None, 1.0
    elif target_kind == "frozen":
        coupling = 0.0
    else:
        coupling = 0.0 if tau is None else float(tau)
    return _terms(objective, model, a, b, objective.gamma, target_params, coupling, f"td-{target_kind}")


# ---------------------------------------------------------------------------
# momentum


def momentum_interference(model: ValueModel, objective: Objective, a: Sample, b: Sample,
                          mu: ParamVector, beta: float, target_params=None) -> MomentumInterference:
    """rho_mu = (1-beta) g_A.g_B + beta g_A.mu and its derivatives.

    ``rho_prime_mu = (1-beta) rho'_AB - beta mu^T J_A g_B`` differentiates
    rho_mu along g_B as the analysed form does; ``rho_prime_mu_step`` is the
    derivative along the actual momentum step u = (1-beta) g_B + beta mu.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if not model.params.same_layout(mu):
        raise LayoutMismatch("momentum buffer layout does not match the parameters")
    f = _Fields(model, objective, a, b, target_params)
    ga, gb = f.ga_val, f.gb_val
    rho_mu = (1.0 - beta) * dot(ga, gb) + beta * dot(ga, mu)
    jta_gb = f.jt(f.ga, gb)
    jtb_ga = f.jt(f.gb, ga)
    t = [(1.0 - beta) * dot(jta_gb, gb), (1.0 - beta) * dot(jtb_ga, gb), beta * dot(f.jt(f.ga, mu), gb)]
    grad_form = -sum(t)
    u = gb * (1.0 - beta) + mu * beta
    ts = [dot(f.jt(f.ga, u), u), (1.0 - beta) * dot(jtb_ga, u)]
    step = -sum(ts)
    return MomentumInterference(rho_mu, grad_form, beta, mu, step,
                                sum(abs(x) for x in t), sum(abs(x) for x in ts))


def rho_mu_value(model, objective, a, b, mu: ParamVector, beta: float, target_params=None) -> float:
    ga = update_direction(model, objective, a, target_params)
    gb = update_direction(model, objective, b, target_params)
    return (1.0 - beta) * dot(ga, gb) + beta * dot(ga, mu)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass(frozen=True)
class FDReport:
    """Finite-difference slopes of a measured quantity against an analytic derivative.

    ``magnitude`` is the sum of the absolute analytic terms; relative errors
    are taken against it so that cancelling terms do not blow up the ratio.
    ``noise_floor`` is the absolute roundoff level of the measured quantity
    (a multiple of machine epsilon times the product of the gradient norms).
    """

    analytic: float
    alphas: tuple
    slopes: tuple
    residuals: tuple
    ratios: tuple  # residual(alpha_i) / residual(alpha_{i+1}), compared with alpha_i / alpha_{i+1}
    magnitude: float
    noise_floor: float

    def relative_error(self) -> float:
        """Residual at the smallest alpha over max(|analytic|, magnitude)."""
        den = max(abs(self.analytic), self.magnitude)
        return self.residuals[-1] / den if den > 0 else self.residuals[-1]

    def noise_floor_at(self, i: int) -> float:
        return self.noise_floor / self.alphas[i]

    def first_order(self, lo: float = 0.3, hi: float = 3.0) -> bool:
        """Residual ratios within [lo, hi] x the alpha ratios, or both residuals under the roundoff floor."""
        for i, r in enumerate(self.ratios):
            if self.residuals[i] <= self.noise_floor_at(i) and self.residuals[i + 1] <= self.noise_floor_at(i + 1):
                continue
            ar = self.alphas[i] / self.alphas[i + 1]
            if r is None or not lo * ar <= r <= hi * ar:
                return False
        return True

    def passes(self, rel_tol: float = 1e-3) -> bool:
        return self.relative_error() < rel_tol and self.first_order()


NOISE_ULPS = 256


def fd_slopes(quantity, alphas) -> tuple[float, list[float]]:
    """``quantity(alpha)`` is the measured value after stepping by ``alpha`` (0 = no step)."""
    q0 = quantity(0.0)
    return q0, [(quantity(al) - q0) / al for al in alphas]


def fd_report(analytic: float, alphas, slopes, magnitude: float = 0.0, q_scale: float = 0.0) -> FDReport:
    res = [abs(sl - analytic) for sl in slopes]
    ratios = tuple((res[i] / res[i + 1]) if res[i + 1] > 0 else None for i in range(len(res) - 1))
    floor = NOISE_ULPS * np.finfo(float).eps * q_scale
    return FDReport(float(analytic), tuple(alphas), tuple(slopes), tuple(res), ratios,
                    float(max(magnitude, abs(analytic))), float(floor))


def _check_alphas(alphas):
    alphas = tuple(float(a) for a in alphas)
    if not alphas or any(a <= 0 for a in alphas) or list(alphas) != sorted(alphas, reverse=True):
        raise ValueError("alphas must be positive and descending")
    return alphas


def fd_oracle_rho_prime(model: ValueModel, objective: Objective, a: Sample, b: Sample,
                        alphas=(1e-5, 1e-6), analytic: float | None = None, target_params=None,
                        quantity: str = "rho") -> FDReport:
    """Slope (q(theta - alpha g_B) - q(theta)) / alpha for q = rho or rho_bar, against ``analytic``.

    The analytic value defaults to the two-term form of :func:`rho_prime_general`
    (or :func:`rho_bar_prime`).  Bootstrapped targets are recomputed at the
    new parameters unless ``target_params`` pins a shadow.
    """
    alphas = _check_alphas(alphas)
    if quantity == "rho":
        f = _Fields(model, objective, a, b, target_params)
        gb = f.gb_val
        t1 = dot(f.jt(f.ga, gb), gb)
        t2 = dot(f.jt(f.gb, f.ga_val), gb)
        q_scale = f.ga_val.norm() * gb.norm()
        q = lambda al: rho_value(model.with_params(model.params - gb * al), objective, a, b, target_params)
    elif quantity == "rho_bar":
        prog = model.scalar_program()
        xa = a.x if isinstance(a, Sample) else a
        xb = b.x if isinstance(b, Sample) else b
        fa, fb = grad(prog, model.params, xa).grad, grad(prog, model.params, xb).grad
        gb = update_direction(model, objective, b, target_params)
        t1 = dot(function_hvp(prog, model.params, fb, xa), gb)
        t2 = dot(function_hvp(prog, model.params, fa, xb), gb)
        q_scale = fa.norm() * fb.norm()
        q = lambda al: rho_bar_value(model.with_params(model.params - gb * al), a, b)
    else:
        raise ValueError("quantity must be rho or rho_bar")
    if analytic is None:
        analytic = -(t1 + t2)
    _, slopes = fd_slopes(q, alphas)
    return fd_report(analytic, alphas, slopes, abs(t1) + abs(t2), q_scale)


def fd_oracle_momentum(model: ValueModel, objective: Objective, a: Sample, b: Sample, mu: ParamVector,
                       beta: float, alphas=(1e-5, 1e-6), along: str = "step", target_params=None) -> FDReport:
    """Difference rho_mu after one momentum step (``along="step"``) or a plain step along g_B."""
    alphas = _check_alphas(alphas)
    mi = momentum_interference(model, objective, a, b, mu, beta, target_params)
    ga = update_direction(model, objective, a, target_params)
    gb = update_direction(model, objective, b, target_params)
    d = gb * (1.0 - beta) + mu * beta if along == "step" else gb
    q = lambda al: rho_mu_value(model.with_params(model.params - d * al), objective, a, b, mu, beta, target_params)
    _, slopes = fd_slopes(q, alphas)
    analytic = mi.rho_prime_mu_step if along == "step" else mi.rho_prime_mu
    mag = mi.magnitude_mu_step if along == "step" else mi.magnitude_mu
    q_scale = ga.norm() * (gb.norm() + mu.norm())
    return fd_report(analytic, alphas, slopes, mag, q_scale)


# ---------------------------------------------------------------------------
# aggregation


def term_statistics(breakdowns) -> dict:
    """Per term: overall mean, mean of the positive samples, mean of the negative samples (0 if none)."""
    breakdowns = list(breakdowns)
    if not breakdowns:
        raise ValueError("term_statistics needs at least one breakdown")
    out = {}
    for name in ("r1", "r2", "r3", "total"):
        v = np.array([getattr(bd, name) for bd in breakdowns], dtype=np.float64)
        pos, neg = v[v > 0], v[v < 0]
        out[name] = {"mean": float(math.fsum(v) / len(v)),
                     "pos_mean": float(math.fsum(pos) / len(pos)) if len(pos) else 0.0,
                     "neg_mean": float(math.fsum(neg) / len(neg)) if len(neg) else 0.0}
    return out


RHO_PRIME_HEADER = ["checkpoint", "objective", "pair_a", "pair_b", "r1", "r2", "r3", "total",
                    "fd_slope", "fd_alpha", "residual"]


def rho_prime_csv(rows) -> str:
    """``rows``: iterable of (checkpoint, RhoPrimeBreakdown, FDReport or None)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RHO_PRIME_HEADER)
    for ck, bd, rep in rows:
        slope = rep.slopes[-1] if rep else None
        alpha = rep.alphas[-1] if rep else None
        resid = rep.residuals[-1] if rep else None
        w.writerow([ck, bd.objective, bd.pair[0], bd.pair[1], fmt(bd.r1), fmt(bd.r2), fmt(bd.r3),
                    fmt(bd.total), fmt(slope), fmt(alpha), fmt(resid)])
    return buf.getvalue()
