"""Oracle and identity suites behind ``tdlab verify``.

Every check returns a :class:`Check` with the measured worst-case value and
the tolerance it was held to; nothing here raises on a numerical failure.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import (ParamVector, dot, finite_diff_grad, finite_diff_hvp, function_hvp, grad, hvp)
from ..dynamics import (_misprinted_reg_r2, fd_oracle_momentum, fd_oracle_rho_prime, hessian_free_rho_prime,
                        momentum_interference, rho_prime_general, rho_prime_reg_terms, rho_prime_td_terms,
                        update_direction)
from ..envs import (Transition, brute_force_optimal, chain_mdp, dp_policy_evaluation, greedy_policy,
                    grid_mdp, mc_policy_evaluation, mc_return, uniform_policy, value_iteration)
from ..envs.tabular import TabularMDP
from ..learners import (Objective, Sample, lambda_returns, lambda_weights, make_optimizer, tabular_td0,
                        td0_target)
from ..learners.losses import reinforce_program
from ..metrics import pair_record, pearson_r, sign_variance_of, singular_values, update_gains
from ..models import ModelSpec, ValueModel, init
from ..rng import Rng, derive_seed

OBJECTIVE_KINDS = ("regression", "classification", "td0", "ql", "ddqn")


@dataclass
class Check:
    name: str
    passed: bool
    measured: float | None
    tolerance: float | None
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = None if self.measured is None else float(self.measured)

    def line(self) -> str:
        m = "NA" if self.measured is None else f"{self.measured:.3g}"
        t = "" if self.tolerance is None else f" (tol {self.tolerance:g})"
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {m}{t} {self.detail}".rstrip()

    def to_json(self) -> dict:
        return asdict(self)


def _rel(a: ParamVector, b: ParamVector) -> float:
    den = max(float(np.max(np.abs(b.data))), float(np.max(np.abs(a.data))), 1e-12)
    return float(np.max(np.abs(a.data - b.data))) / den


# ---------------------------------------------------------------------------
# random draws


def random_draw(i: int, kind: str, activation: str | None = None):
    """Small random model plus two samples (with successors) for objective ``kind``."""
    r = Rng(derive_seed(1000, i, kind))
    n_o = 3 if kind in ("ql", "ddqn", "classification") else 1
    d = 2 + r.integer(3)
    act = activation or ("tanh" if r.random() < 0.5 else "leaky_relu")
    spec = ModelSpec("mlp", (d,), n_h=3 + r.integer(4), n_L=r.integer(2), n_o=n_o, activation=act,
                     head="classifier" if kind == "classification" else "value")
    model = init(spec, i)

    def sample(k):
        y = r.integer(n_o) if kind == "classification" else float(r.normal())
        return Sample(r.normal(d), y, a=r.integer(n_o), r=float(r.normal()), x_next=r.normal(d),
                      done=bool(r.random() < 0.1), key=k)

    return model, sample(0), sample(1)


def _shadow_of(model: ValueModel, i: int) -> ParamVector:
    r = Rng(derive_seed(2000, i))
    return model.params + model.params.with_data(0.1 * r.normal(len(model.params)))


# ---------------------------------------------------------------------------
# suites


def check_gradients(draws: int = 100, tol: float = 1e-5, sym_tol: float = 1e-8) -> list[Check]:
    """Reverse-mode gradients and HVPs against central differences; Hessian symmetry."""
    t0 = time.time()
    worst_g = worst_h = worst_s = 0.0
    where = ""
    for i in range(draws):
        kind = OBJECTIVE_KINDS[i % len(OBJECTIVE_KINDS)]
        model, a, _ = random_draw(i, kind, "tanh" if i % 2 else "leaky_relu")
        tp = _shadow_of(model, i)  # pinned shadow: the semi-gradient is the full gradient
        obj = Objective(kind, 0.9)
        progs = [(obj.program(model.spec, tp), a), (model.scalar_program(), a.x)]
        if kind == "classification":
            xs = np.stack([a.x, a.x * 0.5])
            progs.append((reinforce_program(model.spec), (xs, np.array([a.y, 0]), np.array([1.0, -0.5]))))
        r = Rng(derive_seed(3000, i))
        u = model.params.with_data(r.normal(len(model.params)))
        v = model.params.with_data(r.normal(len(model.params)))
        for fn, inp in progs:
            g = grad(fn, model.params, inp).grad
            e = _rel(g, finite_diff_grad(fn, model.params, inp))
            if e > worst_g:
                worst_g, where = e, f"draw {i} ({kind})"
            hv = hvp(fn, model.params, v, inp)
            worst_h = max(worst_h, _rel(hv, finite_diff_hvp(fn, model.params, v, inp)))
            hu = hvp(fn, model.params, u, inp)
            a1, a2 = dot(u, hv), dot(v, hu)
            worst_s = max(worst_s, abs(a1 - a2) / max(abs(a1), abs(a2), 1.0))
    dt = time.time() - t0
    return [Check("gradient_vs_central_differences", worst_g < tol, worst_g, tol, f"{draws} draws; worst {where}", dt),
            Check("hvp_vs_central_differences", worst_h < tol, worst_h, tol, f"{draws} draws"),
            Check("hvp_symmetry", worst_s < sym_tol, worst_s, sym_tol, f"{draws} draws")]


def check_rho_prime(draws: int = 100, rel_tol: float = 1e-3, alphas=(1e-5, 1e-6),
                    kinds=OBJECTIVE_KINDS) -> list[Check]:
    """Analytic rho' (general form, term decompositions, rho_bar', momentum) against FD slopes."""
    out = []
    for kind in kinds:
        t0 = time.time()
        worst, fails, worst_id, worst_terms = 0.0, 0, 0.0, 0.0
        for i in range(draws):
            model, a, b = random_draw(i, kind)
            obj = Objective(kind, 0.9, half=bool(i % 2))
            reps = [fd_oracle_rho_prime(model, obj, a, b, alphas),
                    fd_oracle_rho_prime(model, obj, a, b, alphas, quantity="rho_bar")]
            # random direction at the scale of a gradient average, as a real momentum buffer would be
            mu = model.params.with_data(Rng(derive_seed(4000, i)).normal(len(model.params)))
            mu = mu * (update_direction(model, obj, b).norm() / max(mu.norm(), 1e-300))
            reps += [fd_oracle_momentum(model, obj, a, b, mu, 0.9, alphas, along=al) for al in ("step", "grad")]
            analytic = reps[0].analytic
            if kind == "regression":
                terms = rho_prime_reg_terms(model, obj, a, b).total
            elif kind in ("td0", "ql"):
                terms = rho_prime_td_terms(model, obj, a, b).total
            else:
                terms = analytic
            reps.append(fd_oracle_rho_prime(model, obj, a, b, alphas, analytic=terms))
            mag = max(reps[0].magnitude, 1e-300)
            worst_id = max(worst_id, abs(hessian_free_rho_prime(model, obj, a, b) - analytic) / mag)
            worst_terms = max(worst_terms, abs(terms - analytic) / mag)
            for rep in reps:
                worst = max(worst, rep.relative_error())
                fails += not rep.passes(rel_tol)
        out.append(Check(f"rho_prime_fd_oracle[{kind}]", fails == 0, worst, rel_tol,
                         f"{draws} draws x 5 oracles; {fails} failed (relative error or first-order scaling)",
                         time.time() - t0))
        out.append(Check(f"rho_prime_general_eq_hessian_free[{kind}]", worst_id < 1e-8, worst_id, 1e-8))
        out.append(Check(f"rho_prime_terms_eq_general[{kind}]", worst_terms < 1e-8, worst_terms, 1e-8))
    return out


def one_param_case(theta: float = 1.0):
    """f = theta x with no bias, halved squared loss, x_A = 1, x_B = 2, y = 0."""
    spec = ModelSpec("linear", (1,), n_o=1, bias=False)
    model = ValueModel(spec, ParamVector.from_blocks({"out.w": np.array([[theta]])}))
    return model, Objective("regression", half=True), Sample(np.array([1.0]), 0.0), Sample(np.array([2.0]), 0.0)


def check_closed_form() -> list[Check]:
    model, obj, a, b = one_param_case()
    vals = {"general": rho_prime_general(model, obj, a, b), "hessian_free": hessian_free_rho_prime(model, obj, a, b),
            "terms": rho_prime_reg_terms(model, obj, a, b).total}
    bd = rho_prime_reg_terms(model, obj, a, b)
    err = max(abs(v + 32.0) for v in vals.values())
    rep = fd_oracle_rho_prime(model, obj, a, b, (1e-3, 1e-4, 1e-5, 1e-6))
    m2, *_ = one_param_case(0.5)
    quad = abs(rho_prime_general(m2, obj, a, b) + 32.0 * 0.25)
    out = [Check("one_param_rho_prime_eq_-32", err < 1e-12, err, 1e-12,
                 f"general/hessian-free/terms = {vals['general']}/{vals['hessian_free']}/{vals['terms']}; "
                 f"r1, r2, r3 = {bd.r1}, {bd.r2}, {bd.r3}"),
           Check("one_param_rho_prime_eq_-32_theta_sq", quad < 1e-12, quad, 1e-12, "theta = 0.5 gives -8"),
           Check("one_param_fd_slope_to_-32", rep.passes(1e-3), rep.relative_error(), 1e-3,
                 f"slopes {', '.join(f'{s:.7g}' for s in rep.slopes)}")]
    return out


def check_misprint() -> Check:
    """With the misprinted coefficient 2 on r2 the oracle must reject the regression breakdown."""
    model, obj, a, b = one_param_case()
    with _misprinted_reg_r2():
        bad = rho_prime_reg_terms(model, obj, a, b).total
    rep = fd_oracle_rho_prime(model, obj, a, b, (1e-5, 1e-6), analytic=bad)
    resid = rep.residuals[-1]
    ok = abs(bad + 48.0) < 1e-12 and not rep.passes() and abs(resid - 16.0) < 1e-3
    return Check("misprinted_r2_coefficient_rejected", ok, resid / 32.0, None,
                 f"misprinted total {bad}; FD slope {rep.slopes[-1]:.7g}; residual {resid:.6g} = "
                 f"{resid / 32.0:.4f} of the slope")


def check_identities(draws: int = 50) -> list[Check]:
    out = []
    # rho = delta_A delta_B rho_bar (prediction gradients) for squared losses
    worst = 0.0
    for i in range(draws):
        for kind in ("regression", "td0", "ql", "ddqn"):
            model, a, b = random_draw(i, kind)
            obj = Objective(kind, 0.9, half=bool(i % 2))
            rec = pair_record(model, obj, a, b, 0, 1)
            worst = max(worst, abs(rec.rho - rec.delta_a * rec.delta_b * rec.rho_bar_pred) / max(abs(rec.rho), 1e-12))
    out.append(Check("rho_eq_delta_delta_rho_bar", worst < 1e-12, worst, 1e-12, f"{draws} draws x 4 objectives"))
    # lambda endpoints on a random terminated trajectory
    r = Rng(5)
    exact0 = exact1 = True
    wsum = 0.0
    for j in range(20):
        n = 1 + r.integer(12)
        traj = [Transition(t, 0, float(r.normal()), t + 1, t == n - 1, j, t) for t in range(n)]
        nv = r.normal(n + 1)
        g = 0.5 + 0.5 * r.random()
        l0 = lambda_returns(traj, nv[1:], g, 0.0).targets
        l1 = lambda_returns(traj, nv[1:], g, 1.0).targets
        exact0 &= all(l0[t] == td0_target(nv, traj[t], g) for t in range(n))
        exact1 &= all(l1[t] == mc_return(traj, t, g) for t in range(n))
        for lam in (0.0, 0.3, 0.9, 1.0):
            wsum = max(wsum, abs(float(np.sum(lambda_weights(n, lam))) - 1.0))
    out.append(Check("td_lambda0_eq_one_step_target", exact0, 0.0 if exact0 else None, 0.0, "exact equality"))
    out.append(Check("td_lambda1_eq_monte_carlo", exact1, 0.0 if exact1 else None, 0.0, "exact equality"))
    out.append(Check("lambda_weights_sum_to_one", wsum < 1e-12, wsum, 1e-12))
    # TD decomposition at gamma = 0 is the regression decomposition
    worst_g0 = worst_mom = worst_bd = 0.0
    for i in range(draws):
        model, a, b = random_draw(i, "td0")
        td = rho_prime_td_terms(model, Objective("td0", 0.0), a, b)
        reg = rho_prime_reg_terms(model, Objective("regression"), Sample(a.x, a.r), Sample(b.x, b.r))
        worst_g0 = max(worst_g0, max(abs(getattr(td, k) - getattr(reg, k)) for k in ("r1", "r2", "r3", "total")))
        worst_bd = max(worst_bd, abs(td.total + td.r1 + td.r2 + td.r3), abs(reg.total + reg.r1 + reg.r2 + reg.r3))
        obj = Objective("td0", 0.9)
        mu = model.params.with_data(Rng(i).normal(len(model.params)))
        mi = momentum_interference(model, obj, a, b, mu, 0.0)
        rp = rho_prime_general(model, obj, a, b)
        rho = pair_record(model, obj, a, b, 0, 1).rho
        worst_mom = max(worst_mom, abs(mi.rho_mu - rho) / max(abs(rho), 1e-12),
                        abs(mi.rho_prime_mu - rp) / max(abs(rp), 1e-12),
                        abs(mi.rho_prime_mu_step - rp) / max(abs(rp), 1e-12))
    out.append(Check("td_terms_gamma0_eq_reg_terms", worst_g0 == 0.0, worst_g0, 0.0, "exact equality"))
    out.append(Check("momentum_beta0_reduces", worst_mom < 1e-12, worst_mom, 1e-12))
    out.append(Check("breakdown_total_eq_minus_sum", worst_bd < 1e-10, worst_bd, 1e-10))
    return out


def tabular_chain(gamma: float = 0.99, slip: float = 0.1, n: int = 5):
    return chain_mdp(n, gamma=gamma, n_actions=1, slip=slip)


def check_dp(episodes: int = 100_000, alpha: float = 0.1, seed: int = 0, mc_episodes: int = 100_000) -> list[Check]:
    out = []
    mdp = tabular_chain()
    pi = uniform_policy(mdp)
    v = dp_policy_evaluation(mdp, pi)
    t0 = time.time()
    vt = tabular_td0(mdp, pi, alpha, episodes, seed)
    sup = float(np.max(np.abs(vt - v)))
    out.append(Check("tabular_td0_converges_to_dp", sup < 1e-2, sup, 1e-2,
                     f"5-state chain, alpha={alpha}, {episodes} episodes", time.time() - t0))
    t0 = time.time()
    mc, se = mc_policy_evaluation(mdp, pi, mc_episodes, Rng(derive_seed(seed, "mc")))
    z = max(abs(mc[s] - v[s]) / se[s] for s in range(mdp.n_states) if s not in mdp.terminal)
    out.append(Check("monte_carlo_within_3_se_of_dp", z < 3.0, z, 3.0, f"{mc_episodes} returns per state",
                     time.time() - t0))
    mdps = [chain_mdp(3, rewards=[-0.5, 0.2, -1.0], gamma=0.9, slip=0.2), grid_mdp(2, 2, 0.9, 0.1),
            chain_mdp(2, gamma=0.5)]
    r = Rng(11)
    for _ in range(5):
        S, A = 3, 2
        P = r.uniform(0.0, 1.0, (S, A, S))
        P /= P.sum(axis=2, keepdims=True)
        mdps.append(TabularMDP(P, r.normal((S, A, S)), 0.8, frozenset(), 0))
    ok = True
    for mdp in mdps:
        q = value_iteration(mdp)
        best_v, best = brute_force_optimal(mdp)
        g = tuple(int(a) for a in np.argmax(greedy_policy(q), axis=1))
        nonterm = [s for s in range(mdp.n_states) if s not in mdp.terminal]
        ok &= any(all(g[s] == p[s] for s in nonterm) for p in best)
        ok &= bool(np.allclose(np.max(q, axis=1), best_v, atol=1e-8))
    out.append(Check("greedy_q_star_eq_brute_force", ok, None, None, f"{len(mdps)} MDPs with <= 4 states"))
    return out


def check_stats() -> list[Check]:
    rs = [pearson_r([1, 2, 3], [2, 4, 6]), pearson_r([1, 2, 3], [3, 2, 1]), pearson_r([1, 2, 3], [1, 3, 2])]
    e1 = max(abs(a - b) for a, b in zip(rs, (1.0, -1.0, 0.5)))
    sv = [sign_variance_of([[1, 2, 3, 4, 5]]), sign_variance_of([[1, -1, 1, -1, 1]]),
          sign_variance_of([[1, 1, 1, 1, -1]])]
    e2 = max(abs(a - b) for a, b in zip(sv, (0.0, 0.96, 0.64)))
    r = Rng(3)
    e3 = 0.0
    for _ in range(20):
        a = r.normal((5, 4))
        s = singular_values(a)
        ev = np.sort(_eigvals_brute(a.T @ a))[::-1]
        if len(ev) != len(s):
            e3 = math.inf
            break
        e3 = max(e3, float(np.max(np.abs(s ** 2 - ev))) / max(1.0, float(ev[0])))
    return [Check("pearson_hand_cases", e1 < 1e-12, e1, 1e-12, "1, -1, 0.5"),
            Check("sign_variance_hand_cases", e2 < 1e-12, e2, 1e-12, "0, 0.96, 0.64"),
            Check("jacobi_svd_vs_eigen_brute_force", e3 < 1e-8, e3, 1e-8, "20 random 5x4 matrices")]


def _eigvals_brute(m: np.ndarray) -> np.ndarray:
    """Roots of det(m - lam I) by a sign-change scan and bisection.

    ``m`` is symmetric positive semi-definite, so all roots lie in [0, trace]."""
    n = m.shape[0]
    charp = lambda lam: np.linalg.det(m - lam * np.eye(n))
    hi = float(np.trace(m)) + 1.0
    grid = np.linspace(-1e-9, hi, 4000)
    vals = [charp(x) for x in grid]
    roots = []
    for x0, x1, f0, f1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if f0 == 0.0:
            roots.append(x0)
        elif f0 * f1 < 0:
            lo, up, flo = x0, x1, f0
            for _ in range(200):
                mid = 0.5 * (lo + up)
                fm = charp(mid)
                if fm * flo <= 0:
                    up = mid
                else:
                    lo, flo = mid, fm
            roots.append(0.5 * (lo + up))
    return np.array(roots)  # fewer than n roots (a repeated eigenvalue) makes the caller's check fail


def check_taylor_gain(draws: int = 20, lr: float = 1e-6, tol: float = 1e-3) -> Check:
    """Offset-0 gain after one SGD step equals -lr * rho(t, t) to first order."""
    worst = 0.0
    for i in range(draws):
        kind = ("regression", "td0", "ql", "ddqn")[i % 4]
        model, a, _ = random_draw(i, kind)
        obj = Objective(kind, 0.9)
        s = Sample(a.x, a.y, a.a, a.r, a.x_next, a.done, 0, 0, 0)
        gain = update_gains(model, [s], 0, obj, make_optimizer("sgd", lr), (0,), freeze_eval_target=True)[0]
        rho = pair_record(model, obj, s, s, 0, 0).rho
        worst = max(worst, abs(gain + lr * rho) / max(lr * rho, 1e-300))
    return Check("taylor_gain0_eq_minus_lr_rho", worst < tol, worst, tol, f"{draws} draws, lr={lr}")


def run_all(draws: int = 100, quick: bool = False) -> list[Check]:
    """All suites; ``quick`` shrinks draw counts and episode budgets for smoke use."""
    d = 10 if quick else draws
    checks = []
    checks += check_gradients(d)
    checks += check_rho_prime(d)
    checks += check_closed_form()
    checks.append(check_misprint())
    checks += check_identities(min(d, 50))
    checks += check_dp(10_000 if quick else 100_000, mc_episodes=10_000 if quick else 100_000)
    checks += check_stats()
    checks.append(check_taylor_gain(min(d, 20)))
    return checks
