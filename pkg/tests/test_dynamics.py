import numpy as np
import pytest

from tdlab.autodiff import LayoutMismatch, ParamVector
from tdlab.dynamics import (RHO_PRIME_HEADER, RhoPrimeBreakdown, _misprinted_reg_r2, fd_oracle_momentum, fd_oracle_rho_prime,
                            hessian_free_rho_prime, momentum_interference, rho_bar_prime, rho_prime_csv,
                            rho_prime_general, rho_prime_reg_terms, rho_prime_td_terms, rho_value,
                            term_statistics, update_direction)
from tdlab.learners import Objective, Sample
from tdlab.models import ModelSpec, ValueModel, init, scalar_output
from tdlab.rng import Rng

HALF = Objective("regression", half=True)


def one_param(theta=1.0):
    spec = ModelSpec("linear", (1,), bias=False)
    return ValueModel(spec, ParamVector.from_blocks({"out.w": np.array([[theta]])}))


A1 = Sample(np.array([1.0]), 0.0, key=0)
B1 = Sample(np.array([2.0]), 0.0, key=1)


def random_case(seed, kind="regression", n_o=1):
    rng = Rng(seed)
    m = init(ModelSpec("mlp", (3,), n_h=5, n_L=1, n_o=n_o, activation="tanh"), seed)
    mk = lambda k: Sample(rng.normal(3), float(rng.normal()), int(rng.integer(n_o)), float(rng.normal()),
                          rng.normal(3), False, k)
    return m, Objective(kind, 0.9), mk(0), mk(1)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# --- one-parameter hand case -------------------------------------------------------

def test_one_param_general_and_hessian_free():
    m = one_param()
    assert rho_value(m, HALF, A1, B1) == pytest.approx(4.0, abs=1e-15)
    assert rho_prime_general(m, HALF, A1, B1) == pytest.approx(-32.0, abs=1e-12)
    assert hessian_free_rho_prime(m, HALF, A1, B1) == pytest.approx(-32.0, abs=1e-12)
    # unhalved loss: 8x
    assert rho_prime_general(m, Objective("regression"), A1, B1) == pytest.approx(-256.0, abs=1e-10)
    for th in (0.5, -1.5):
        assert rho_prime_general(one_param(th), HALF, A1, B1) == pytest.approx(-32 * th ** 2, rel=1e-13)


def test_one_param_reg_terms_and_misprint():
    bd = rho_prime_reg_terms(one_param(), HALF, A1, B1)
    assert (bd.r1, bd.r2, bd.r3, bd.total) == pytest.approx((16.0, 16.0, 0.0, -32.0), abs=1e-12)
    with _misprinted_reg_r2():
        bad = rho_prime_reg_terms(one_param(), HALF, A1, B1)
    assert bad.total == pytest.approx(-48.0, abs=1e-12)
    rep = fd_oracle_rho_prime(one_param(), HALF, A1, B1, analytic=bad.total)
    assert not rep.passes()
    assert fd_oracle_rho_prime(one_param(), HALF, A1, B1, analytic=bd.total).passes()


def test_one_param_fd_slope_converges():
    rep = fd_oracle_rho_prime(one_param(), HALF, A1, B1, alphas=(1e-3, 5e-4, 2.5e-4))
    # rho(theta) = 4 theta^2, theta' = theta (1 - 4 alpha): slope = -32 + 64 alpha exactly
    for al, sl in zip(rep.alphas, rep.slopes):
        assert sl == pytest.approx(-32 + 64 * al, rel=1e-9)
    assert rep.ratios == pytest.approx((2.0, 2.0), rel=1e-5)


def test_zero_update_direction():
    m = one_param()
    b0 = Sample(np.array([2.0]), 2.0, key=1)  # f(B) = y: grad J_B = 0
    assert rho_prime_general(m, HALF, A1, b0) == 0.0
    assert rho_bar_prime(m, HALF, A1, b0) == 0.0
    rep = fd_oracle_rho_prime(m, HALF, A1, b0)
    assert rep.slopes == (0.0, 0.0)


def test_rho_bar_prime_linear_is_zero():
    m = init(ModelSpec("linear", (3,)), 0)
    a, b = Sample(np.ones(3), 0.3), Sample(np.arange(3.0), -1.0)
    assert rho_bar_prime(m, HALF, a, b) == 0.0


def test_reg_terms_zero_errors():
    m = init(ModelSpec("mlp", (2,), n_h=3, activation="tanh"), 1)
    a = Sample(np.array([0.1, 0.2]), scalar_output(m, np.array([0.1, 0.2])))
    b = Sample(np.array([-0.3, 0.5]), scalar_output(m, np.array([-0.3, 0.5])))
    bd = rho_prime_reg_terms(m, HALF, a, b)
    assert (bd.r1, bd.r2, bd.r3, bd.total) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        rho_prime_reg_terms(m, Objective("td0"), a, b)


# --- random draws -----------------------------------------------------------------

@pytest.mark.parametrize("kind", ["regression", "td0", "ql"])
@pytest.mark.parametrize("seed", range(4))
def test_identity_and_breakdown(kind, seed):
    m, obj, a, b = random_case(seed, kind, n_o=1 if kind != "ql" else 3)
    g = rho_prime_general(m, obj, a, b)
    h = hessian_free_rho_prime(m, obj, a, b)
    assert rel(g, h) < 1e-8
    if obj.kind in ("regression", "td0"):
        bd = rho_prime_reg_terms(m, obj, a, b) if kind == "regression" else rho_prime_td_terms(m, obj, a, b)
        assert abs(bd.total + bd.r1 + bd.r2 + bd.r3) <= 1e-10 * max(1.0, abs(bd.total))
        assert rel(bd.total, g) < 1e-8


@pytest.mark.parametrize("kind", ["regression", "classification", "td0"])
@pytest.mark.parametrize("seed", range(3))
def test_fd_oracle_random(kind, seed):
    m, obj, a, b = random_case(seed, kind, n_o=1 if kind != "classification" else 3)
    if kind == "classification":
        a = Sample(a.x, int(seed % 3), key=0)
        b = Sample(b.x, int((seed + 1) % 3), key=1)
    rep = fd_oracle_rho_prime(m, obj, a, b)
    assert rep.passes(), rep
    rb = fd_oracle_rho_prime(m, obj, a, b, quantity="rho_bar")
    assert rb.passes(), rb


def test_td_gamma_zero_reduces_to_regression():
    m, _, a, b = random_case(7)
    td = Objective("td0", 0.0, half=True)
    # with gamma = 0 the target is r, so the regression label is r
    ra, rb_ = Sample(a.x, a.r, key=0), Sample(b.x, b.r, key=1)
    t = rho_prime_td_terms(m, td, a, b)
    r = rho_prime_reg_terms(m, HALF, ra, rb_)
    assert (t.r1, t.r2, t.r3, t.total) == (r.r1, r.r2, r.r3, r.total)


def test_td_tabular_one_hot():
    n = 4
    spec = ModelSpec("linear", (n,), bias=False)
    w = Rng(3).normal((n, 1))
    m = ValueModel(spec, ParamVector.from_blocks({"out.w": w}))
    e = np.eye(n)
    a = Sample(e[1], a=0, r=0.7, x_next=e[2], key=1)
    obj = Objective("td0", 0.9, half=True)
    bd = rho_prime_td_terms(m, obj, a, a)
    delta = w[1, 0] - (0.7 + 0.9 * w[2, 0])
    assert bd.rho_bar["A'B"] == 0.0
    assert bd.r1 == pytest.approx(delta ** 2, rel=1e-14)
    assert bd.r3 == 0.0


def test_td_frozen_drops_gamma_terms():
    m, obj, a, b = random_case(2, "td0")
    shadow = m.params * 0.5
    bd = rho_prime_td_terms(m, obj, a, b, "frozen", shadow)
    assert bd.rho_bar["A'B"] == 0.0 and bd.rho_bar["B'B"] == 0.0
    rep = fd_oracle_rho_prime(m, obj, a, b, analytic=bd.total, target_params=shadow)
    assert rep.passes(), rep
    ema = rho_prime_td_terms(m, obj, a, b, "ema", shadow, tau=0.01)
    assert ema.rho_bar["A'B"] != 0.0
    with pytest.raises(ValueError):
        rho_prime_td_terms(m, obj, a, Sample(b.x, key=1), "self")


# --- momentum ------------------------------------------------------------------------

def test_momentum_limits():
    m, obj, a, b = random_case(4)
    rng = Rng(9)
    mu = m.params.with_data(rng.normal(len(m.params)))
    zero = momentum_interference(m, obj, a, b, mu, 0.0)
    assert zero.rho_mu == pytest.approx(rho_value(m, obj, a, b), rel=1e-14)
    assert zero.rho_prime_mu == pytest.approx(rho_prime_general(m, obj, a, b), rel=1e-12)
    mi = momentum_interference(m, obj, a, b, m.params * 0.0, 0.9)
    assert mi.rho_mu == pytest.approx(0.1 * rho_value(m, obj, a, b), rel=1e-14)
    with pytest.raises(LayoutMismatch):
        momentum_interference(m, obj, a, b, ParamVector.from_blocks({"z": np.zeros(2)}), 0.9)
    with pytest.raises(ValueError):
        momentum_interference(m, obj, a, b, mu, 1.0)


@pytest.mark.parametrize("kind", ["regression", "td0"])
@pytest.mark.parametrize("along", ["step", "grad"])
def test_momentum_fd_oracle(kind, along):
    m, obj, a, b = random_case(5, kind)
    d = Rng(11).normal(len(m.params))
    gb = update_direction(m, obj, b)
    mu = m.params.with_data(d / np.linalg.norm(d) * gb.norm())
    rep = fd_oracle_momentum(m, obj, a, b, mu, 0.9, along=along)
    assert rep.passes(), rep


# --- aggregation and output ------------------------------------------------------------

def bd_of(*vals):
    return [RhoPrimeBreakdown(-v, v, 0.0, 0.0, "reg", (0, 0), 0.0, 0.0) for v in vals]


def test_term_statistics():
    st = term_statistics(bd_of(1.0, -1.0))
    assert st["r1"] == {"mean": 0.0, "pos_mean": 1.0, "neg_mean": -1.0}
    assert term_statistics(bd_of(1.0, 3.0))["r1"]["neg_mean"] == 0.0
    xs = [0.3, -2.0, 5.0, 1.5, -0.1]
    assert term_statistics(bd_of(*xs)) == term_statistics(bd_of(*xs[::-1]))
    with pytest.raises(ValueError):
        term_statistics([])


def test_rho_prime_csv():
    m = one_param()
    bd = rho_prime_reg_terms(m, HALF, A1, B1)
    rep = fd_oracle_rho_prime(m, HALF, A1, B1)
    lines = rho_prime_csv([(0, bd, rep), (1, bd, None)]).splitlines()
    assert lines[0] == ",".join(RHO_PRIME_HEADER)
    assert lines[1].startswith("0,reg,0,1,16.0,16.0,0.0,-32.0,")
    assert lines[2].endswith(",NA,NA,NA")
