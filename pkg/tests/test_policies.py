import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qsched.errors import ConfigError, PolicyError
from qsched.policies import (
    ISPS,
    MWM,
    QPS,
    ConstantWeights,
    Eryilmaz,
    EryilmazEntry,
    EryilmazSpec,
    ExpCounterexample,
    ExpRule,
    ExpRuleParams,
    eryilmaz_weights,
    exp_counterexample_weights,
    exp_rule_weights,
    isps_search,
    make_policy,
    mwm_weights,
    qps_residual,
    qps_search,
)
from qsched.rate_region import ChannelModel, ergodic_boundary_point

mpmath.mp.dps = 50


def mp_softmax(z):
    e = [mpmath.e ** mpmath.mpf(x) for x in z]
    s = mpmath.fsum(e)
    return [float(x / s) for x in e]


def mp_exp_rule(q, gamma, alpha, beta, eta):
    M = len(q)
    mean = mpmath.fsum(mpmath.mpf(a) * x for a, x in zip(alpha, q)) / M
    d = beta + mean ** mpmath.mpf(eta)
    raw = [g * mpmath.e ** (a * x / d) for g, a, x in zip(gamma, alpha, q)]
    s = mpmath.fsum(raw)
    return [float(r / s) for r in raw]


# ---------------------------------------------------------------- closed forms

@pytest.mark.parametrize("q, expected", [
    ([4, 1], [0.8, 0.2]),
    ([0, 0], [0.5, 0.5]),
    ([7, 7], [0.5, 0.5]),
    ([0, 0, 0], [1 / 3, 1 / 3, 1 / 3]),
])
def test_mwm_examples(q, expected):
    np.testing.assert_allclose(mwm_weights(q), expected, rtol=0, atol=1e-15)


def test_exp_rule_zero_queue():
    np.testing.assert_allclose(exp_rule_weights([0, 0], ExpRuleParams.uniform(2)), [0.5, 0.5])


def test_exp_rule_gamma_ratio_at_zero():
    p = ExpRuleParams((2.0, 1.0), (1.0, 1.0), 1.0, 0.5)
    np.testing.assert_allclose(exp_rule_weights([0, 0], p), [2 / 3, 1 / 3], atol=1e-15)


def test_exp_rule_matches_high_precision():
    got = exp_rule_weights([10, 0], ExpRuleParams.uniform(2))
    # closed form 1 / (1 + exp(-10 / (1 + sqrt 5)))
    closed = float(1 / (1 + mpmath.e ** (-10 / (1 + mpmath.sqrt(5)))))
    assert got[0] == pytest.approx(closed, rel=1e-14)
    assert got[0] == pytest.approx(0.9564854388297703, rel=1e-14)


@pytest.mark.parametrize("q, gamma, alpha, beta, eta", [
    ([3.0, 50.0, 0.0], [1, 2, 0.5], [1, 0.5, 2], 2.0, 0.3),
    ([1e5, 2e5], [1, 1], [1, 1], 1.0, 0.9),
    ([0.0, 1e6], [3, 1], [0.1, 1], 0.5, 0.5),
])
def test_exp_rule_general_matches_high_precision(q, gamma, alpha, beta, eta):
    got = exp_rule_weights(q, ExpRuleParams(tuple(gamma), tuple(alpha), beta, eta))
    np.testing.assert_allclose(got, mp_exp_rule(q, gamma, alpha, beta, eta), rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("bad", [
    dict(gamma=(1, -1), alpha=(1, 1)),
    dict(gamma=(1, 1), alpha=(0, 1)),
    dict(gamma=(1, 1), alpha=(1, 1), beta=0.0),
    dict(gamma=(1, 1), alpha=(1, 1), eta=1.0),
])
def test_exp_rule_param_validation(bad):
    with pytest.raises(ConfigError):
        ExpRuleParams(**bad)


@pytest.mark.parametrize("entry, q, expected", [
    (EryilmazEntry("log1p"), [np.e - 1, 0], [1, 0]),
    (EryilmazEntry("power", exponent=0.5), [4, 1], [2 / 3, 1 / 3]),
    (EryilmazEntry("affine", slope=2, offset=1), [1, 0], [0.75, 0.25]),
    (EryilmazEntry("log1p"), [0, 0], [0.5, 0.5]),
])
def test_eryilmaz_examples(entry, q, expected):
    np.testing.assert_allclose(eryilmaz_weights(q, EryilmazSpec((entry,))), expected, atol=1e-15)


def test_eryilmaz_per_user_entries():
    spec = EryilmazSpec((EryilmazEntry("linear"), EryilmazEntry("power", exponent=0.5)))
    np.testing.assert_allclose(eryilmaz_weights([2, 4], spec), [0.5, 0.5])


@pytest.mark.parametrize("bad", [dict(family="exp"), dict(family="power", exponent=1.5),
                                 dict(family="affine", slope=0.0)])
def test_eryilmaz_catalog_is_closed(bad):
    with pytest.raises(ConfigError):
        EryilmazEntry(**bad)


@given(arrays(np.float64, 3, elements=st.floats(0, 1e6)))
def test_linear_catalog_entry_is_mwm(q):
    np.testing.assert_array_equal(eryilmaz_weights(q, EryilmazSpec.uniform("linear")), mwm_weights(q))


@pytest.mark.parametrize("t", [0.0, 3.0, 1e3, 1e6])
def test_counterexample_jump_is_constant(t):
    e = np.e
    np.testing.assert_allclose(exp_counterexample_weights([t + 1, t]), [e / (1 + e), 1 / (1 + e)], rtol=1e-12)


def test_counterexample_large_gap_without_overflow():
    got = exp_counterexample_weights([50, 0])
    oracle = mp_softmax([50, 0])
    assert got[1] == pytest.approx(oracle[1], rel=1e-12)
    assert got[1] == pytest.approx(1.9287498479639178e-22, rel=1e-12)
    assert got[0] == 1.0


# ---------------------------------------------------------------- properties

queues = arrays(np.float64, st.integers(2, 4), elements=st.floats(0, 1e6))


def _catalog(M):
    return [
        MWM(),
        ExpRule(ExpRuleParams.uniform(M)),
        ExpRule(ExpRuleParams(tuple(range(1, M + 1)), (0.5,) * M, 2.0, 0.7)),
        Eryilmaz(EryilmazSpec.uniform("log1p")),
        Eryilmaz(EryilmazSpec.uniform("power", exponent=0.3)),
        Eryilmaz(EryilmazSpec.uniform("affine", slope=0.5, offset=2.0)),
        ExpCounterexample(),
        ConstantWeights(tuple([1.0 / M] * M)),
    ]


@given(queues)
def test_every_closed_form_policy_normalizes(q):
    for pol in _catalog(q.shape[0]):
        w = pol.weights(q)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12
        np.testing.assert_array_equal(w, pol.weights(q.copy()))


@given(queues)
def test_batched_evaluation_matches_rowwise(q):
    batch = np.stack([q, q[::-1], np.zeros_like(q)])
    for pol in _catalog(q.shape[0]):
        np.testing.assert_allclose(pol.weights(batch), [pol.weights(row) for row in batch], rtol=1e-15, atol=1e-300)


@given(arrays(np.float64, 3, elements=st.integers(0, 10**6).map(float)),
       st.integers(1, 2**20).map(float))
def test_mwm_scale_invariance(q, c):
    # powers of two and integers keep the scaling exact
    c = 2.0 ** (int(c) % 40)
    np.testing.assert_array_equal(mwm_weights(c * q), mwm_weights(q))


@given(arrays(np.float64, st.integers(2, 5), elements=st.floats(-700, 700)))
def test_softmax_matches_naive_where_finite(q):
    naive = np.exp(q) / np.exp(q).sum()
    if not np.all(np.isfinite(naive)) or naive.sum() == 0:
        return
    got = exp_counterexample_weights(q)
    np.testing.assert_allclose(got, naive, rtol=1e-12, atol=1e-300)


# ---------------------------------------------------------------- QPS

def test_qps_symmetric_diagonal(swap_model):
    res = qps_search([1, 1], swap_model)
    np.testing.assert_allclose(res.mu, [0.5, 0.5], atol=1e-6)
    assert res.residual <= 1e-3


def test_qps_segment_region(segment_model):
    res = qps_search([1, 1], segment_model)
    assert res.residual <= 1e-3
    assert qps_residual(res.rate, np.array([1.0, 1.0])) == res.residual


def test_qps_axis_direction_matches_grid_oracle(swap_model):
    res = qps_search([1, 0], swap_model)
    # oracle: sweep a fine weight grid and keep the minimum residual
    ts = np.linspace(0, 1, 2001)
    resid = [qps_residual(ergodic_boundary_point(swap_model, np.array([t, 1 - t])), np.array([1.0, 0.0]))
             for t in ts]
    assert min(resid) == 0.0
    assert res.residual <= 1e-3
    assert res.rate[0] == pytest.approx(1.5) and res.rate[1] == pytest.approx(0.0, abs=1e-6)


def test_qps_zero_queue(swap_model):
    np.testing.assert_array_equal(qps_search([0, 0], swap_model).mu, [0.5, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.1, 100.0))
def test_qps_residual_contract(angle, scale):
    cm = ChannelModel.from_vertex_lists(
        [0.2, 0.5, 0.3], [[[3, 0], [0, 1], [2, 0.8]], [[1, 0], [0, 2]], [[1.5, 1.5]]])
    q = scale * np.array([np.cos(angle * np.pi / 2), np.sin(angle * np.pi / 2)])
    try:
        res = qps_search(q, cm, tol=1e-3)
    except PolicyError as exc:
        assert exc.best_residual is not None and exc.best_residual > 1e-3
        return
    r = ergodic_boundary_point(cm, res.mu) if res.residual == 0 else res.rate
    assert qps_residual(r, q) <= 1e-3


def test_qps_three_users_reaches_a_parallel_vertex():
    cm = ChannelModel.single([[1, 0.5, 0.5], [0.5, 1, 0.5], [0.5, 0.5, 1], [0.8, 0.8, 0.8]])
    res = qps_search([2, 1, 1], cm, tol=1e-6)
    assert res.iterations > 1
    np.testing.assert_allclose(res.rate, [1, 0.5, 0.5], atol=1e-12)
    assert res.residual <= 1e-6


def test_qps_three_users_symmetric_tie_reports_best_residual():
    # the target sits on a tie between three vertices; the jitter band is too narrow to average it
    cm = ChannelModel.from_vertex_lists(
        [0.5, 0.5], [[[1, 0, 0], [0, 1, 0], [0, 0, 1]], [[2, 0, 0], [0, 2, 0], [0, 0, 2]]])
    with pytest.raises(PolicyError) as exc:
        qps_search([1, 1, 1], cm, tol=1e-2)
    assert 1e-2 < exc.value.best_residual < 1.0


def test_qps_policy_is_referentially_transparent(swap_model):
    pol = QPS(swap_model)
    q = np.array([3.0, 1.0])
    a = pol.weights(q)
    b = QPS(swap_model).weights(q)
    np.testing.assert_array_equal(a, b)
    a[0] = -1
    assert pol.weights(q)[0] >= 0


# ---------------------------------------------------------------- ISPS

def brute_force_drain(vertices, q, horizon=3):
    """Fewest slots to empty q when each slot serves one chosen vertex."""
    V = np.asarray(vertices, float)
    for L in range(horizon + 1):
        for seq in itertools.product(range(len(V)), repeat=L):
            x = np.array(q, float)
            for k in seq:
                x = np.maximum(x - V[k], 0.0)
            if not np.any(x > 0):
                return L
    return None


def test_isps_zero_queue(swap_model):
    res = isps_search([0, 0], swap_model, [1, 1])
    np.testing.assert_array_equal(res.mu, [0.5, 0.5])
    np.testing.assert_array_equal(res.eta, [0, 0])


def test_isps_symmetric(swap_model):
    np.testing.assert_allclose(isps_search([5, 5], swap_model, [1, 1]).mu, [0.5, 0.5])


def test_isps_worked_example():
    cm = ChannelModel.single([[2, 0], [0, 1]])
    res = isps_search([2, 1], cm, [1, 1])
    np.testing.assert_allclose(res.eta, [1, 2])
    np.testing.assert_allclose(res.mu, [1 / 3, 2 / 3])
    assert res.makespan == brute_force_drain([[2, 0], [0, 1]], [2, 1]) == 2


TOY_REGION = [[2, 0], [0, 1]]
TOY_QUEUES = [
    (float(q1), float(q2))
    for q1 in np.arange(0, 6.5, 0.5) for q2 in np.arange(0, 3.5, 0.5)
    if brute_force_drain(TOY_REGION, (q1, q2)) is not None
]


@pytest.mark.parametrize("q", TOY_QUEUES)
def test_isps_drain_time_is_optimal(q):
    verts = TOY_REGION
    best = brute_force_drain(verts, q)
    assert isps_search(q, ChannelModel.single(verts), [1, 1]).makespan == best


def test_isps_stalled_drain_is_an_error():
    cm = ChannelModel.single([[1, 0]])
    with pytest.raises(PolicyError):
        isps_search([1, 1], cm, [1, 1])
    with pytest.raises(PolicyError):
        isps_search([50, 0], ChannelModel.single([[1, 0], [0, 1]]), [1, 1], drain_cap=10)


# ---------------------------------------------------------------- factory

@pytest.mark.parametrize("name, params, cls", [
    ("mwm", {}, MWM),
    ("exp_rule", {"gamma": 1.0, "alpha": [1, 2]}, ExpRule),
    ("eryilmaz", {"family": "power", "exponent": 0.5}, Eryilmaz),
    ("eryilmaz", {"functions": [{"family": "log1p"}, {"family": "linear"}]}, Eryilmaz),
    ("exp_counterexample", {}, ExpCounterexample),
    ("constant", {"mu": [0.25, 0.75]}, ConstantWeights),
    ("qps", {"tol": 1e-4}, QPS),
    ("isps", {}, ISPS),
])
def test_make_policy(name, params, cls, swap_model):
    pol = make_policy(name, 2, cm=swap_model, abar=[0.5, 0.5], **params)
    assert isinstance(pol, cls)
    assert pol.name == name
    assert abs(pol.weights(np.array([3.0, 1.0])).sum() - 1) <= 1e-12


def test_make_policy_unknown():
    with pytest.raises(ConfigError, match="unknown policy"):
        make_policy("round_robin", 2)
