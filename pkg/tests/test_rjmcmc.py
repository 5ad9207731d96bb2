import math
from collections import Counter

import numpy as np
import pytest
from scipy import integrate

from vineselect.baselines import scenario
from vineselect.pair_copulas import make_pair, pair_loglik
from vineselect.rjmcmc import (
    LOG30,
    ConfigError,
    LevelSampler,
    ModeTracker,
    PriorConfig,
    TuningParams,
    audit_detailed_balance,
    floored_probs,
    log_param_prior,
    log_prior,
    pair_from_group,
    posterior_mode,
    qN_masses,
    select_vine,
    tn_draw,
    tn_logpdf,
)
from vineselect.tree_space import AllowedGraph, enumerate_spanning_trees
from vineselect.vine import VineCopula, VineStructure, level_loglik, simulate, validate, vine_loglik


def d4_copula():
    return VineCopula.from_labels(4, [
        [("1,2", make_pair("C", 0.5)), ("2,3", make_pair("T", 0.4, 4.0)), ("2,4", make_pair("G", -0.45))],
        [("1,3|2", make_pair("N", 0.3)), ("3,4|2", make_pair("C180", 0.2))],
        [("1,4|2,3", make_pair("N", 0.1))],
    ])


# -- proposal and prior pieces ---------------------------------------------------------

def test_qN_masses_for_five_edges():
    raw, p = qN_masses(5)
    np.testing.assert_allclose(raw, [0.573, 0.178, 0.109, 0.079, 0.062], atol=1e-3)
    assert raw.sum() == pytest.approx(1.0, abs=2e-3)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(p) < 0)


def test_qN_single_edge():
    assert qN_masses(1)[1].tolist() == [1.0]


def test_floored_probs():
    p = floored_probs([0.0, -50.0, -1.0], 0.05)
    assert p.sum() == pytest.approx(1.0)
    assert p.min() / p.max() == pytest.approx(0.05)
    assert p[2] / p[0] == pytest.approx(math.exp(-1.0))
    np.testing.assert_allclose(floored_probs([3.0, 3.0], 0.05), [0.5, 0.5])


def test_truncated_normal_density_and_draws():
    mu, sd, lo, hi = 0.97, 0.05, -1.0, 1.0
    z, _ = integrate.quad(lambda x: math.exp(tn_logpdf(x, mu, sd, lo, hi)), lo, hi, points=[mu])
    assert z == pytest.approx(1.0, abs=1e-8)
    assert tn_logpdf(1.0, mu, sd, lo, hi) == -math.inf
    rng = np.random.default_rng(0)
    x = np.array([tn_draw(rng, mu, sd, lo, hi) for _ in range(20_000)])
    assert np.all((x > lo) & (x < hi))
    mean, _ = integrate.quad(lambda t: t * math.exp(tn_logpdf(t, mu, sd, lo, hi)), lo, hi, points=[mu])
    assert x.mean() == pytest.approx(mean, abs=3 * x.std() / math.sqrt(x.size))
    # far outside the support the inverse-cdf fallback keeps draws inside
    y = tn_draw(rng, 5.0, 0.01, lo, hi)
    assert lo < y < hi


@pytest.mark.parametrize("df_prior", ["log", "flat-log"])
def test_parameter_priors_are_normalized(df_prior):
    prior = PriorConfig(df_prior=df_prior)
    z, _ = integrate.quad(lambda t: math.exp(log_param_prior("N", (t, math.nan), prior)), -1, 1)
    assert z == pytest.approx(1.0)
    z, _ = integrate.dblquad(lambda ln, t: math.exp(log_param_prior("T", (t, ln), prior)),
                             -1, 1, 0, LOG30)
    assert z == pytest.approx(1.0, abs=1e-8)
    assert log_param_prior("T", (0.1, LOG30 + 0.1), prior) == -math.inf


def test_log_prior_example():
    prior = PriorConfig(lam=1.0)
    fams = ["N", "T", "I"]
    params = [(0.3, None), (-0.2, 5.0), (0.0, None)]
    I = 30 * math.log(30) - 29
    expected = -math.log(3) - 3.0 - 2 * math.log(2) + math.log(math.log(5.0)) - math.log(I)
    assert log_prior(3, fams, params, prior) == pytest.approx(expected, rel=1e-14)
    assert log_prior(3, ["T"], [(0.1, 31.0)], prior) == -math.inf
    assert log_prior(1, ["I", "I"], [(0, None)] * 2, PriorConfig(lam=0.0)) == 0.0


def test_natural_and_log_scale_priors_agree():
    # the df density in df and in log(df) differ by the Jacobian df
    prior = PriorConfig()
    df = 7.0
    a = log_prior(1, ["T"], [(0.2, df)], prior) + math.log(df)
    b = log_param_prior("T", (0.2, math.log(df)), prior) - 2.0
    assert a == pytest.approx(b)


def test_pair_from_group_clamps_df():
    pc = pair_from_group("T", (0.3, math.log(30.0)))
    assert pc.df == 30.0
    assert pair_from_group("C180", (-0.2, math.nan)).family.rotation == 270


def test_config_errors():
    with pytest.raises(ConfigError):
        TuningParams(R=100, burn_in=100)
    with pytest.raises(ConfigError):
        TuningParams(families=("N",))
    with pytest.raises(ConfigError):
        TuningParams(families=("N", "X"))
    with pytest.raises(ConfigError):
        TuningParams(p_tree=1.0)
    with pytest.raises(ConfigError):
        PriorConfig(lam=-1)
    with pytest.raises(ConfigError):
        PriorConfig(df_prior="uniform")


# -- mode extraction --------------------------------------------------------------------

def test_mode_tracker_ties_and_means():
    t = ModeTracker()
    t.add("A", "A", np.zeros(0), np.array([1.0]))
    t.add("B", "B", np.zeros(0), np.array([5.0]))
    t.add("B", "B", np.zeros(0), np.array([7.0]))
    t.add("A", "A", np.zeros(0), np.array([3.0]))
    m = t.mode()
    assert m["label"] == "A" and m["frequency"] == 0.5
    assert m["level_mean"].tolist() == [2.0]
    assert t.table() == [("A", 0.5), ("B", 0.5)]


def test_gaussian_collapse_picks_most_visited_member():
    recs = [("GAUSS", "x", np.zeros(0), np.array([0.1])),
            ("GAUSS", "y", np.zeros(0), np.array([0.2])),
            ("GAUSS", "y", np.zeros(0), np.array([0.4])),
            ("Z", "z", np.zeros(0), np.array([9.0])),
            ("Z", "z", np.zeros(0), np.array([9.0]))]
    m = posterior_mode(recs)
    assert m["label"] == "GAUSS" and m["frequency"] == 0.6
    assert m["key"] == "y"
    assert m["level_mean"][0] == pytest.approx(0.3)


def test_posterior_mode_requires_records():
    with pytest.raises(ValueError):
        ModeTracker().mode()


# -- chain correctness ---------------------------------------------------------------------

def exact_prior_level1(d, families, lam):
    trees = enumerate_spanning_trees(AllowedGraph.complete(d))
    w = np.array([math.exp(-lam * (0 if g == "I" else 2 if g == "T" else 1)) for g in families])
    w /= w.sum()
    return trees, dict(zip(families, w))


def test_prior_recovery_short_chain():
    fams = ("I", "N", "T")
    tuning = TuningParams(R=30_000, burn_in=1000, sigma_tau=1.0, sigma_lognu=1.5, families=fams)
    s = LevelSampler(1, None, 3, VineStructure(3, ()), [], [], PriorConfig(), tuning,
                     np.random.default_rng(1))
    est = s.run()
    tr = est.trace
    labels = Counter(tr.model_labels[m] for m in tr.model_ids[tuning.burn_in:])
    n = sum(labels.values())
    trees, pf = exact_prior_level1(3, fams, 1.0)
    tv = 0.0
    for t in trees:
        for g1 in fams:
            for g2 in fams:
                e1, e2 = sorted(t)
                lab = f"{e1[0] + 1},{e1[1] + 1}={g1} {e2[0] + 1},{e2[1] + 1}={g2}"
                tv += abs(labels.get(lab, 0) / n - pf[g1] * pf[g2] / len(trees))
    assert 0.5 * tv < 0.03


def _audit(k, data, lower=None, paper=False, seed=3):
    d = data.shape[1]
    tuning = TuningParams(R=400, burn_in=10, record_transitions=100, paper_cancellation=paper)
    if lower is None:
        struct, groups, thetas = VineStructure(d, ()), [], []
    else:
        struct, groups, thetas = lower
    s = LevelSampler(k, data, d, struct, groups, thetas, PriorConfig(), tuning,
                     np.random.default_rng(seed))
    s.run()
    assert len(s.transitions) == 100
    return np.array(audit_detailed_balance(s, data)), s


def test_detailed_balance_level1():
    U = simulate(d4_copula(), 150, np.random.default_rng(2))
    res, s = _audit(1, U)
    assert np.all(np.isfinite(res))
    assert np.max(np.abs(res)) < 1e-8
    moves = Counter(r["move"] for r in s.transitions)
    assert moves[1] > 0 and moves[2] > 0


def test_detailed_balance_level2_with_lower_parameters():
    cop = scenario(2)
    U = simulate(cop, 150, np.random.default_rng(4))
    struct = cop.structure.prefix(1)
    groups = [[pc.family.group for pc in cop.pairs[0]]]
    thetas = [[(pc.tau, math.log(pc.df) if pc.df else math.nan) for pc in cop.pairs[0]]]
    res, s = _audit(2, U, (struct, groups, thetas))
    assert s.stp > 1
    assert np.max(np.abs(res)) < 1e-8


def test_paper_cancellation_breaks_balance_when_normalizers_differ():
    U = simulate(d4_copula(), 150, np.random.default_rng(2))
    res, s = _audit(1, U, paper=True)
    tree_moves = [r for r, t in zip(res, s.transitions) if t["move"] == 2]
    assert max(abs(r) for r in tree_moves) > 1e-6


def test_within_model_posterior_matches_quadrature():
    pc = make_pair("N", 0.5)
    U = simulate(VineCopula.from_labels(2, [[("1,2", pc)]]), 300, np.random.default_rng(5))
    tuning = TuningParams(R=20_000, burn_in=2000, families=("I", "N"))
    s = LevelSampler(1, U, 2, VineStructure(2, ()), [], [], PriorConfig(), tuning,
                     np.random.default_rng(6))
    e = next(iter(s.knodes))
    s.knodes[e] = s._make_knode(e, "N", (0.3, math.nan))
    draws = np.empty(tuning.R)
    for r in range(tuning.R):
        s.within_model_move()
        draws[r] = s.knodes[e].theta[0]
    draws = draws[tuning.burn_in:]
    grid = np.linspace(0.2, 0.8, 2001)
    ll = np.array([pair_loglik(make_pair("N", t), U[:, 0], U[:, 1]) for t in grid])
    w = np.exp(ll - ll.max())
    w /= w.sum()
    mean = float(np.sum(w * grid))
    sd = math.sqrt(float(np.sum(w * (grid - mean) ** 2)))
    assert draws.mean() == pytest.approx(0.5, abs=0.05)
    assert draws.mean() == pytest.approx(mean, abs=0.3 * sd)
    assert draws.std() == pytest.approx(sd, rel=0.2)


def test_independent_pair_selects_independence():
    U = np.random.default_rng(7).random((500, 2))
    res = select_vine(U, tuning=TuningParams(R=3000, burn_in=500), seed=1)
    assert res.copula.pairs[0][0].family.kind == "I"
    assert res.levels[0].mode_frequency > 0.5


def test_lambda_zero_mode_near_exhaustive_plugin_maximum():
    U = simulate(d4_copula(), 200, np.random.default_rng(8))
    prior = PriorConfig(lam=0.0)
    tuning = TuningParams(R=3000, burn_in=500)
    res = select_vine(U, prior, tuning, seed=2, levels=1)
    ll_mode = level_loglik(res.copula, 1, U)
    probe = LevelSampler(1, U, 4, VineStructure(4, ()), [], [], prior, tuning, np.random.default_rng(0))
    best = max(sum(max(v[1] for v in probe.plugin(e).values()) for e in t)
               for t in enumerate_spanning_trees(probe.graph))
    assert ll_mode >= 0.99 * best


def test_selection_is_deterministic_and_valid():
    U = simulate(d4_copula(), 150, np.random.default_rng(9))
    tuning = TuningParams(R=300, burn_in=50)
    a = select_vine(U, tuning=tuning, seed=11)
    b = select_vine(U, tuning=tuning, seed=11)
    assert a.copula.to_json() == b.copula.to_json()
    for x, y in zip(a.levels, b.levels):
        np.testing.assert_array_equal(x.trace.loglik, y.trace.loglik)
        assert list(x.trace.records()) == list(y.trace.records())
    assert validate(a.copula.structure) == []
    assert len(a.levels) == 3


def test_partial_selection_is_truncated():
    U = simulate(d4_copula(), 150, np.random.default_rng(10))
    res = select_vine(U, tuning=TuningParams(R=200, burn_in=50), seed=1, levels=1)
    cop = res.copula
    assert cop.truncation == 1 and cop.structure.complete
    assert vine_loglik(cop, U) == pytest.approx(level_loglik(cop, 1, U))


def test_trace_records_and_acceptance():
    U = simulate(d4_copula(), 100, np.random.default_rng(12))
    res = select_vine(U, tuning=TuningParams(R=200, burn_in=50), seed=3, levels=1)
    est = res.levels[0]
    recs = list(est.trace.records())
    assert len(recs) == 200 and recs[0]["iter"] == 1
    assert {r["accepted_move"] for r in recs} <= {"none", "family", "tree"}
    assert all(len(r["model_hash"]) == 12 for r in recs)
    assert set(est.acceptance) <= {"family", "tree"}
    assert sum(f for _, f in est.model_table) == pytest.approx(1.0)


def test_families_restriction_is_respected():
    U = simulate(d4_copula(), 150, np.random.default_rng(13))
    res = select_vine(U, tuning=TuningParams(R=300, burn_in=50, families=("I", "N")), seed=4)
    assert all(pc.family.kind in ("I", "N") for lv in res.copula.pairs for pc in lv)
