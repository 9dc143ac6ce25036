import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medpath.effects import (
    ExposureContrast,
    compute_ppi,
    decompose_effects,
    decomposition_error,
    effect_draws,
    pooled,
    score_selection,
    select_pathways,
)
from medpath.sampler import ChainOutput


def fake_chain(draws=200, q=4, seed=0, on=(0.9, 0.6, 0.2, 0.0)):
    rng = np.random.default_rng(seed)
    gamma = (rng.random((draws, q)) < np.array(on[:q]) + 0.05).astype(np.int8)
    omega = (gamma == 1) & (rng.random((draws, q)) < 0.9)
    omega = omega.astype(np.int8)
    tau = np.where(gamma == 1, rng.normal(0.3, 0.1, (draws, q)), 0.0)
    delta = np.where(omega == 1, rng.normal(1.0, 0.2, (draws, q)), 0.0)
    d = {"iteration": np.arange(draws), "alpha0": rng.standard_normal(draws),
         "alpha_a": rng.normal(0.5, 0.1, draws), "sigma2": np.ones(draws), "loglik": np.zeros(draws),
         "alpha": np.zeros((draws, 1)), "gamma": gamma, "omega": omega, "tau": tau, "delta": delta,
         "lam": np.zeros((draws, q))}
    return ChainOutput(d, {"mediator_names": [f"m{j}" for j in range(q)]})


def test_contrast_forms():
    assert ExposureContrast(0.49, -0.54).c == pytest.approx(1.03)
    assert ExposureContrast.of(2.0).c == 2.0
    A = np.arange(101.0)
    c = ExposureContrast.from_exposure(A)
    assert (c.a, c.a_star) == (75.0, 25.0)
    with pytest.raises(ValueError):
        ExposureContrast(np.inf, 0.0)


def test_ppi_pools_draws_across_chains():
    a, b = fake_chain(seed=1), fake_chain(seed=2, draws=100)
    both_a = (a.draws["gamma"] == 1) & (a.draws["omega"] == 1)
    both_b = (b.draws["gamma"] == 1) & (b.draws["omega"] == 1)
    expect = (both_a.sum(axis=0) + both_b.sum(axis=0)) / 300
    assert np.allclose(compute_ppi([a, b]), expect)
    assert np.allclose(compute_ppi(a), both_a.mean(axis=0))


def test_pooled_rejects_mismatched_chains():
    with pytest.raises(ValueError, match="disagree"):
        pooled([fake_chain(q=4), fake_chain(q=3)], "gamma")
    with pytest.raises(ValueError, match="no chains"):
        pooled([], "gamma")
    with pytest.raises(ValueError, match="no stored draws"):
        pooled(fake_chain(draws=0), "gamma")


def test_median_probability_selection_examples():
    assert list(select_pathways([0.5, 0.51, 0.49, 1.0, 0.0])) == [0, 1, 0, 1, 0]
    assert list(select_pathways([0.3, 0.35], cutoff=0.3)) == [0, 1]
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            select_pathways([0.5], bad)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-5, 5))
def test_decomposition_identity_holds_per_draw(seed, c):
    d = effect_draws([fake_chain(seed=seed)], c)
    assert decomposition_error(d) < 1e-12
    assert np.allclose(d["ie"], c * fake_chain(seed=seed).draws["tau"] * fake_chain(seed=seed).draws["delta"])


def test_contrast_scales_effects_linearly():
    ch = fake_chain(seed=3)
    s1 = decompose_effects(ch, 1.0)
    s2 = decompose_effects(ch, ExposureContrast(0.49, -0.54))
    assert np.allclose(s2.ie_mean, 1.03 * s1.ie_mean)
    assert s2.de["mean"] == pytest.approx(1.03 * s1.de["mean"])
    # odds-ratio columns are the exponentiated draws, not the exponentiated means
    de = 1.03 * ch.draws["alpha_a"]
    assert s2.or_de["mean"] == pytest.approx(np.exp(de).mean())


def test_conditional_effects_use_only_selected_draws():
    ch = fake_chain(seed=4)
    s = decompose_effects(ch, 2.0)
    both = (ch.draws["gamma"] == 1) & (ch.draws["omega"] == 1)
    ie = 2.0 * ch.draws["tau"] * ch.draws["delta"]
    for j in range(4):
        if both[:, j].any():
            assert s.ie_cond_mean[j] == pytest.approx(ie[both[:, j], j].mean())
        else:
            assert np.isnan(s.ie_cond_mean[j])
    assert np.allclose(s.ie_mean, ie.mean(axis=0))
    assert s.names == ["m0", "m1", "m2", "m3"]
    rows = s.mediator_rows(truth_ie=[0.1, 0, 0, 0])
    assert rows[0]["true_ie"] == 0.1
    assert all((r["ie_cond_mean"] is None) == (r["n_cond"] == 0) for r in rows)


def test_summary_files(tmp_path):
    s = decompose_effects([fake_chain(seed=5), fake_chain(seed=6)], 1.0)
    s.write(tmp_path)
    import csv
    import json

    doc = json.loads((tmp_path / "effects.json").read_text())
    assert doc["n_selected"] == int(s.selected.sum())
    rows = list(csv.DictReader(open(tmp_path / "effects.csv")))
    assert len(rows) == 4
    for r in rows:
        if r["ie_cond_mean"]:
            assert float(r["or_ie_cond"]) == pytest.approx(np.exp(float(r["ie_cond_mean"])))


@settings(max_examples=100, deadline=None)
@given(sel=st.lists(st.integers(0, 1), min_size=1, max_size=30), data=st.data())
def test_scores_match_brute_force_counts(sel, data):
    truth = data.draw(st.lists(st.integers(0, 1), min_size=len(sel), max_size=len(sel)))
    oc = score_selection(sel, truth)
    pairs = list(zip(sel, truth))
    tp, fp = pairs.count((1, 1)), pairs.count((1, 0))
    tn, fn = pairs.count((0, 0)), pairs.count((0, 1))
    assert (oc.tp, oc.fp, oc.tn, oc.fn, oc.nvs) == (tp, fp, tn, fn, tp + fp)
    for got, num, den in ((oc.tpr, tp, tp + fn), (oc.fpr, fp, fp + tn),
                          (oc.ppv, tp, tp + fp), (oc.npv, tn, tn + fn)):
        assert got is None if den == 0 else got == pytest.approx(100 * num / den)


def test_score_shape_mismatch():
    with pytest.raises(ValueError):
        score_selection([1, 0], [1])


def test_all_null_truth_has_no_tpr():
    oc = score_selection([0, 1, 0], [0, 0, 0])
    assert oc.tpr is None and oc.fpr == pytest.approx(100 / 3) and oc.ppv == 0.0
    assert oc.npv == 100.0
