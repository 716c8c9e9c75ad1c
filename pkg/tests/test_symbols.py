import warnings

import numpy as np
import pytest

from portsym.core import Dataset, Transition, collect
from portsym.domains import make_corridor, make_treasure
from portsym.domains.corridor import CLOCKWISE, decode_observation
from portsym.domains.treasure import DOWN_LADDER
from portsym.partition import partition_all, partition_option
from portsym.symbols import (KDE, InsufficientDataError, PortableModel, Vocabulary, build_portable_rules,
                             change_mask, dedupe, density_distance, fit_classifier, fit_effect, fit_kde,
                             mc_integral, merge_models)

EXPECTED_TABLE = {
    ("Clockwise", ("wall-junction",), ("window-junction",)),
    ("Clockwise", ("window-junction",), ("wall-junction",)),
    ("Anticlockwise", ("wall-junction",), ("window-junction",)),
    ("Anticlockwise", ("window-junction",), ("wall-junction",)),
    ("Outward", ("wall-junction", "window-junction"), ("dead-end",)),
    ("Inward", ("dead-end",), ("wall-junction", "window-junction")),
}


def symbol_names(model):
    rng = np.random.default_rng(0)
    return {s.symbol_id: decode_observation(s.density.sample(200, rng).mean(axis=0)) for s in model.vocabulary}


def rule_table(model):
    names = symbol_names(model)
    rows = set()
    for r in model.rules:
        pre = tuple(sorted(names[s] for clause in r.precondition.symbolic for s in clause))
        eff = tuple(sorted(names[s] for o in r.outcomes for s in o.symbols))
        rows.add((r.option_name, pre, eff))
    return rows


# -- classifier ------------------------------------------------------------------

def test_indistinguishable_classes_score_one_half(rng):
    x = rng.normal(size=(60, 2))
    clf = fit_classifier(x, x.copy())
    assert np.abs(clf(x) - 0.5).max() < 0.1


def test_separated_blobs_are_classified(rng):
    a = rng.normal(0, 1, (200, 2))
    b = rng.normal(6, 1, (200, 2))
    clf = fit_classifier(a[:100], b[:100])
    acc = np.mean(np.r_[clf(a[100:]) > 0.5, clf(b[100:]) < 0.5])
    assert acc >= 0.95


def test_swapped_classes_give_complementary_scores(rng):
    a = rng.normal(0, 1, (80, 2))
    b = rng.normal(2, 1, (80, 2))
    grid = rng.uniform(-2, 4, (100, 2))
    p = fit_classifier(a, b)(grid)
    q = fit_classifier(b, a)(grid)
    assert np.abs(p + q - 1).max() <= 0.1


def test_classifier_needs_ten_per_class(rng):
    with pytest.raises(InsufficientDataError):
        fit_classifier(rng.normal(size=(9, 2)), rng.normal(size=(30, 2)))


def test_scores_are_monotone_in_distance_from_boundary(rng):
    a = rng.normal(-3, 1, (100, 1))
    b = rng.normal(3, 1, (100, 1))
    clf = fit_classifier(a, b)
    line = np.linspace(-2, 2, 41)[:, None]
    assert np.all(np.diff(clf(line)) <= 1e-9)


def test_clockwise_precondition_on_held_out_data(corridor_model):
    held = collect(make_corridor(), 600, 99)
    rules = corridor_model.rules_for(CLOCKWISE)
    score = np.max([r.precondition(held.obs) for r in rules], axis=0)
    kinds = np.array([decode_observation(o) for o in held.obs])
    assert score[kinds != "dead-end"].min() >= 0.9
    assert score[kinds == "dead-end"].max() <= 0.1


def test_classifier_serializes_exactly(rng):
    from portsym.symbols import Classifier
    clf = fit_classifier(rng.normal(0, 1, (30, 2)), rng.normal(3, 1, (30, 2)))
    again = Classifier.from_dict(clf.to_dict())
    x = rng.normal(1, 2, (20, 2))
    assert np.array_equal(clf(x), again(x))


# -- effects and densities -----------------------------------------------------------

def test_constant_effect_is_a_point_mass(rng):
    starts = rng.uniform(-5, 5, (50, 2))
    c = np.array([1.5, -2.0])
    mask, kde, _ = fit_effect(np.tile(c, (50, 1)), starts, np.zeros(2))
    assert mask == (0, 1)
    n = 500
    draws = kde.sample(n, rng)
    sigma = draws.std(axis=0)
    assert np.all(np.abs(draws.mean(axis=0) - c) <= 3 * sigma / np.sqrt(n) + 1e-12)


def test_standard_normal_density_integrates_to_one(rng):
    kde = fit_kde(rng.normal(size=(1000, 1)))
    assert mc_integral(kde, 10_000) == pytest.approx(1.0, abs=0.05)


def test_effect_needs_min_samples():
    with pytest.raises(InsufficientDataError):
        fit_effect(np.zeros((3, 2)), np.ones((3, 2)), np.zeros(2), min_samples=5)


def test_down_ladder_mask_excludes_bag_bits():
    env = make_treasure(0)
    ds = collect(env, 1500, 0)
    sel = (ds.option_ids == DOWN_LADDER) & ds.success
    assert sel.sum() >= 5
    mask = change_mask(ds.obs[sel], ds.next_obs[sel], np.zeros(11))
    assert mask and not {9, 10} & set(mask)


def test_mask_ignores_unchanged_variables(rng):
    starts = rng.normal(size=(40, 3))
    effects = starts.copy()
    effects[:, 1] = 7.0
    assert change_mask(starts, effects, np.zeros(3)) == (1,)


# -- vocabulary --------------------------------------------------------------------------

def test_duplicate_registrations_collapse(rng):
    kde = fit_kde(rng.normal(size=(100, 2)))
    vocab = Vocabulary()
    vocab.add((0, 1), kde)
    vocab.add((0, 1), kde)
    out, mapping = dedupe(vocab)
    assert len(out) == 1 and mapping == {0: 0, 1: 0}


def test_disjoint_supports_stay_separate(rng):
    vocab = Vocabulary()
    vocab.add((0,), fit_kde(rng.normal(0, 0.1, (100, 1))))
    vocab.add((0,), fit_kde(rng.normal(50, 0.1, (100, 1))))
    out, _ = dedupe(vocab, similarity_threshold=0.999)
    assert len(out) == 2


def test_different_masks_stay_separate(rng):
    kde = fit_kde(rng.normal(size=(100, 1)))
    vocab = Vocabulary()
    vocab.add((0,), kde)
    vocab.add((1,), kde)
    assert len(dedupe(vocab)[0]) == 2


def test_density_distance_bounds(rng):
    p = fit_kde(rng.normal(size=(50, 1)))
    q = KDE(p.points + 100.0, p.bandwidth)
    assert density_distance(p, p) == pytest.approx(0.0, abs=1e-12)
    assert density_distance(p, q) == pytest.approx(1.0, abs=1e-6)


# -- rules -----------------------------------------------------------------------------------

def test_corridor_rules_match_expected_table(corridor_model):
    assert len(corridor_model.vocabulary) == 3
    assert len(corridor_model.rules) == 6
    assert rule_table(corridor_model) == EXPECTED_TABLE
    inward = [r for r in corridor_model.rules if r.option_name == "Inward"][0]
    assert len(inward.outcomes) == 2
    for o in inward.outcomes:
        assert o.probability == pytest.approx(0.5, abs=0.1)


def _two_outcome_data(rng, n_a, n_b, n_fail=50):
    starts = rng.normal(0, 0.01, (n_a + n_b, 2))
    effects = np.vstack([np.tile([1.0, 1.0], (n_a, 1)), np.tile([2.0, 0.0], (n_b, 1))])
    effects = effects + rng.normal(0, 0.01, effects.shape)
    rows = [Transition("t", tuple(s), tuple(s), 0, True, tuple(e), tuple(e), 1, 0.0)
            for s, e in zip(starts, effects)]
    for f in rng.normal(5, 0.01, (n_fail, 2)):
        rows.append(Transition("t", tuple(f), tuple(f), 0, False, tuple(f), tuple(f), 1, 0.0))
    return Dataset(tuple(rows), "synthetic")


def test_rare_outcome_is_discarded(rng):
    ds = _two_outcome_data(rng, 970, 30)
    parts = partition_option(ds, 0, "ego", eps=0.05)
    assert len(parts) == 1 and parts[0].num_outcomes == 2
    model = build_portable_rules(ds, parts, noise=np.full(2, 0.01), discard_threshold=0.05, eps=0.05)
    (rule,) = model.rules
    assert len(rule.outcomes) == 1 and rule.outcomes[0].probability == 1.0


def test_single_cluster_gives_certain_outcome(rng):
    ds = _two_outcome_data(rng, 200, 0)
    parts = partition_option(ds, 0, "ego", eps=0.05)
    model = build_portable_rules(ds, parts, noise=np.full(2, 0.01), eps=0.05)
    assert [o.probability for o in model.rules[0].outcomes] == [1.0]


def test_outcome_probabilities_sum_to_one(corridor_model):
    for r in corridor_model.rules:
        assert sum(o.probability for o in r.outcomes) == pytest.approx(1.0, abs=0.01)


def test_outcome_masks_are_disjoint(corridor_model):
    voc = corridor_model.vocabulary
    for r in corridor_model.rules:
        for o in r.outcomes:
            masks = [set(voc[s].mask) for s in o.symbols]
            assert sum(map(len, masks)) == len(set().union(*masks)) if masks else True


def test_model_serialization_round_trip(corridor_model):
    again = PortableModel.from_dict(corridor_model.to_dict())
    assert again.rules_bytes() == corridor_model.rules_bytes()


def test_appending_the_same_model_adds_nothing(corridor_model):
    merged = merge_models(corridor_model, corridor_model)
    assert len(merged.rules) == len(corridor_model.rules)
    assert len(merged.vocabulary) == len(corridor_model.vocabulary)


def test_appending_new_rules_shifts_partitions(corridor_model, corridor_data):
    clockwise_only = PortableModel(corridor_model.vocabulary,
                                   [r for r in corridor_model.rules if r.option_name == "Clockwise"],
                                   corridor_model.option_names, corridor_model.obs_dim)
    others = PortableModel(corridor_model.vocabulary,
                           [r for r in corridor_model.rules if r.option_name != "Clockwise"],
                           corridor_model.option_names, corridor_model.obs_dim)
    merged = merge_models(clockwise_only, others)
    assert len(merged.rules) == 6 and len(merged.vocabulary) == 3


def test_other_option_negatives_flag(corridor_env, corridor_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from portsym.pipeline import learn_portable
        model = learn_portable(corridor_data, {o.option_id: o.name for o in corridor_env.options},
                               negatives="other")
    assert len(model.rules) == 6


def test_platt_fit_matches_generic_optimiser(rng):
    from scipy.optimize import minimize

    from portsym.symbols import _platt
    f = np.r_[rng.normal(1, 1, 150), rng.normal(-1, 1, 150)]
    y = np.r_[np.ones(150), np.zeros(150)].astype(int)
    w = rng.integers(1, 4, 300).astype(float)

    def nll(ab):
        z = ab[0] * f + ab[1]
        return np.sum(w * (y * np.logaddexp(0, z) + (1 - y) * np.logaddexp(0, -z))) + 0.01 * ab[0] ** 2

    ref = minimize(nll, [0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10}).x
    assert np.allclose(_platt(f, y, weights=w), ref, atol=1e-4)
