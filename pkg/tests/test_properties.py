"""Property-based checks of the structural invariants."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from portsym import core
from portsym.core import Dataset, Transition
from portsym.domains.corridor import NODE_NAMES
from portsym.ground import LinkingFunction
from portsym.partition import merge_overlapping, partition_all, partition_option
from portsym.pipeline import belief_from_states
from portsym.plan import plan_probability
from portsym.symbols import fit_classifier, fit_kde, mc_integral

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


@st.composite
def clustered_datasets(draw):
    """Random options whose effects fall in a few blobs, with some failures."""
    seed = draw(st.integers(0, 2**31 - 1))
    n_options = draw(st.integers(1, 3))
    rng = np.random.default_rng(seed)
    rows = []
    for o in range(n_options):
        centres = rng.uniform(-5, 5, (int(rng.integers(1, 4)), 2))
        for _ in range(int(rng.integers(20, 80))):
            s = rng.uniform(-5, 5, 2)
            if rng.random() < 0.2:
                rows.append(Transition("t", tuple(s), tuple(s), o, False, tuple(s), tuple(s), 1, 0.0))
            else:
                e = centres[rng.integers(len(centres))] + rng.normal(0, 0.05, 2)
                rows.append(Transition("t", tuple(s), tuple(s), o, True, tuple(e), tuple(e), 1, 0.0))
    order = rng.permutation(len(rows))
    return Dataset(tuple(rows[i] for i in order), "synthetic")


@SETTINGS
@given(clustered_datasets(), st.sampled_from(["ego", "problem"]))
def test_partitions_are_disjoint_and_exhaustive(ds, space):
    parts = partition_all(ds, space)
    for o in set(ds.option_ids[ds.success].tolist()):
        members = [m for p in parts if p.option_id == o for m in p.members]
        assert len(members) == len(set(members))
        assert set(members) == set(np.flatnonzero((ds.option_ids == o) & ds.success).tolist())
    assert all(p.space == space for p in parts)


@SETTINGS
@given(clustered_datasets(), st.floats(0.0, 0.9))
def test_merge_is_idempotent(ds, threshold):
    for o in sorted(set(ds.option_ids[ds.success].tolist())):
        once = partition_option(ds, o, "ego", overlap_threshold=threshold)
        assert merge_overlapping(once, ds, threshold) == once


@SETTINGS
@given(clustered_datasets(), st.integers(0, 2**31 - 1))
def test_partitions_ignore_record_order(ds, seed):
    perm = np.random.default_rng(seed).permutation(len(ds))
    shuffled = ds.subset(perm.tolist())
    a = partition_all(ds, "ego")
    b = partition_all(shuffled, "ego")
    assert [(p.option_id, p.partition_index) for p in a] == [(p.option_id, p.partition_index) for p in b]
    for pa, pb in zip(a, b):
        assert set(pa.members) == {int(perm[m]) for m in pb.members}


@SETTINGS
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(20, 300))
def test_densities_integrate_to_one(seed, dim, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim)) * rng.uniform(0.1, 5, dim) + rng.uniform(-10, 10, dim)
    if rng.random() < 0.3:
        x = np.round(x)  # lumpy, nearly discrete data
    assert mc_integral(fit_kde(x), 10_000, seed=seed % 1000) == pytest.approx(1.0, abs=0.05)


@SETTINGS
@given(st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 2)),
                       st.dictionaries(st.integers(0, 5), st.dictionaries(st.integers(0, 5), st.integers(1, 50),
                                                                          min_size=1), min_size=1),
                       max_size=6))
def test_linking_rows_sum_to_one(counts):
    link = LinkingFunction(counts)
    for key in link.keys():
        for row in link.rows(*key).values():
            assert sum(row.values()) == pytest.approx(1.0, abs=0.01)
            assert all(0.0 <= p <= 1.0 for p in row.values())


@SETTINGS
@given(st.integers(0, 2**31 - 1))
def test_classifier_outputs_are_probabilities(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, (30, 2))
    b = rng.normal(rng.uniform(-3, 3), 1, (30, 2))
    p = fit_classifier(a, b)(rng.normal(0, 10, (50, 2)))
    assert np.all((p >= 0) & (p <= 1))


@SETTINGS
@given(st.lists(st.integers(0, 3), min_size=1, max_size=4), st.integers(0, len(NODE_NAMES) - 1),
       st.integers(0, 1000))
def test_prefix_probability_bounds_full_plan(corridor_env, corridor_grounded, options, node, seed):
    rng = np.random.default_rng(seed)
    states = np.array([corridor_env.sample_node_state(node, rng) for _ in range(16)])
    Z = belief_from_states(corridor_grounded, corridor_env, states)
    plan = [(o, None) for o in options]
    probs = [plan_probability(corridor_grounded, Z, plan[:k], particles=64, seed=seed)
             for k in range(len(plan) + 1)]
    assert probs[0] == 1.0
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert all(a >= b for a, b in zip(probs, probs[1:]))


@SETTINGS
@given(clustered_datasets())
def test_dataset_file_round_trip(tmp_path_factory, ds):
    path = tmp_path_factory.mktemp("rt") / "d.txt"
    core.save(ds, path)
    assert core.load(path) == ds
