import io

import pytest
from hypothesis import given, settings, strategies as st

from depscope.depgraph import load_depgraphs
from depscope.generator import (ANOMALY_CATALOG, ANOMALY_LABELS, ROOT_LABEL, GeneratorConfig,
                                GeneratorConfigError, generate, normal_template_labels,
                                read_labels)


def _serialize(ds):
    g, lab = io.StringIO(), io.StringIO()
    ds.write(g, lab)
    return g.getvalue(), lab.getvalue()


def test_default_dataset_shape(default_dataset):
    assert len(default_dataset.graphs) == 697
    assert sum(default_dataset.labels) == 15
    assert sum(g.total_duration_ms > 200 for g in default_dataset.graphs) == 15


def test_single_normal_graph():
    ds = generate(GeneratorConfig(n_requests=1, outlier_fraction=0.0, seed=7))
    assert len(ds.graphs) == 1 and ds.labels == [False]
    assert ds.graphs[0].total_duration_ms <= 200


def test_same_seed_is_byte_identical():
    cfg = GeneratorConfig(n_requests=120, seed=3)
    assert _serialize(generate(cfg)) == _serialize(generate(cfg))


def test_different_seeds_differ():
    a = _serialize(generate(GeneratorConfig(n_requests=50, seed=1)))
    b = _serialize(generate(GeneratorConfig(n_requests=50, seed=2)))
    assert a != b


def test_written_files_reload(default_dataset):
    graphs_txt, labels_txt = _serialize(default_dataset)
    assert load_depgraphs(graphs_txt) == default_dataset.graphs
    assert labels_txt.startswith("request_id,is_outlier\n")
    labels = read_labels(io.StringIO(labels_txt))
    assert [labels[g.request_id] for g in default_dataset.graphs] == default_dataset.labels


def test_labels_follow_threshold(default_dataset):
    for g, lab in zip(default_dataset.graphs, default_dataset.labels):
        assert lab == (g.total_duration_ms > 200)


def test_outliers_carry_novel_labels(default_dataset):
    normal = normal_template_labels()
    assert not (normal & ANOMALY_LABELS)
    for g, lab in zip(default_dataset.graphs, default_dataset.labels):
        labels = {n.label for n in g.nodes}
        if lab:
            assert labels - normal, g.request_id
            assert labels & ANOMALY_LABELS
        else:
            assert labels <= normal


def test_outlier_causes_come_from_catalog(default_dataset):
    flagged = {g.request_id for g, lab in zip(default_dataset.graphs, default_dataset.labels) if lab}
    assert set(default_dataset.causes) == flagged
    for causes in default_dataset.causes.values():
        assert 1 <= len(causes) and set(causes) <= set(ANOMALY_CATALOG)


def test_duration_mass_below_threshold(default_dataset):
    below = sum(g.total_duration_ms < 200 for g in default_dataset.graphs)
    assert below / len(default_dataset.graphs) >= 0.97


def test_durations_within_ranges(default_dataset):
    for g, lab in zip(default_dataset.graphs, default_dataset.labels):
        lo, hi = (300, 800) if lab else (60, 200)
        assert lo <= g.total_duration_ms <= hi
        assert g.node(g.root).label == ROOT_LABEL
        assert g.node(g.root).duration_ms == g.total_duration_ms


@pytest.mark.parametrize("kwargs", [
    {"n_requests": 0},
    {"outlier_fraction": 1.0},
    {"outlier_fraction": -0.1},
    {"normal_duration_range_ms": (200, 60)},
    {"normal_duration_range_ms": (60, 250)},
    {"outlier_duration_range_ms": (150, 800)},
    {"template_set": "nginx"},
    {"seed": -1},
])
def test_invalid_configs(kwargs):
    with pytest.raises(GeneratorConfigError):
        GeneratorConfig(**kwargs)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 80), st.floats(0, 0.5), st.integers(0, 2**32))
def test_outlier_count_property(n, frac, seed):
    cfg = GeneratorConfig(n_requests=n, outlier_fraction=frac, seed=seed)
    ds = generate(cfg)
    assert len(ds.graphs) == len(ds.labels) == n
    assert sum(ds.labels) == round(n * frac)
    assert len({g.request_id for g in ds.graphs}) == n
