import math
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcir.compose import (
    ComposedQuery,
    EmbeddingProvider,
    LineProtocolClient,
    QueryParams,
    compose_early,
    compose_late,
    compose_single,
    provider_from_bundle,
    run_query,
    score_baseline,
    score_embedding,
)
from dcir.errors import BundleError, CapabilityError, DataError, DegenerateQueryError
from dcir.inversion import Label, LabelSet
from dcir.knn import all_scores, rank_indices
from dcir.stores import new_matrix
from dcir.synthetic import make_bundle


def unit_rows(rng, rows, dim):
    m = rng.standard_normal((rows, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def table_provider(rows_by_domain, names=None, string_fn=None):
    tables = {d: new_matrix(rows) for d, rows in rows_by_domain.items()}
    n = next(iter(tables.values())).rows
    return EmbeddingProvider(tables=tables, label_names=names or [f"w{i}" for i in range(n)], string_fn=string_fn)


def hash_sphere(dim):
    def fn(text):
        rng = np.random.default_rng(abs(hash(text)) % (2**32))
        v = rng.standard_normal(dim)
        return v / np.linalg.norm(v)

    return fn


def test_single_returns_leading_word_row():
    sb = make_bundle(n_classes=3, n_domains=2, per_cluster=2, queries_per_cluster=1, dim=16, seed=0)
    b = sb.bundle
    provider = provider_from_bundle(b)
    shark = b.vocab.words.index("shark")
    labels = LabelSet([Label(shark, 1.0), Label(shark + 1, 0.5)])
    out = compose_single(labels, "origami", provider)
    row = b.composed["origami"].embeddings.row(shark).astype(np.float64)
    assert np.allclose(out, row / np.linalg.norm(row), atol=1e-12)


def test_single_equals_late_for_singleton():
    rng = np.random.default_rng(1)
    provider = table_provider({"d": unit_rows(rng, 5, 8)})
    labels = LabelSet([Label(2, 1.0)])
    a = compose_single(labels, "d", provider)
    b = compose_late(labels, "d", provider, weights="frequency")
    assert np.array_equal(a, b)


def test_unit_row_passes_through_bitwise():
    provider = table_provider({"d": np.eye(4, dtype=np.float32)})
    out = compose_single(LabelSet([Label(1, 1.0)]), "d", provider)
    assert np.array_equal(out, np.eye(4)[1])


def test_missing_table_entry_errors():
    rng = np.random.default_rng(2)
    provider = table_provider({"d": unit_rows(rng, 3, 8)})
    with pytest.raises(BundleError, match="nowhere"):
        compose_single(LabelSet([Label(0, 1.0)]), "nowhere", provider)
    with pytest.raises(BundleError):
        compose_single(LabelSet([Label(9, 1.0)]), "d", provider)


def test_early_singleton_equals_single():
    rng = np.random.default_rng(3)
    provider = table_provider({"d": unit_rows(rng, 5, 8)})
    labels = LabelSet([Label(4, 1.0)])
    assert np.array_equal(compose_early(labels, "d", provider), compose_single(labels, "d", provider))


def test_early_assembles_space_joined_string():
    rng = np.random.default_rng(4)
    mock = hash_sphere(8)
    provider = table_provider({"d": unit_rows(rng, 5, 8)}, names=["w0", "w1", "w2", "w3", "w4"], string_fn=mock)
    labels = LabelSet([Label(1, 1.0), Label(3, 0.5)])
    out = compose_early(labels, "d", provider)
    assert np.allclose(out, mock("w1 w3 d"), atol=1e-12)


def test_early_without_string_tier_is_capability_error():
    rng = np.random.default_rng(5)
    provider = table_provider({"d": unit_rows(rng, 5, 8)})
    labels = LabelSet([Label(0, 1.0), Label(1, 1.0)])
    with pytest.raises(CapabilityError, match="provider"):
        compose_early(labels, "d", provider)


def test_late_weighted_mean_closed_form():
    r1 = np.zeros(6, dtype=np.float32)
    r2 = np.zeros(6, dtype=np.float32)
    r1[0] = 1.0
    r2[1] = 1.0
    provider = table_provider({"d": np.stack([r1, r2])})
    labels = LabelSet([Label(0, 1.0), Label(1, 0.5)])
    out = compose_late(labels, "d", provider, weights="frequency")
    expected = (r1.astype(np.float64) + 0.5 * r2) / math.sqrt(1.25)
    assert np.allclose(out, expected, atol=1e-12)


def test_late_scale_invariance():
    rng = np.random.default_rng(6)
    provider = table_provider({"d": unit_rows(rng, 4, 8)})
    a = LabelSet([Label(0, 1.0), Label(2, 0.25)])
    b = LabelSet([Label(0, 7.0), Label(2, 1.75)])
    va = compose_late(a, "d", provider, weights="frequency")
    vb = compose_late(b, "d", provider, weights="frequency")
    assert np.allclose(va, vb, atol=1e-12)


def test_late_uniform_ignores_weights():
    rng = np.random.default_rng(7)
    provider = table_provider({"d": unit_rows(rng, 4, 8)})
    a = LabelSet([Label(0, 1.0), Label(2, 0.25)])
    b = LabelSet([Label(0, 1.0), Label(2, 1.0)])
    assert np.allclose(
        compose_late(a, "d", provider, weights="uniform"),
        compose_late(b, "d", provider, weights="frequency"),
        atol=1e-12,
    )


def test_antipodal_cancellation_errors():
    r = np.zeros(4, dtype=np.float32)
    r[0] = 1.0
    provider = table_provider({"d": np.stack([r, -r])})
    labels = LabelSet([Label(0, 1.0), Label(1, 1.0)])
    with pytest.raises(DegenerateQueryError):
        compose_late(labels, "d", provider, weights="uniform")


def test_composed_outputs_are_unit_norm():
    rng = np.random.default_rng(8)
    provider = table_provider({"d": unit_rows(rng, 6, 10)})
    labels = LabelSet([Label(i, 1.0) for i in range(5)])
    out = compose_late(labels, "d", provider)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-6


def test_image_baseline_self_retrieval():
    rng = np.random.default_rng(9)
    db = new_matrix(unit_rows(rng, 12, 8))
    y = db.row(5)
    t = unit_rows(rng, 1, 8)[0]
    scores = score_baseline("image", t, y, db)
    assert int(np.argmax(scores)) == 5


def test_product_with_constant_text_equals_image_ranking():
    rng = np.random.default_rng(10)
    t = np.zeros(8)
    t[0] = 1.0
    c = 0.4
    rest = rng.standard_normal((10, 7))
    rest /= np.linalg.norm(rest, axis=1, keepdims=True)
    rows = np.concatenate([np.full((10, 1), c), math.sqrt(1 - c * c) * rest], axis=1)
    db = new_matrix(rows)
    y = unit_rows(rng, 1, 8)[0]
    prod = score_baseline("product", t, y, db)
    image = score_baseline("image", t, y, db)
    assert np.array_equal(rank_indices(prod), rank_indices(image))


def test_weicom_matches_erf_oracle():
    rng = np.random.default_rng(11)
    db = new_matrix(unit_rows(rng, 20, 8))
    t, y = unit_rows(rng, 2, 8)
    got = score_baseline("weicom", t, y, db)

    def erf_cdf(s):
        mu, sigma = np.mean(s), np.std(s)
        return np.array([0.5 * (1.0 + math.erf((v - mu) / (sigma * math.sqrt(2)))) for v in s])

    ref = erf_cdf(all_scores(t, db)) + erf_cdf(all_scores(y, db))
    assert np.max(np.abs(got - ref)) < 1e-9


def test_weicom_constant_modality_warns_and_uses_half():
    rng = np.random.default_rng(12)
    t = np.zeros(8)
    t[0] = 1.0
    c = 0.3
    rest = rng.standard_normal((8, 7))
    rest /= np.linalg.norm(rest, axis=1, keepdims=True)
    db = new_matrix(np.concatenate([np.full((8, 1), c), math.sqrt(1 - c * c) * rest], axis=1))
    y = unit_rows(rng, 1, 8)[0]
    with pytest.warns(UserWarning, match="0.5"):
        got = score_baseline("weicom", t, y, db)
    image = all_scores(y, db)
    mu, sigma = np.mean(image), np.std(image)
    ref = 0.5 + np.array([0.5 * (1.0 + math.erf((v - mu) / (sigma * math.sqrt(2)))) for v in image])
    assert np.max(np.abs(got - ref)) < 1e-9


def test_late_scores_equal_weighted_score_sum_up_to_scale():
    rng = np.random.default_rng(13)
    provider = table_provider({"d": unit_rows(rng, 6, 8)})
    db = new_matrix(unit_rows(rng, 30, 8))
    labels = LabelSet([Label(0, 1.0), Label(3, 0.7), Label(5, 0.2)])
    fused = score_embedding(compose_late(labels, "d", provider, weights="frequency"), db)
    parts = sum(w * all_scores(provider.lookup(i, "d"), db) for i, w in [(0, 1.0), (3, 0.7), (5, 0.2)])
    ratio = fused / parts
    assert np.allclose(ratio, ratio[0], atol=1e-9)
    assert ratio[0] > 0


def first_query(bundle, target=None):
    item = bundle.manifest.split_items("query")[0]
    names = bundle.manifest.domain_names
    tgt = target or next(d for d in names if d != names[item.domain_id])
    return ComposedQuery(
        query_id=item.id,
        y=bundle.queries.embeddings.row(0),
        target_domain=tgt,
        source_domain=names[item.domain_id],
    )


def test_freedom_k1_n1_m1_reduces_to_single():
    sb = make_bundle(n_classes=4, n_domains=3, per_cluster=4, queries_per_cluster=2, dim=32, seed=14)
    q = first_query(sb.bundle)
    a = run_query(q, "freedom", QueryParams(k=1, n=1, m=1), sb.bundle)
    b = run_query(q, "single", QueryParams(), sb.bundle)
    assert np.array_equal(a, b)


def test_freedom_k1_nm_reduces_to_late():
    sb = make_bundle(n_classes=4, n_domains=3, per_cluster=4, queries_per_cluster=2, dim=32, seed=15)
    q = first_query(sb.bundle)
    for m in (2, 5):
        a = run_query(q, "freedom", QueryParams(k=1, n=m, m=m), sb.bundle)
        b = run_query(q, "late", QueryParams(k=1, n=m, m=m), sb.bundle)
        assert np.array_equal(a, b)


def test_default_params_are_20_7_7():
    p = QueryParams()
    assert (p.k, p.n, p.m) == (20, 7, 7)


def test_early_k1_collapses_to_plain_inversion():
    sb = make_bundle(n_classes=4, n_domains=3, per_cluster=4, queries_per_cluster=2, dim=32, seed=18)
    q = first_query(sb.bundle)
    from dcir.compose import compose_early as fuse
    from dcir.compose import provider_from_bundle as make_provider
    from dcir.inversion import nn_invert

    provider = make_provider(sb.bundle, string_fn=sb.string_fn)
    got = run_query(q, "early", QueryParams(k=1, n=3, m=3), sb.bundle, provider=provider)
    h = fuse(nn_invert(q.y, sb.bundle.vocab, 3), q.target_domain, provider)
    expected = score_embedding(h, sb.bundle.database.embeddings)
    assert np.array_equal(got, expected)


def test_unknown_method_rejected():
    sb = make_bundle(n_classes=2, n_domains=2, per_cluster=2, queries_per_cluster=1, dim=16, seed=16)
    with pytest.raises(DataError):
        run_query(first_query(sb.bundle), "psychic", QueryParams(), sb.bundle)


def test_baseline_methods_run_via_run_query():
    sb = make_bundle(n_classes=3, n_domains=2, per_cluster=3, queries_per_cluster=1, dim=16, seed=17)
    q = first_query(sb.bundle)
    for method in ("text", "image", "sum", "product", "weicom"):
        scores = run_query(q, method, QueryParams(), sb.bundle)
        assert scores.shape[0] == sb.bundle.database.embeddings.rows


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 50))
def test_scaled_weights_leave_composed_vector_unchanged(seed, scale):
    rng = np.random.default_rng(seed)
    provider = table_provider({"d": unit_rows(rng, 5, 8)})
    weights = np.sort(rng.uniform(0.1, 1.0, size=3))[::-1]
    base = LabelSet([Label(i, float(w)) for i, w in enumerate(weights)])
    scaled = LabelSet([Label(i, float(w * scale)) for i, w in enumerate(weights)])
    va = compose_late(base, "d", provider, weights="frequency")
    vb = compose_late(scaled, "d", provider, weights="frequency")
    assert np.allclose(va, vb, atol=1e-6)


PROVIDER_SCRIPT = textwrap.dedent(
    """
    import sys
    import numpy as np
    for line in sys.stdin:
        text = line.rstrip("\\n")
        rng = np.random.default_rng(sum(ord(c) * 31**i for i, c in enumerate(text)) % 2**32)
        v = rng.standard_normal(8)
        v /= np.linalg.norm(v)
        print(" ".join(repr(float(x)) for x in v))
        sys.stdout.flush()
    """
)


def test_line_protocol_client_roundtrip():
    client = LineProtocolClient([sys.executable, "-c", PROVIDER_SCRIPT], dim=8)
    try:
        a = client("dog sketch")
        b = client("dog sketch")
        c = client("cat sketch")
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-6
        with pytest.raises(DataError):
            client("two\nlines")
    finally:
        client.close()
