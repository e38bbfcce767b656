import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from helpfulness.data import LabeledExample
from helpfulness.errors import ConfigurationError, DimensionError, UndefinedCorrelationError
from helpfulness.evaluation import (CategoryResult, EvalReport, compare_variants, cross_domain,
                                    cross_domain_label, evaluate, pearson, spearman)
from helpfulness.model import HelpfulnessModel, ModelConfig, predict_batch
from helpfulness.tensor import rng_stream
from helpfulness.text import TokenizedReview

V = 30


def closed_form_pearson(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx, syy = sum(a * a for a in x), sum(b * b for b in y)
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


class TestPearson:
    def test_perfect(self):
        assert pearson([0.1, 0.5, 0.3, 0.9], [0.1, 0.5, 0.3, 0.9]) == 1.0

    def test_anti(self):
        assert pearson([3, 2, 1], [1, 2, 3]) == -1.0

    def test_hand_case(self):
        r = pearson([1, 2, 3], [1, 2, 4])
        assert r == pytest.approx(0.98198, abs=1e-4)
        assert r == pytest.approx(closed_form_pearson([1, 2, 3], [1, 2, 4]), abs=1e-12)

    @pytest.mark.parametrize("a, b", [([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [5, 5, 5])])
    def test_zero_variance(self, a, b):
        with pytest.raises(UndefinedCorrelationError):
            pearson(a, b)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            pearson([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1], [2])

    vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30)

    @given(vectors, st.randoms())
    def test_symmetric_and_bounded(self, a, rnd):
        b = [rnd.uniform(-100, 100) for _ in a]
        assume(np.ptp(a) > 1e-6 and np.ptp(b) > 1e-6)
        assert pearson(a, b) == pearson(b, a)
        assert -1.0 <= pearson(a, b) <= 1.0

    @given(vectors, st.floats(0.1, 100), st.floats(-10, 10), st.randoms())
    def test_affine_invariance(self, a, alpha, beta, rnd):
        b = [rnd.uniform(-10, 10) for _ in a]
        assume(np.ptp(a) > 1e-3 and np.ptp(b) > 1.0)
        shifted = [alpha * v + beta for v in b]
        assert pearson(a, shifted) == pytest.approx(pearson(a, b), abs=1e-12)

    @given(vectors, st.randoms())
    def test_matches_closed_form(self, a, rnd):
        b = [rnd.uniform(-1, 1) for _ in a]
        assume(np.ptp(a) > 1e-3 and np.ptp(b) > 1e-3)
        assert pearson(a, b) == pytest.approx(closed_form_pearson(a, b), abs=1e-9)

    def test_spearman_ranks(self):
        assert spearman([1, 2, 3, 4], [1, 4, 9, 16]) == 1.0
        assert spearman([10, 20, 30], [3, 1, 2]) == pytest.approx(-0.5)


def model(seed=0):
    return HelpfulnessModel.initialize(ModelConfig(vocab_size=V, dim=8, heads=2, channels=4), rng_stream(seed))


def reviews(n, seed=1, categories=("Phone", "Home")):
    rng = rng_stream(seed)
    return [TokenizedReview(list(rng.integers(2, V, size=int(rng.integers(7, 15)))), 10) for _ in range(n)], \
        [categories[i % len(categories)] for i in range(n)]


def centered(m):
    # keep raw outputs inside [0, 1] so clamping is the identity
    m.head_b.data[...] = 0.5
    m.head_w.data *= 1e-3 / max(1e-12, float(np.max(np.abs(m.head_w.data))))
    return m


class TestEvaluate:
    def test_perfect_model(self):
        m = centered(model())
        toks, cats = reviews(12)
        gold = predict_batch(m, [t.token_ids for t in toks])
        assert np.all((gold > 0) & (gold < 1))
        examples = [LabeledExample(t, float(g), c) for t, g, c in zip(toks, gold, cats)]
        report = evaluate(m, examples)
        for res in [*report.per_category.values(), report.overall]:
            assert res.status == "ok" and res.pearson == pytest.approx(1.0, abs=1e-12)

    def test_constant_model(self):
        m = model()
        m.head_w.data[...] = 0.0
        toks, cats = reviews(8)
        examples = [LabeledExample(t, i / 8, c) for i, (t, c) in enumerate(zip(toks, cats))]
        report = evaluate(m, examples)
        assert {r.status for r in report.per_category.values()} == {"undefined"}
        assert report.overall.pearson is None

    def test_small_category_skipped(self):
        toks, _ = reviews(5)
        cats = ["Phone"] * 4 + ["Home"]
        examples = [LabeledExample(t, i / 5, c) for i, (t, c) in enumerate(zip(toks, cats))]
        report = evaluate(model(), examples)
        assert report.per_category["Home"].status == "skipped"

    def test_does_not_mutate(self):
        m = model()
        before = m.fingerprint()
        toks, cats = reviews(6)
        evaluate(m, [LabeledExample(t, i / 6, c) for i, (t, c) in enumerate(zip(toks, cats))])
        assert m.fingerprint() == before

    def test_clamping(self):
        m = model()
        m.head_b.data[...] = 5.0
        m.head_w.data[...] = 0.0
        toks, _ = reviews(4)
        examples = [LabeledExample(t, i / 4, "Phone") for i, t in enumerate(toks)]
        assert evaluate(m, examples).metadata["clamped_to_unit_interval"] is True

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            evaluate(model(), [])

    def test_report_roundtrip(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        toks, cats = reviews(10)
        report = evaluate(model(), [LabeledExample(t, i / 10, c) for i, (t, c) in enumerate(zip(toks, cats))],
                          "exp", "abc123", seed=4)
        assert report.timestamp == "1970-01-01T00:00:00Z"
        again = EvalReport.from_json(report.to_json())
        assert again == report and again.to_json() == report.to_json()

    def test_text_table(self):
        report = EvalReport("x", {"Phone": CategoryResult(3, 0.5, 0.25), "Home": CategoryResult(1, status="skipped")},
                            CategoryResult(4, 0.4, 0.3))
        text = report.to_text()
        assert "Phone" in text and "0.5000" in text and "skipped" in text


class TestCrossDomain:
    @pytest.mark.parametrize("a, b", [("Phone", "Home"), ("Health", "Electronics")])
    def test_labels(self, a, b):
        assert cross_domain_label(a, b) == f"D1-{a} D2-{b}"
        toks, _ = reviews(6, categories=(b,))
        d2 = [LabeledExample(t, i / 6, b, "D2") for i, t in enumerate(toks)]
        assert cross_domain(model(), a, d2, b).experiment_name == f"D1-{a} D2-{b}"

    def test_selects_category(self):
        toks, cats = reviews(10)
        d2 = [LabeledExample(t, i / 10, c, "D2") for i, (t, c) in enumerate(zip(toks, cats))]
        report = cross_domain(model(), "Phone", d2, "Home")
        assert list(report.per_category) == ["Home"] and report.overall.n == 5

    def test_same_category_is_plain_evaluate(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        toks, _ = reviews(6, categories=("Phone",))
        d2 = [LabeledExample(t, i / 6, "Phone", "D2") for i, t in enumerate(toks)]
        m = model()
        assert cross_domain(m, "Phone", d2, "Phone").overall == evaluate(m, d2).overall

    def test_missing_category(self):
        toks, _ = reviews(4, categories=("Phone",))
        d2 = [LabeledExample(t, 0.5, "Phone", "D2") for t in toks]
        with pytest.raises(ConfigurationError, match="Home"):
            cross_domain(model(), "Phone", d2, "Home")


def report(name, values):
    return EvalReport(name, {c: CategoryResult(10, v, v) for c, v in values.items()}, CategoryResult(20, 0.1, 0.1))


class TestCompare:
    def test_best_marked(self):
        table = compare_variants([report("a", {"Phone": 0.2, "Home": 0.3}), report("b", {"Phone": 0.4, "Home": 0.5})])
        assert table.best == [1, 1]
        text = table.to_text()
        assert "0.5000*" in text and "0.4000*" in text and "0.3000*" not in text
        assert table.to_csv().splitlines() == ["category,a,b,best", "Home,0.300000,0.500000,b",
                                                "Phone,0.200000,0.400000,b"]

    def test_disjoint(self):
        with pytest.raises(ConfigurationError):
            compare_variants([report("a", {"Phone": 0.2}), report("b", {"Home": 0.4})])

    def test_single_report(self):
        with pytest.raises(ConfigurationError):
            compare_variants([report("a", {"Phone": 0.2})])

    def test_three_variants(self):
        reps = [report(v, {"Phone": r}) for v, r in (("full_max", 0.7), ("s_avg", 0.5), ("s_attn", 0.4))]
        table = compare_variants(reps)
        assert table.columns == ["full_max", "s_avg", "s_attn"] and table.best == [0]
        assert len(table.to_csv().splitlines()[0].split(",")) == 5

    def test_undefined_values(self):
        a = EvalReport("a", {"Phone": CategoryResult(5, status="undefined")}, CategoryResult(5, status="undefined"))
        table = compare_variants([a, report("b", {"Phone": 0.1})])
        assert table.best == [1] and "n/a" in table.to_text()
