import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrsa.codec import AspectTriple, Sentiment
from lrsa.metrics import AlignmentError, EvalReport, Task, masc_score, mabsa_score, mate_score, score_all

POS, NEU, NEG = Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE
T = AspectTriple


def brute_force(gold, pred):
    """Independent scorer: explicit span dedup then pairwise comparison."""
    rank = {POS: 0, NEU: 1, NEG: 2}

    def dedup(ts):
        best = {}
        for t in ts:
            if t.span not in best or rank[t.sentiment] < rank[best[t.span]]:
                best[t.span] = t.sentiment
        return best

    tp = fp = fn = span_tp = n_pred_spans = n_gold_spans = 0
    matched = correct = 0
    for k in gold:
        g, p = dedup(gold[k]), dedup(pred[k])
        for span, s in p.items():
            if span in g and g[span] == s:
                tp += 1
            else:
                fp += 1
        for span, s in g.items():
            if not (span in p and p[span] == s):
                fn += 1
            if span in p:
                matched += 1
                correct += p[span] == s
        span_tp += sum(1 for span in p if span in g)
        n_pred_spans += len(p)
        n_gold_spans += len(g)

    def prf(c, npred, ngold):
        pr = c / npred if npred else 0.0
        rc = c / ngold if ngold else 0.0
        return pr, rc, (2 * pr * rc / (pr + rc) if pr + rc else 0.0)

    return {
        Task.MABSA: prf(tp, tp + fp, tp + fn),
        Task.MATE: prf(span_tp, n_pred_spans, n_gold_spans),
        Task.MASC: (correct / matched if matched else 0.0),
    }


def test_worked_example():
    gold = {"a": [T(0, 1, POS), T(3, 3, NEG)]}
    pred = {"a": [T(0, 1, POS), T(3, 3, POS), T(5, 5, NEU)]}
    r = score_all(gold, pred)
    assert (r[Task.MABSA].precision, r[Task.MABSA].recall) == (1 / 3, 1 / 2)
    assert abs(r[Task.MABSA].f1 - 0.4) < 1e-12
    assert (r[Task.MATE].precision, r[Task.MATE].recall, r[Task.MATE].f1) == (2 / 3, 1.0, 0.8)
    assert r[Task.MASC].accuracy == 0.5


def test_empty_prediction_scores_zero():
    r = mabsa_score({"a": [T(0, 0, POS)]}, {"a": []})
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_no_gold_no_pred_is_zero_not_nan():
    r = mabsa_score({"a": []}, {"a": []})
    assert r.f1 == 0.0 and not math.isnan(r.precision)


def test_perfect_prediction():
    gold = {"a": [T(0, 0, NEG)], "b": [T(1, 2, NEU)]}
    for rep in score_all(gold, gold).values():
        assert rep.f1 == 1.0


def test_duplicates_do_not_double_count():
    r = mabsa_score({"a": [T(0, 0, POS)]}, {"a": [T(0, 0, POS), T(0, 0, POS)]})
    assert r.precision == 1.0


def test_misaligned_ids():
    with pytest.raises(AlignmentError):
        mate_score({"a": []}, {"b": []})


def test_masc_only_counts_matched_spans():
    r = masc_score({"a": [T(0, 0, POS), T(2, 2, NEG)]}, {"a": [T(0, 0, NEG)]})
    assert (r.num_gold, r.num_correct, r.accuracy) == (1, 0, 0.0)


def test_report_text_roundtrip():
    rep = score_all({"a": [T(0, 0, POS)]}, {"a": [T(0, 0, POS), T(1, 1, NEU)]})[Task.MASC]
    assert EvalReport.from_text(rep.to_text()) == rep


@st.composite
def corpora(draw):
    n = draw(st.integers(1, 6))

    def triples():
        return draw(st.lists(st.builds(
            lambda s, w, c: T(s, s + w, c), st.integers(0, 6), st.integers(0, 2), st.sampled_from(list(Sentiment))
        ), max_size=4))

    gold = {f"e{i}": triples() for i in range(n)}
    pred = {f"e{i}": triples() for i in range(n)}
    return gold, pred


@settings(max_examples=200, deadline=None)
@given(corpora())
def test_matches_brute_force(case):
    gold, pred = case
    r, o = score_all(gold, pred), brute_force(gold, pred)
    for task in (Task.MABSA, Task.MATE):
        assert (r[task].precision, r[task].recall, r[task].f1) == o[task]
    assert r[Task.MASC].accuracy == o[Task.MASC]
    assert r[Task.MATE].f1 >= r[Task.MABSA].f1
    p, rc = r[Task.MABSA].precision, r[Task.MABSA].recall
    if p + rc > 0:
        assert abs(r[Task.MABSA].f1 - 2 * p * rc / (p + rc)) < 1e-12
    assert np.isfinite([r[t].f1 for t in Task]).all()
