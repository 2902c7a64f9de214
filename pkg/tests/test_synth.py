import numpy as np
import pytest

from lrsa.data import CorpusError, MultimodalExample, read_corpus, read_jsonl, write_corpus
from lrsa.metrics import Task, score_all
from lrsa.synth import SpecError, SynthSpec, generate_corpus, rule_reader


def _all(spec):
    return [ex for split in generate_corpus(spec) for ex in split]


def test_same_seed_same_corpus():
    a, b = _all(SynthSpec(seed=4)), _all(SynthSpec(seed=4))
    assert [ex.to_json() for ex in a] == [ex.to_json() for ex in b]
    assert [ex.to_json() for ex in a] != [ex.to_json() for ex in _all(SynthSpec(seed=5))]


def test_split_sizes_and_disjoint_ids():
    train, dev, test = generate_corpus(SynthSpec(num_train=10, num_dev=3, num_test=2))
    assert (len(train), len(dev), len(test)) == (10, 3, 2)
    ids = [ex.id for ex in train + dev + test]
    assert len(set(ids)) == 15


def test_rule_reader_recovers_gold():
    examples = _all(SynthSpec(num_train=80, seed=9))
    gold = {ex.id: ex.gold for ex in examples}
    pred = {ex.id: rule_reader(ex.text_tokens) for ex in examples}
    assert score_all(gold, pred)[Task.MABSA].f1 == 1.0


def test_examples_are_well_formed():
    spec = SynthSpec(num_train=40, image_slots=3, d_visual=5)
    for ex in _all(spec):
        assert spec.min_text_len <= len(ex.text_tokens) <= spec.max_text_len
        assert ex.image_features.shape == (3, 5)
        assert ex.image_rationale_tokens and ex.text_rationale_tokens
        assert all(t.valid_for(len(ex.text_tokens)) for t in ex.gold)


def test_no_aspect_examples():
    for ex in _all(SynthSpec(num_train=5, min_aspects=0, max_aspects=0)):
        assert ex.gold == [] and ex.text_rationale_tokens == ["text", "names", "no", "aspect"]


@pytest.mark.parametrize("kw", [dict(max_aspects=4, min_text_len=9), dict(min_aspects=2, max_aspects=1),
                                dict(num_nouns=3), dict(image_slots=0)])
def test_infeasible_specs(kw):
    with pytest.raises(SpecError):
        generate_corpus(SynthSpec(**kw))


def test_corpus_roundtrip(tmp_path):
    train, dev, test = generate_corpus(SynthSpec(num_train=4, num_dev=1, num_test=1))
    write_corpus(tmp_path, {"train": train, "dev": dev, "test": test})
    back = read_corpus(tmp_path)
    assert [ex.to_json() for ex in back["train"]] == [ex.to_json() for ex in train]
    assert np.array_equal(back["test"][0].image_features, test[0].image_features)


def test_corpus_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_corpus(tmp_path / "missing")
    with pytest.raises(FileNotFoundError):
        read_corpus(tmp_path)
    line = '{"id": "a", "text": ["x"], "image_features": [1.0]}\n'
    (tmp_path / "dup.jsonl").write_text(line * 2)
    with pytest.raises(CorpusError):
        read_jsonl(tmp_path / "dup.jsonl")
    with pytest.raises(CorpusError):
        MultimodalExample("b", [], np.ones(2))
