import json
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attn_tgcn.data import SynthConfig, generate_synthetic
from attn_tgcn.exceptions import DomainError
from attn_tgcn.metrics import (
    UNDEFINED,
    NodeConfusion,
    accumulate,
    evaluate,
    finalize,
    hard_decision,
    is_defined,
    merge,
    new_confusions,
)
from attn_tgcn.model import ModelConfig, init_params, zero_params


def test_hard_decision():
    assert hard_decision([0.4, 0.6]) == 1
    assert hard_decision([0.5, 0.5]) == 0
    assert hard_decision([0.51, 0.49]) == 0


def test_accumulate_tally():
    c = new_confusions(2)
    for pred, act in [(1, 1), (1, 0), (0, 1), (0, 0), (0, 0)]:
        accumulate(c, 0, pred, act)
    assert c[0] == NodeConfusion(tp=1, fp=1, tn=2, fn=1)
    assert c[1].total == 0


def test_finalize_example():
    c = [NodeConfusion(tp=3, fp=3, fn=1, tn=93)]
    r = finalize(c, [1.0, 3.0])
    assert r.precision[0] == pytest.approx(0.5)
    assert r.recall[0] == pytest.approx(0.75)
    assert r.accuracy[0] == pytest.approx(0.96)
    assert r.mean_loss == 2.0 and r.n_sequences == 2


def test_undefined_entries_are_excluded_from_averages():
    c = [NodeConfusion(tp=1, fn=1, tn=2), NodeConfusion(tp=1, fp=1), NodeConfusion(tn=4)]
    r = finalize(c, [0.0])
    assert r.precision[2] is UNDEFINED and r.recall[2] is UNDEFINED
    assert r.average_precision == pytest.approx((1.0 + 0.5) / 2)
    assert r.average_recall == pytest.approx((0.5 + 1.0) / 2)
    assert r.average_accuracy == pytest.approx((0.75 + 0.5 + 1.0) / 3)


def test_all_undefined_average():
    r = finalize([NodeConfusion(tn=3)], [0.0])
    assert r.average_precision is UNDEFINED
    assert r.summary_row().split("\t")[2] == "undefined"


def test_finalize_rejects_no_losses():
    with pytest.raises(DomainError):
        finalize(new_confusions(1), [])


def test_undefined_sentinel():
    assert not UNDEFINED and repr(UNDEFINED) == "undefined"
    assert pickle.loads(pickle.dumps(UNDEFINED)) is UNDEFINED
    assert not is_defined(UNDEFINED) and is_defined(0.0)


def test_serialization_writes_undefined():
    r = finalize([NodeConfusion(tn=5), NodeConfusion(tp=2)], [0.1])
    doc = json.loads(r.dumps())
    assert doc["nodes"][0]["precision"] == "undefined"
    assert doc["nodes"][1]["precision"] == 1.0
    assert doc["average_accuracy"] == 1.0


outcomes = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=40)


@settings(max_examples=100, deadline=None)
@given(outcomes, st.randoms(use_true_random=False))
def test_counts_invariant_under_reordering(events, rnd):
    a = new_confusions(1)
    for p, y in events:
        accumulate(a, 0, p, y)
    shuffled = list(events)
    rnd.shuffle(shuffled)
    b = new_confusions(1)
    for p, y in shuffled:
        accumulate(b, 0, p, y)
    assert a == b
    assert a[0].total == len(events)


@settings(max_examples=50, deadline=None)
@given(outcomes, outcomes)
def test_merge_equals_joint_tally(x, y):
    a, b, both = new_confusions(1), new_confusions(1), new_confusions(1)
    for p, t in x:
        accumulate(a, 0, p, t)
        accumulate(both, 0, p, t)
    for p, t in y:
        accumulate(b, 0, p, t)
        accumulate(both, 0, p, t)
    assert merge(a, b) == both


def test_evaluate_zero_params_predicts_alive_everywhere():
    data = generate_synthetic(SynthConfig(videos=12, seed=3, t=5, f=4))
    cfg = ModelConfig(t=5, n=3, f=4, g=3, h=3, d_a=2)
    r = evaluate(zero_params(cfg), data)
    assert all(c.tp == 0 and c.fp == 0 for c in r.confusions)
    assert r.mean_loss == pytest.approx(3 * np.log(2))


def test_evaluate_is_worker_and_order_independent():
    data = generate_synthetic(SynthConfig(videos=12, seed=3, t=5, f=4))
    params = init_params(ModelConfig(t=5, n=3, f=4, g=3, h=3, d_a=2), 1)
    a = evaluate(params, data)
    b = evaluate(params, list(reversed(data)), workers=3)
    assert a.dumps() == b.dumps()


def test_evaluate_empty():
    params = init_params(ModelConfig(t=5, n=3, f=4, g=3, h=3, d_a=2), 1)
    with pytest.raises(DomainError):
        evaluate(params, [])
