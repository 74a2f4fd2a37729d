import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embreason.demo_model import Position3
from embreason.reward import (
    composite_reward,
    extract_choice,
    format_reward,
    l1_distance,
    mcqa_answer_reward,
    open_ended_reward,
    parse_response,
    parse_vector_answer,
    score_mcqa,
    score_open_ended,
)
from embreason.rl.policies import render_choice

GT = Position3(0.179, -0.026, 0.846)

# (response, kind, key, expected r_f, expected r_a); kind "mc" uses an option letter key,
# "oe" scores against GT. Open-ended answers are chosen so 1 - L1 is exact to ~1e-15.
CORPUS = [
    ("<think>The cup is ahead.</think><answer>[[C]]</answer>", "mc", "C", 1.0, 1.0),
    ("<think>The cup is ahead.</think><answer>[[A]]</answer>", "mc", "C", 1.0, 0.0),
    ("<think>x</think><answer>C</answer>", "mc", "C", 1.0, 1.0),
    ("<think>x</think><answer> [[B]] </answer>", "mc", "B", 1.0, 1.0),
    ("  <think>\nmulti\nline\n</think>\n<answer>\n[[D]]\n</answer>\n", "mc", "D", 1.0, 1.0),
    ("<think>x</think><answer>[[c]]</answer>", "mc", "C", 1.0, 0.0),
    ("<think>x</think><answer>[[C]] because</answer>", "mc", "C", 1.0, 0.0),
    ("<answer>[[C]]</answer>", "mc", "C", 0.0, 0.0),
    ("<think>x</think>[[C]]", "mc", "C", 0.0, 0.0),
    ("<think>a</think><answer>[[C]]</answer>extra", "mc", "C", 0.0, 0.0),
    ("<think>a</think><think>b</think><answer>[[C]]</answer>", "mc", "C", 0.0, 0.0),
    ("<answer>[[C]]</answer><think>a</think>", "mc", "C", 0.0, 0.0),
    ("[[C]]", "mc", "C", 0.0, 0.0),
    ("<think>a</think><answer>[[E]]</answer>", "mc", "C", 1.0, 0.0),
    ("<think>a</think><answer>[0.2, -0.1, 0.75]</answer>", "oe", None, 1.0, 0.809),
    ("<think>a</think><answer>[0.275, -0.009, 0.85] # Move closer to the button</answer>", "oe", None, 1.0, 0.883),
    ("<think>a</think><answer>[0.179, -0.026, 0.846]</answer>", "oe", None, 1.0, 1.0),
    ("<think>a</think><answer>[1.179, 0.474, 0.846]</answer>", "oe", None, 1.0, 0.0),
    ("<think>a</think><answer>around 0.2, 0.1</answer>", "oe", None, 1.0, 0.0),
    ("<answer>[0.179, -0.026, 0.846]</answer>", "oe", None, 0.0, 0.0),
]


def test_corpus_has_20_cases():
    assert len(CORPUS) == 20


@pytest.mark.parametrize("text,kind,key,rf,ra", CORPUS)
def test_reward_corpus(text, kind, key, rf, ra):
    r = score_mcqa(text, key) if kind == "mc" else score_open_ended(text, GT)
    assert r.r_format == rf
    assert r.r_answer == pytest.approx(ra, abs=1e-9)
    assert r.total == pytest.approx(rf + ra, abs=1e-12)


def test_open_ended_l1_anchors():
    assert l1_distance(Position3(0.2, -0.1, 0.75), GT) == pytest.approx(0.191, abs=1e-12)
    assert l1_distance(Position3(0.275, -0.009, 0.85), GT) == pytest.approx(0.117, abs=1e-12)
    parsed = parse_response("<think>a</think><answer>[0.2, -0.1, 0.75]</answer>")
    assert abs(open_ended_reward(parsed, GT) - 0.809) < 1e-9


def test_parse_response_examples():
    p = parse_response("<think>x</think><answer>[[A]]</answer>")
    assert p.valid_format and p.answer == "[[A]]" and p.think == "x"
    assert not parse_response("<answer>[[A]]</answer>").valid_format
    assert not parse_response("<think>a</think><answer>b</answer>extra").valid_format


def test_weights_and_composite():
    valid = parse_response("<think>x</think><answer>[[B]]</answer>")
    invalid = parse_response("nothing")
    assert format_reward(valid, 1.0) == 1.0
    assert format_reward(invalid, 1.0) == 0.0
    assert format_reward(valid, 0.5) == 0.5
    assert mcqa_answer_reward(valid, "B", 2.0) == 2.0
    assert mcqa_answer_reward(invalid, "B") == 0.0
    assert composite_reward(1, 1).total == 2
    assert composite_reward(1, 0).total == 1
    assert composite_reward(0, 0).total == 0


def test_extract_choice():
    assert extract_choice("[[A]]") == "A"
    assert extract_choice(" D ") == "D"
    assert extract_choice("[A]") is None
    assert extract_choice("AB") is None


def test_vector_parsing():
    assert parse_vector_answer("[1, 2, 3]") == Position3(1, 2, 3)
    assert parse_vector_answer("[-1e-3, +2.5, .5]   # note") == Position3(-0.001, 2.5, 0.5)
    assert parse_vector_answer("[1, 2]") is None
    assert parse_vector_answer("[1, 2, 3]\n# next line comment") is None
    assert parse_vector_answer("[1, 2, 3] trailing") is None


@given(st.text(max_size=60), st.sampled_from("ABCD"))
def test_total_bounded(text, key):
    r = score_mcqa(text, key, 1.0, 1.0)
    assert 0 <= r.total <= 2


@given(st.sampled_from("ABCD"), st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=40))
def test_parse_of_rendered_choice_recovers_answer(letter, think):
    text = f"<think>{think}</think><answer>[[{letter}]]</answer>"
    assert parse_response(text).answer == f"[[{letter}]]"
    assert parse_response(render_choice("ABCD".index(letter))).answer == f"[[{letter}]]"


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1))
def test_open_ended_monotone(a, b):
    def reward(dist):
        pred = Position3(GT.x + dist, GT.y, GT.z)
        return open_ended_reward(parse_response(f"<think>t</think><answer>[{pred.x!r}, {pred.y!r}, {pred.z!r}]</answer>"), GT)

    ra, rb = reward(a), reward(b)
    if a < b - 1e-12:
        assert ra > rb
    if a == 0:
        assert ra == 1.0
    assert 0.0 <= ra <= 1.0


def test_open_ended_one_only_at_zero():
    p = parse_response("<think>t</think><answer>[0.179, -0.026, 0.8461]</answer>")
    assert open_ended_reward(p, GT) < 1.0
    assert np.isclose(open_ended_reward(p, GT), 0.9999, atol=1e-9)
