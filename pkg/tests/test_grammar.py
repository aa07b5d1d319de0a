import random

import pytest
from hypothesis import given, settings, strategies as st

from flowprompt.errors import ExtraTokens, Malformed, MissingKey, OutOfRange, VerdictError
from flowprompt.grammar import (
    GBNF_V1,
    ModelVerdict,
    accepts,
    emit_gbnf,
    format_probability,
    format_verdict,
    parse_gbnf,
    parse_verdict,
    random_derivation,
)

GRAMMAR = emit_gbnf()
ALPHABET = '{}":,.01234567890abcdeiknprt_ \nx-'


def parses(text):
    try:
        parse_verdict(text)
        return True
    except VerdictError:
        return False


def mutate(text, rng):
    i = rng.randrange(len(text) + 1)
    op = rng.choice(("replace", "insert", "delete")) if text else "insert"
    if op == "insert":
        return text[:i] + rng.choice(ALPHABET) + text[i:]
    i = min(i, len(text) - 1)
    if op == "delete":
        return text[:i] + text[i + 1:]
    return text[:i] + rng.choice(ALPHABET) + text[i + 1:]


def test_emit_deterministic():
    a, b = emit_gbnf(), emit_gbnf()
    assert a.gbnf_text == b.gbnf_text == GBNF_V1 and a.sha256 == b.sha256
    assert a.gbnf_text.isascii() and a.gbnf_text.endswith("\n")
    assert set(parse_gbnf(a.gbnf_text)) == {"root", "obj", "pred", "prob", "frac", "nl"}


@pytest.mark.parametrize(
    "raw, expected",
    [
        ('{"prediction":"attack","p_attack":0.85}', ("attack", 0.85)),
        ('{"prediction":"benign","p_attack":0}', ("benign", 0.0)),
        ('{"prediction":"benign","p_attack":1}\n', ("benign", 1.0)),
        ('{"prediction":"attack","p_attack":1.0000}', ("attack", 1.0)),
    ],
)
def test_parse_examples(raw, expected):
    v = parse_verdict(raw)
    assert (v.prediction, v.p_attack) == expected
    assert accepts(GRAMMAR, raw)


@pytest.mark.parametrize(
    "raw, error",
    [
        ('The flow looks malicious. {"prediction":"attack","p_attack":0.9}', ExtraTokens),
        ('{"prediction":"attack","p_attack":0.9} ok', ExtraTokens),
        ('{"prediction":"attack","p_attack":1.5}', (Malformed, OutOfRange)),
        ('{"prediction":"attack","p_attack":2}', OutOfRange),
        ('{"prediction":"attack"}', MissingKey),
        ('{"p_attack":0.3,"prediction":"attack"}', Malformed),
        ('{"prediction":"maybe","p_attack":0.3}', Malformed),
        ('{"prediction":"attack","p_attack":0.12345}', Malformed),
        ('{"prediction": "attack","p_attack":0.1}', Malformed),
        ("", Malformed),
    ],
)
def test_parse_rejections(raw, error):
    with pytest.raises(error):
        parse_verdict(raw)
    assert not accepts(GRAMMAR, raw)


def test_accepts_edge_cases():
    assert not accepts(GRAMMAR, "")
    assert not accepts(GRAMMAR, '{"prediction":"attack","p_attack":0.1}\n\n')
    assert not accepts(GRAMMAR, '{"prediction":"attack","p_attack":1.00001}')


@pytest.mark.parametrize("p, literal", [(0.0, "0"), (1.0, "1"), (0.85, "0.85"), (0.04742587, "0.0474"), (0.00005, "0"), (0.99995, "1"), (0.12345, "0.1234")])
def test_format_probability(p, literal):
    assert format_probability(p) == literal


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["attack", "benign"]), st.floats(0, 1))
def test_format_parse_round_trip(pred, p):
    text = format_verdict(pred, p)
    assert accepts(GRAMMAR, text)
    v = parse_verdict(text)
    assert v.prediction == pred and abs(v.p_attack - p) <= 5e-5
    assert v.to_json() == text


def test_derivations_and_mutations_agree():
    rng = random.Random(1234)
    for _ in range(1000):
        text = random_derivation(GRAMMAR, rng)
        assert accepts(GRAMMAR, text) and parses(text)
        bad = mutate(text, rng)
        assert accepts(GRAMMAR, bad) == parses(bad), bad


def test_model_verdict_invariants():
    with pytest.raises(ValueError):
        ModelVerdict("attack", 1.2)
    with pytest.raises(ValueError):
        ModelVerdict("other", 0.2)
    assert ModelVerdict("attack", 0.5, raw="x") == ModelVerdict("attack", 0.5)
