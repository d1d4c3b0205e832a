import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meterpipe.ocr import BBox, TextDetection
from meterpipe.refinement import MeterContext, RefinementResult, normalize_tokens, refine


def det(text, conf=1.0, x=0, y=0):
    return TextDetection(text, conf, BBox(x, y, 10, 10))


# ---------------------------------------------------------------------------
# independent oracle: apply the selection rules by plain enumeration


def oracle_refine(detections, ctx):
    last = int(ctx.last_reading)
    best = None
    for d in detections:
        text = d.text
        for sep in (".", ","):
            idx = text.find(sep)
            if idx != -1:
                text = text[:idx]
        digits = "".join(ch for ch in text if ch.isdigit())
        if len(digits) != ctx.register_length:
            continue
        value = int(digits)
        if not (last <= value <= last + ctx.max_delta):
            continue
        key = (value - last, -d.confidence, d.bbox.y, d.bbox.x)
        if best is None or key < best[0]:
            best = (key, digits)
    if best is None:
        return ctx.last_reading, True
    return best[1], False


# ---------------------------------------------------------------------------
# normalize_tokens


def test_normalize_extracts_digits():
    tokens = normalize_tokens([det("kWh"), det("0 1 2 3 4"), det("SN-998877")])
    assert [t[0] for t in tokens] == ["01234", "998877"]


def test_normalize_empty_list():
    assert normalize_tokens([]) == []


def test_normalize_drops_digitless_tokens():
    assert normalize_tokens([det("½"), det("--")]) == []


def test_normalize_strips_fractional_part():
    tokens = normalize_tokens([det("01234.5"), det("99,9"), det("v2.1")])
    assert [t[0] for t in tokens] == ["01234", "99", "2"]


def test_normalize_keeps_confidence_and_bbox():
    source = det("12x3", conf=0.7, x=4, y=9)
    ((digits, conf, box),) = normalize_tokens([source])
    assert digits == "123"
    assert conf == 0.7
    assert (box.x, box.y) == (4, 9)


# ---------------------------------------------------------------------------
# refine


def test_refine_spec_example():
    dets = [det("kWh"), det("01234"), det("SN 998877")]
    result = refine(dets, MeterContext("01200", max_delta=500))
    assert result.reading == "01234"
    assert result.fallback is False


def test_refine_forced_fallback_on_empty():
    result = refine([], MeterContext("00042"))
    assert result.reading == "00042"
    assert result.fallback is True


def test_refine_window_excludes_implausible():
    result = refine([det("99999", conf=0.99)], MeterContext("00100", max_delta=500))
    assert result.reading == "00100"
    assert result.fallback is True
    # the rejected candidate still appears in the audit list
    assert result.candidates[0].token == "99999"
    assert result.candidates[0].delta == 99899


def test_refine_never_goes_backwards():
    result = refine([det("00050")], MeterContext("00100", max_delta=500))
    assert result.fallback is True
    assert result.reading == "00100"


def test_refine_equal_reading_allowed():
    result = refine([det("00100")], MeterContext("00100", max_delta=500))
    assert result.fallback is False
    assert result.reading == "00100"


def test_refine_prefers_smallest_advance_then_confidence_then_position():
    ctx = MeterContext("00100", max_delta=1000)
    r = refine([det("00300"), det("00200")], ctx)
    assert r.reading == "00200"
    r = refine([det("00200", conf=0.5), det("00200", conf=0.9)], ctx)
    assert r.reading == "00200"
    # same token twice with different confidence: winner exists either way
    r = refine([det("00200", conf=0.5, y=10), det("00210", conf=0.9, y=0)], ctx)
    assert r.reading == "00200"  # smaller delta beats higher confidence


def test_refine_result_invariants():
    ctx = MeterContext("12345", max_delta=100)
    res = refine([det("12350"), det("abc")], ctx)
    assert isinstance(res, RefinementResult)
    assert len(res.reading) == ctx.register_length
    assert res.fallback is False


def test_context_validation():
    with pytest.raises(ValueError):
        MeterContext("12a45")
    with pytest.raises(ValueError):
        MeterContext("")
    with pytest.raises(ValueError):
        MeterContext("1" * 13)
    with pytest.raises(ValueError):
        MeterContext("123", max_delta=-1)


# ---------------------------------------------------------------------------
# oracle equivalence and permutation invariance


def random_instance(rng):
    length = rng.randint(1, 6)
    last_val = rng.randint(0, 10**length - 1)
    ctx = MeterContext(str(last_val).zfill(length), max_delta=rng.choice([0, 5, 50, 500, 10**length]))
    dets = []
    for _ in range(rng.randint(0, 8)):
        kind = rng.random()
        if kind < 0.5:
            value = max(0, min(10**length - 1, last_val + rng.randint(-60, 600)))
            text = str(value).zfill(length)
        elif kind < 0.7:
            text = str(rng.randint(0, 10 ** rng.randint(1, 8)))
        elif kind < 0.85:
            text = rng.choice(["kWh", "SN-99", "m3", "--", "total 123 45"])
        else:
            text = f"{rng.randint(0, 999)}.{rng.randint(0, 9)}"
        dets.append(
            det(text, conf=round(rng.random(), 3), x=rng.randint(0, 200), y=rng.randint(0, 200))
        )
    return dets, ctx


def test_refine_matches_oracle_on_random_instances():
    rng = random.Random(2024)
    for _ in range(500):
        dets, ctx = random_instance(rng)
        expected_reading, expected_fallback = oracle_refine(dets, ctx)
        got = refine(dets, ctx)
        assert (got.reading, got.fallback) == (expected_reading, expected_fallback)


def test_refine_permutation_invariant():
    rng = random.Random(4040)
    for _ in range(100):
        dets, ctx = random_instance(rng)
        baseline = refine(dets, ctx).reading
        for _ in range(10):
            shuffled = dets[:]
            rng.shuffle(shuffled)
            assert refine(shuffled, ctx).reading == baseline


@given(st.integers(min_value=0, max_value=99999), st.integers(min_value=0, max_value=99999))
@settings(max_examples=100, deadline=None)
def test_refine_totality_and_monotonicity(last_val, seen_val):
    ctx = MeterContext(str(last_val).zfill(5), max_delta=500)
    result = refine([det(str(seen_val).zfill(5))], ctx)
    assert len(result.reading) == 5
    assert int(result.reading) >= last_val
    if result.fallback:
        assert result.reading == ctx.last_reading
