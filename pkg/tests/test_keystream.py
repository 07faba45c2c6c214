import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcq.keystream import (
    POLY_127,
    PRIMITIVE_POLYS,
    KeyMaterial,
    KeystreamError,
    Lfsr,
    bits_to_str,
    key_from_int,
    lfsr_stream,
    parse_bits,
    period,
    repeat_expand,
)


def reference_lfsr(seed, poly, count):
    """Plain list recurrence s_j = xor of c_i s_{j-i}; output starts with the seed."""
    d = poly.bit_length() - 1
    taps = [i for i in range(1, d + 1) if (poly >> i) & 1]
    s = [int(b) for b in seed]
    while len(s) < count:
        j = len(s)
        bit = 0
        for i in taps:
            bit ^= s[j - i]
        s.append(bit)
    return s[:count]


@pytest.mark.parametrize("d,expected", [(4, 15), (8, 255), (16, 65535)])
def test_primitive_periods(d, expected):
    seed = [0] * (d - 1) + [1]
    assert period(seed, PRIMITIVE_POLYS[d]) == expected


def test_degree8_visits_every_nonzero_state_once():
    poly = PRIMITIVE_POLYS[8]
    reg = Lfsr(poly, "00000001")
    seen = set()
    for _ in range(255):
        seen.add(reg.state)
        reg.next_bit()
    assert len(seen) == 255 and 0 not in seen
    # the window of 8 consecutive output bits also runs over every nonzero byte
    out = lfsr_stream("00000001", poly, 255 + 7)
    windows = {int(bits_to_str(out[i:i + 8]), 2) for i in range(255)}
    assert windows == set(range(1, 256))


@pytest.mark.parametrize("d", [4, 8, 16])
def test_matches_reference_recurrence(d):
    seed = np.random.default_rng(d).integers(0, 2, d)
    seed[0] = 1
    assert list(lfsr_stream(seed, PRIMITIVE_POLYS[d], 500)) == reference_lfsr(seed, PRIMITIVE_POLYS[d], 500)


def test_word_parallel_path_matches_reference():
    seed = np.random.default_rng(7).integers(0, 2, 127)
    out = lfsr_stream(seed, POLY_127, 1000)
    assert list(out) == reference_lfsr(seed, POLY_127, 1000)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 40), st.data())
def test_block_and_bitwise_generation_agree(d, data):
    # random polynomial whose smallest tap is >= 2 exercises the word path
    low = data.draw(st.integers(2, d - 1))
    extra = data.draw(st.sets(st.integers(low, d - 1), max_size=3))
    poly = (1 << d) | 1 | (1 << low) | sum(1 << e for e in extra)
    seed = data.draw(st.lists(st.integers(0, 1), min_size=d, max_size=d).filter(any))
    count = data.draw(st.integers(0, 400))
    a = Lfsr(poly, seed)
    serial = [a.next_bit() for _ in range(count)]
    assert list(Lfsr(poly, seed).take(count)) == serial
    assert serial == reference_lfsr(seed, poly, count)


def test_split_takes_concatenate():
    seed = key_from_int(0xABCDEF, 127)
    whole = lfsr_stream(seed, POLY_127, 777)
    g = Lfsr(POLY_127, seed)
    parts = np.concatenate([g.take(5), g.take(300), g.take(0), g.take(472)])
    assert np.array_equal(parts, whole)


def test_errors_and_trivia():
    with pytest.raises(KeystreamError):
        Lfsr(0x13, "0000")
    with pytest.raises(KeystreamError):
        Lfsr(0x13, "101")
    with pytest.raises(KeystreamError):
        key_from_int(0)
    assert lfsr_stream("1111", 0x13, 0).size == 0
    assert np.array_equal(lfsr_stream("1011", 0x13, 64), lfsr_stream("1011", 0x13, 64))


def test_clone_is_independent():
    g = Lfsr(0x13, "1001")
    g.take(3)
    h = g.clone()
    assert np.array_equal(g.take(20), h.take(20))


def test_repeat_layout():
    r = repeat_expand("10", 6)
    assert bits_to_str(r.stream) == "111000"
    r = repeat_expand(np.ones(100, dtype=np.uint8), 1000)
    assert r.block_len == 10
    assert list(r.block_of[:11]) == [0] * 10 + [1]
    with pytest.raises(KeystreamError):
        repeat_expand("101", 10)


def test_key_material_consumption():
    km = KeyMaterial.from_int(12345, 16)
    a = km.running(40)
    km.running(10)
    assert km.consumed == 50
    assert np.array_equal(a, lfsr_stream(key_from_int(12345, 16), PRIMITIVE_POLYS[16], 40))
    rep = KeyMaterial(parse_bits("1010"), "repeat", repeat_total=8)
    assert bits_to_str(rep.running(8)) == "11001100"
    with pytest.raises(KeystreamError):
        rep.running(1)
