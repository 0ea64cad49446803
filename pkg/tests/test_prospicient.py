"""Lookahead codec: rearrangement, linear binning, and the two-mode decoder."""

import io
import math

import numpy as np
import pytest

from streamcode import channel, gf2, prospicient, rates, sources
from streamcode.errors import DecodeFailure, InvalidInput, PatternViolation


def bm(rows) -> gf2.BitMatrix:
    return gf2.BitMatrix.from_bits(np.array(rows, np.uint8))


def unit_chain(depth: int) -> sources.DiagonalSourceSpec:
    """All widths 1, every inter-layer map the 1x1 identity."""
    return sources.DiagonalSourceSpec(
        (1,) * (depth + 1), tuple(gf2.BitMatrix.identity(1) for _ in range(depth))
    )


def symbol_at(trace: sources.StreamTrace, t: int) -> list:
    return [trace.symbol(t, j) for j in range(len(trace.widths))]


def run_decode(trace, spec, B, W, code, pattern=None):
    stream = prospicient.encode(trace, spec, B, W, code)
    if pattern is not None:
        stream = stream.with_erasures(pattern)
    return prospicient.decode_stream(stream, code, symbol_at(trace, -1))


def check_outputs(trace, out, window=()):
    """Recovered symbols must match the trace; window times must be skipped."""
    window = set(window)
    for t in range(trace.T):
        if t in window:
            assert out[t] is None, f"time {t} should be a skip marker"
        else:
            assert out[t] is not None, f"time {t} missing"
            for j in range(len(trace.widths)):
                assert np.array_equal(out[t][j], trace.sub[j][t]), (t, j)


# ---------------------------------------------------------- rearrangement


def test_rearrange_w0_parts_are_the_layers():
    rng = np.random.default_rng(1)
    spec = sources.random_diagonal_spec(rng, K=2)
    trace = sources.gen_diagonal(spec, n=5, T=4, seed=7)
    for t in range(trace.T):
        block = prospicient.rearrange(symbol_at(trace, t), spec, B=2, W=0)
        # with no decode delay every product collapses to the identity
        assert len(block.parts) == 3
        for k in range(3):
            assert np.array_equal(block.parts[k], trace.sub[k][t])


def test_rearrange_b0_is_the_innovation_alone():
    rng = np.random.default_rng(2)
    spec = sources.random_diagonal_spec(rng, K=2)
    trace = sources.gen_diagonal(spec, n=4, T=3, seed=8)
    block = prospicient.rearrange(symbol_at(trace, 1), spec, B=0, W=2)
    assert block.widths == (spec.widths[0],)
    assert np.array_equal(block.parts[0], trace.sub[0][1])


def test_rearrange_unit_chain_carries_previous_innovation():
    # depth-2 chain of 1-bit layers: the deep part of the codeword at time i
    # is exactly the innovation from time i-1
    spec = unit_chain(2)
    trace = sources.gen_diagonal(spec, n=6, T=10, seed=9)
    for t in range(trace.T):
        block = prospicient.rearrange(symbol_at(trace, t), spec, B=1, W=1)
        assert block.widths == (1, 1)
        assert np.array_equal(block.parts[0], trace.symbol(t, 0))
        assert np.array_equal(block.parts[1], trace.symbol(t - 1, 0))


def test_rearrange_rejects_bad_layouts():
    spec = unit_chain(2)
    good = [np.zeros((3, 1), np.uint8) for _ in range(3)]
    with pytest.raises(InvalidInput, match="normalize"):
        prospicient.rearrange(good, spec, B=1, W=0)
    with pytest.raises(InvalidInput, match="layer"):
        prospicient.rearrange(good[:2], spec, B=1, W=1)
    bad = [np.zeros((3, 2), np.uint8)] + good[1:]
    with pytest.raises(InvalidInput, match="width"):
        prospicient.rearrange(bad, spec, B=1, W=1)


# --------------------------------------------------------------- bin code


def test_bincode_matrices_reproducible_and_time_varying():
    code = prospicient.BinCode(seed=5, n=4, r0_bits=3, packet_bits=7)
    again = prospicient.BinCode(seed=5, n=4, r0_bits=3, packet_bits=7)
    assert np.array_equal(code.matrix(2), again.matrix(2))
    assert not np.array_equal(code.matrix(2), code.matrix(3))
    ident = prospicient.BinCode(seed=5, n=4, r0_bits=3, packet_bits=12)
    assert ident.identity_mode
    vec = np.random.default_rng(0).integers(0, 2, (4, 3), dtype=np.uint8)
    assert np.array_equal(ident.hash_vec(1, vec), vec.reshape(-1))
    assert prospicient.BinCode.from_json(code.to_json()) == code


def test_design_bincode_sizing_and_feasibility():
    rng = np.random.default_rng(3)
    spec = sources.random_diagonal_spec(rng, K=3)
    B, W, n = 2, 1, 16
    code = prospicient.design_bincode(spec, B, W, n, delta=8, seed=1)
    need = math.ceil(rates.diagonal_rate(spec.widths, B, W) * n)
    assert code.packet_bits == min(need + 8, n * code.r0_bits)
    assert code.r0_bits == spec.widths[0] + spec.widths[2] + spec.widths[3]
    with pytest.raises(InvalidInput, match="packet_bits"):
        prospicient.design_bincode(spec, B, W, n, packet_bits=need - 1)
    # a huge delta saturates at the raw codeword width (binning disabled)
    full = prospicient.design_bincode(spec, B, W, n, delta=10**6)
    assert full.identity_mode


# ----------------------------------------------------------------- encode


def test_encode_identity_mode_emits_codewords_verbatim():
    spec = unit_chain(2)
    code = prospicient.design_bincode(spec, 1, 1, n=4, delta=10**6, seed=2)
    trace = sources.gen_diagonal(spec, n=4, T=6, seed=11)
    stream = prospicient.encode(trace, spec, 1, 1, code)
    assert stream.packet_bits == 4 * 2
    for t in range(6):
        block = prospicient.rearrange(symbol_at(trace, t), spec, 1, 1)
        assert np.array_equal(stream.packets[t], block.vec().reshape(-1))


def test_encode_zero_trace_gives_zero_packets():
    spec = unit_chain(2)
    code = prospicient.design_bincode(spec, 1, 1, n=4, seed=3)
    trace = sources.gen_diagonal(spec, n=4, T=5, seed=12)
    for arr in trace.sub + trace.tail:
        arr[:] = 0
    stream = prospicient.encode(trace, spec, 1, 1, code)
    for pkt in stream.packets:
        assert not pkt.any()


def test_encode_is_linear_and_memoryless():
    rng = np.random.default_rng(4)
    spec = sources.random_diagonal_spec(rng, K=2)
    B, W, n, T = 1, 1, 8, 7
    code = prospicient.design_bincode(spec, B, W, n, seed=4)
    a = sources.gen_diagonal(spec, n, T, seed=13)
    b = sources.gen_diagonal(spec, n, T, seed=14)
    xor = sources.StreamTrace(
        kind=a.kind,
        n=n,
        T=T,
        widths=a.widths,
        sub=[x ^ y for x, y in zip(a.sub, b.sub)],
        tail=[x ^ y for x, y in zip(a.tail, b.tail)],
    )
    sa = prospicient.encode(a, spec, B, W, code)
    sb = prospicient.encode(b, spec, B, W, code)
    sx = prospicient.encode(xor, spec, B, W, code)
    for t in range(T):
        assert np.array_equal(sx.packets[t], sa.packets[t] ^ sb.packets[t])
    # memoryless: history rewrites cannot touch the time-t packet
    mangled = sources.StreamTrace(
        kind=a.kind,
        n=n,
        T=T,
        widths=a.widths,
        sub=[x.copy() for x in a.sub],
        tail=[np.ones_like(x) for x in a.tail],
    )
    t_check = T - 1
    for j in range(len(a.widths)):
        mangled.sub[j][:t_check] ^= b.sub[j][:t_check]
    sm = prospicient.encode(mangled, spec, B, W, code)
    assert np.array_equal(sm.packets[t_check], sa.packets[t_check])


# ----------------------------------------------------------------- decode


def test_clean_stream_decodes_every_symbol():
    rng = np.random.default_rng(5)
    spec = sources.random_diagonal_spec(rng, K=2, max_width=3)
    trace = sources.gen_diagonal(spec, n=16, T=20, seed=15)
    code = prospicient.design_bincode(spec, 1, 1, n=16, seed=5)
    out = run_decode(trace, spec, 1, 1, code)
    check_outputs(trace, out)


def test_recovery_after_every_burst_position():
    rng = np.random.default_rng(6)
    spec = sources.random_diagonal_spec(rng, K=3, max_width=3)
    B, W, n, T = 2, 1, 16, 24
    trace = sources.gen_diagonal(spec, n, T, seed=16)
    code = prospicient.design_bincode(spec, B, W, n, seed=6)
    stream = prospicient.encode(trace, spec, B, W, code)
    tail = symbol_at(trace, -1)
    for bp in (1, 2):
        for j in range(T - bp + 1):
            erased = stream.with_erasures(channel.single_burst(j, bp, T))
            out = prospicient.decode_stream(erased, code, tail)
            deadline = j + bp + W
            window = range(j, min(deadline, T))
            check_outputs(trace, out, window)


def test_recovery_on_padded_shallow_spec():
    # depth-1 source used at a (B, W) needing depth 2: normalize_K pads a
    # zero-width layer, and the deep codeword part for that slot is empty
    rng = np.random.default_rng(7)
    base = sources.random_diagonal_spec(rng, K=1, max_width=3)
    B, W, n, T = 1, 1, 12, 12
    norm = sources.normalize_K(base, B, W)
    spec = norm.spec
    assert spec.widths[-1] == 0 and not norm.tail_rule
    trace = sources.gen_diagonal(spec, n, T, seed=17)
    code = prospicient.design_bincode(spec, B, W, n, seed=7)
    out = run_decode(trace, spec, B, W, code, channel.single_burst(4, 1, T))
    check_outputs(trace, out, window=range(4, 6))


def test_burst_running_off_the_horizon_skips_the_tail():
    spec = unit_chain(2)
    B, W, n, T = 1, 1, 8, 10
    trace = sources.gen_diagonal(spec, n, T, seed=18)
    code = prospicient.design_bincode(spec, B, W, n, seed=8)
    out = run_decode(trace, spec, B, W, code, channel.single_burst(T - 1, 1, T))
    check_outputs(trace, out, window=(T - 1,))  # deadline never arrives
    out = run_decode(trace, spec, B, W, code, channel.single_burst(T - 2, 1, T))
    check_outputs(trace, out, window=(T - 2, T - 1))


def test_pattern_violations():
    spec = unit_chain(1)  # K = 1 fits B=1, W=0 and B=0, W=1
    n, T = 8, 8
    trace = sources.gen_diagonal(spec, n, T, seed=19)
    code = prospicient.design_bincode(spec, 0, 1, n, seed=9)
    with pytest.raises(PatternViolation, match="B = 0"):
        run_decode(trace, spec, 0, 1, code, channel.single_burst(3, 1, T))
    code = prospicient.design_bincode(spec, 1, 0, n, seed=9)
    with pytest.raises(PatternViolation, match="longer"):
        run_decode(trace, spec, 1, 0, code, channel.single_burst(3, 2, T))
    # second burst before the first recovery window closes
    spec2 = unit_chain(2)
    code2 = prospicient.design_bincode(spec2, 1, 1, n, seed=9)
    trace2 = sources.gen_diagonal(spec2, n, T, seed=20)
    pattern = channel.ErasurePattern(T=T, erased=frozenset({2, 4}))
    with pytest.raises(PatternViolation, match="recovery window"):
        run_decode(trace2, spec2, 1, 1, code2, pattern)
    # adequate guard spacing: two bursts decode fine
    pattern = channel.ErasurePattern(T=T, erased=frozenset({1, 5}))
    out = run_decode(trace2, spec2, 1, 1, code2, pattern)
    check_outputs(trace2, out, window={1, 2, 5, 6})


def test_undersized_packets_raise_decode_failure():
    spec = unit_chain(2)
    n, T = 8, 4
    trace = sources.gen_diagonal(spec, n, T, seed=21)
    # below the information threshold: steady unknowns can never be pinned
    code = prospicient.BinCode(seed=10, n=n, r0_bits=2, packet_bits=n - 1)
    with pytest.raises(DecodeFailure, match="underdetermined"):
        run_decode(trace, spec, 1, 1, code)


# ----------------------------------------------------- symbol reconstruction


def test_reconstruct_with_w0_is_the_codeword_itself():
    rng = np.random.default_rng(8)
    spec = sources.random_diagonal_spec(rng, K=2)
    trace = sources.gen_diagonal(spec, n=5, T=6, seed=22)
    i = 3
    block = prospicient.rearrange(symbol_at(trace, i), spec, B=2, W=0)
    layers = prospicient.reconstruct_symbol(
        spec, 2, 0, innovations=[block.parts[0]], deep_parts=block.parts[1:]
    )
    for j in range(3):
        assert np.array_equal(layers[j], trace.sub[j][i])


def test_reconstruct_matches_generator_along_steady_chain():
    rng = np.random.default_rng(9)
    spec = sources.random_diagonal_spec(rng, K=3, max_width=3)
    B, W = 2, 1
    trace = sources.gen_diagonal(spec, n=4, T=10, seed=23)
    for i in range(W, trace.T):
        innovations = [trace.symbol(i - W + m, 0) for m in range(W + 1)]
        donor = prospicient.rearrange(symbol_at(trace, i - W), spec, B, W)
        layers = prospicient.reconstruct_symbol(
            spec, B, W, innovations, deep_parts=donor.parts[1:]
        )
        for j in range(spec.K + 1):
            assert np.array_equal(layers[j], trace.symbol(i, j)), (i, j)
        # anchor route: take the deep layers from an older full symbol
        layers = prospicient.reconstruct_symbol(
            spec, B, W, innovations, anchor=(symbol_at(trace, i - W - 1), W + 1)
        )
        for j in range(spec.K + 1):
            assert np.array_equal(layers[j], trace.symbol(i, j)), (i, j)
    with pytest.raises(InvalidInput, match="W\\+1"):
        prospicient.reconstruct_symbol(spec, B, W, innovations[:1])


# ------------------------------------------------------------ serialization


def test_packet_stream_json_roundtrip():
    spec = unit_chain(2)
    n, T = 6, 9
    trace = sources.gen_diagonal(spec, n, T, seed=24)
    code = prospicient.design_bincode(spec, 1, 1, n, seed=11)
    stream = prospicient.encode(trace, spec, 1, 1, code)
    stream = stream.with_erasures(channel.single_burst(2, 1, T))
    buf = io.StringIO()
    prospicient.dump_packets(stream, buf)
    buf.seek(0)
    back = prospicient.load_packets(buf)
    assert back.spec.widths == spec.widths
    assert (back.B, back.W, back.n, back.packet_bits, back.seed) == (
        stream.B,
        stream.W,
        stream.n,
        stream.packet_bits,
        stream.seed,
    )
    assert back.T == T
    for t in range(T):
        if stream.packets[t] is None:
            assert back.packets[t] is None
        else:
            assert np.array_equal(back.packets[t], stream.packets[t])
