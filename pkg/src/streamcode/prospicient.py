"""Lookahead streaming codec for layered GF(2) sources.

The encoder is memoryless: at each time it rearranges the current symbol
into a short codeword — the innovation layer plus, for each burst slot
k = 1..B, the image of layer k under the layer-to-layer products that
will matter W+k steps later — and transmits a seeded random linear hash
of the codeword across all n spatial copies.  The decoder runs as a
two-mode state machine: in steady mode each packet pins down the n·N_0
innovation bits by linear elimination; after a burst of B' <= B
erasures it buffers W+1 packets and solves one stacked system whose
unknowns are the (W+1)·n·N_0 fresh innovation bits plus the n·sum(N_{W+k})
deep-codeword bits the burst destroyed.  Everything outside the
error-propagation window [burst_start, burst_start+B'+W-1] is emitted
bit-exactly; window times are emitted as explicit skip markers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import channel, gf2, rates
from .errors import DecodeFailure, InvalidInput, PatternViolation
from .sources import DiagonalSourceSpec


class _Plan:
    """Per-(spec, B, W) geometry: codeword part widths and cached
    layer-to-layer map products, as dense bit arrays."""

    def __init__(self, spec: DiagonalSourceSpec, B: int, W: int):
        if B < 0 or W < 0:
            raise InvalidInput("B and W must be nonnegative")
        if spec.K != B + W:
            raise InvalidInput(
                "spec depth must equal B+W; normalize the spec first"
            )
        self.spec = spec
        self.B = B
        self.W = W
        self.widths = spec.widths
        self.part_widths = (spec.widths[0],) + tuple(
            spec.widths[W + k] for k in range(1, B + 1)
        )
        self.offs = [0]
        for w in self.part_widths:
            self.offs.append(self.offs[-1] + w)
        self.r0 = self.offs[-1]
        self._rbits = [None] + [m.to_bits() for m in spec.R]
        self._prods: dict[tuple[int, int], np.ndarray] = {}

    def prod(self, hi: int, lo: int) -> np.ndarray:
        """Dense product of the inter-layer maps from layer lo up to hi."""
        assert 0 <= lo <= hi <= self.spec.K
        if hi == lo:
            return np.eye(self.widths[hi], dtype=np.uint8)
        key = (hi, lo)
        got = self._prods.get(key)
        if got is None:
            got = (
                self._rbits[hi].astype(np.int32) @ self.prod(hi - 1, lo) & 1
            ).astype(np.uint8)
            self._prods[key] = got
        return got

    def advance(self, layers: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Deterministic layers of the next symbol (innovation left empty)."""
        n = layers[0].shape[0]
        out = [np.zeros((n, self.widths[0]), np.uint8)]
        for j in range(1, self.spec.K + 1):
            out.append((layers[j - 1] @ self._rbits[j].T) & 1)
        return out


@dataclass(frozen=True)
class CodewordBlock:
    """One time-step's rearranged codeword: part 0 is the innovation
    layer verbatim; part k (k = 1..B) is layer k pushed forward to the
    depth it will occupy when it becomes decodable."""

    parts: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "parts", tuple(np.asarray(p, np.uint8) for p in self.parts))
        if any(p.ndim != 2 or p.shape[0] != self.parts[0].shape[0] for p in self.parts):
            raise InvalidInput("codeword parts must share the copy dimension")

    @property
    def n(self) -> int:
        return self.parts[0].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.parts)

    def vec(self) -> np.ndarray:
        """(n, total_bits) array; one codeword row per spatial copy."""
        return np.concatenate(self.parts, axis=1)


def rearrange(
    symbol: Sequence[np.ndarray], spec: DiagonalSourceSpec, B: int, W: int
) -> CodewordBlock:
    """Memoryless rearrangement of one symbol into its codeword block.

    ``symbol`` lists the layers at a single time, layer j of shape
    (n, N_j).  Requires ``spec.K == B + W`` (see sources.normalize_K).
    """
    plan = _Plan(spec, B, W)
    return _rearrange(plan, symbol)


def _rearrange(plan: _Plan, symbol: Sequence[np.ndarray]) -> CodewordBlock:
    if len(symbol) != plan.spec.K + 1:
        raise InvalidInput("symbol must have one layer per spec width")
    layers = [np.asarray(s, np.uint8) for s in symbol]
    for j, s in enumerate(layers):
        if s.ndim != 2 or s.shape[1] != plan.widths[j]:
            raise InvalidInput("symbol layer widths do not match the spec")
    parts = [layers[0]]
    for k in range(1, plan.B + 1):
        parts.append((layers[k] @ plan.prod(plan.W + k, k).T) & 1)
    return CodewordBlock(tuple(parts))


@dataclass
class BinCode:
    """Seeded per-time random linear hash of the flattened codeword.

    The time-i matrix is reproducible from (seed, i).  When
    ``packet_bits == n * r0_bits`` the hash degenerates to the identity
    and packets carry the codeword verbatim (binning disabled).
    """

    seed: int
    n: int
    r0_bits: int
    packet_bits: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1 or self.r0_bits < 0:
            raise InvalidInput("need n >= 1 and a nonnegative codeword width")
        if not 0 <= self.packet_bits <= self.in_bits:
            raise InvalidInput("packet size must lie in [0, codeword bits]")

    @property
    def in_bits(self) -> int:
        return self.n * self.r0_bits

    @property
    def identity_mode(self) -> bool:
        return self.packet_bits == self.in_bits

    def matrix(self, t: int) -> np.ndarray:
        """Hash matrix for time t as a (packet_bits, in_bits) bit array."""
        if t < 0:
            raise InvalidInput("packet times are nonnegative")
        got = self._cache.get(t)
        if got is None:
            if self.identity_mode:
                got = np.eye(self.in_bits, dtype=np.uint8)
            else:
                rng = np.random.default_rng([self.seed, t])
                got = rng.integers(0, 2, (self.packet_bits, self.in_bits), dtype=np.uint8)
            self._cache[t] = got
        return got

    def packed(self, t: int) -> gf2.BitMatrix:
        """Time-t hash as a packed bit matrix (cached alongside matrix)."""
        key = ("packed", t)
        got = self._cache.get(key)
        if got is None:
            got = gf2.BitMatrix.from_bits(self.matrix(t))
            self._cache[key] = got
        return got

    def hash_vec(self, t: int, vec: np.ndarray) -> np.ndarray:
        """Apply the time-t hash to an (n, r0_bits) codeword array."""
        flat = np.asarray(vec, np.uint8).reshape(-1)
        if flat.shape[0] != self.in_bits:
            raise InvalidInput("codeword size does not match the hash input")
        if self.identity_mode:
            return flat.copy()
        return self.packed(t).mul_vec(gf2.BitVector.from_bits(flat)).to_bits()

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "r0_bits": self.r0_bits,
            "packet_bits": self.packet_bits,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BinCode":
        return cls(
            seed=int(obj["seed"]),
            n=int(obj["n"]),
            r0_bits=int(obj["r0_bits"]),
            packet_bits=int(obj["packet_bits"]),
        )


def design_bincode(
    spec: DiagonalSourceSpec,
    B: int,
    W: int,
    n: int,
    delta: int = 8,
    seed: int = 0,
    packet_bits: int | None = None,
) -> BinCode:
    """Size a BinCode for the given source and channel design point.

    The packet carries ceil(n * diagonal_rate(N, B, W)) + delta bits
    (delta slack bits per packet buy a 2**-((W+1)*delta) failure bound),
    capped at the raw codeword size, which disables binning.  An
    explicit ``packet_bits`` below the information threshold is refused.
    """
    plan = _Plan(spec, B, W)
    need = math.ceil(rates.diagonal_rate(spec.widths, B, W) * n)
    cap = n * plan.r0
    if packet_bits is None:
        packet_bits = min(need + delta, cap)
    if not need <= packet_bits <= cap:
        raise InvalidInput(
            f"packet_bits must lie in [{need}, {cap}] for this design point"
        )
    return BinCode(seed=seed, n=n, r0_bits=plan.r0, packet_bits=packet_bits)


@dataclass
class PacketStream:
    """A horizon of fixed-size packets, with None marking erased slots."""

    spec: DiagonalSourceSpec
    B: int
    W: int
    n: int
    packet_bits: int
    seed: int
    packets: list

    @property
    def T(self) -> int:
        return len(self.packets)

    def with_erasures(self, pattern: channel.ErasurePattern) -> "PacketStream":
        return PacketStream(
            spec=self.spec,
            B=self.B,
            W=self.W,
            n=self.n,
            packet_bits=self.packet_bits,
            seed=self.seed,
            packets=channel.apply(pattern, self.packets),
        )


def encode(
    trace, spec: DiagonalSourceSpec, B: int, W: int, bincode: BinCode
) -> PacketStream:
    """Hash each time-step's rearranged codeword into one packet."""
    plan = _Plan(spec, B, W)
    if tuple(trace.widths) != tuple(spec.widths):
        raise InvalidInput("trace widths do not match the source spec")
    if trace.n != bincode.n or bincode.r0_bits != plan.r0:
        raise InvalidInput("bin code was sized for a different design point")
    packets = []
    for t in range(trace.T):
        block = _rearrange(plan, [trace.sub[j][t] for j in range(spec.K + 1)])
        packets.append(bincode.hash_vec(t, block.vec()))
    return PacketStream(
        spec=spec,
        B=B,
        W=W,
        n=trace.n,
        packet_bits=bincode.packet_bits,
        seed=bincode.seed,
        packets=packets,
    )


@dataclass
class DecoderState:
    """Receiver state machine.

    In steady mode ``last_known`` holds the full symbol at ``time - 1``.
    During recovery it freezes at the pre-burst symbol while packets
    accumulate in ``buffered``; the stacked solve fires once W+1 of
    them have arrived.
    """

    time: int
    mode: str  # "steady" | "recovering"
    last_known: list
    recovered_time: int
    burst_start: int | None = None
    burst_len: int = 0
    buffered: list = field(default_factory=list)

    @classmethod
    def initial(cls, tail_symbol: Sequence[np.ndarray]) -> "DecoderState":
        """Start at time 0 given the revealed symbol at time -1."""
        layers = [np.asarray(s, np.uint8) for s in tail_symbol]
        return cls(time=0, mode="steady", last_known=layers, recovered_time=-1)


def decode_step(
    state: DecoderState,
    packet,
    spec: DiagonalSourceSpec,
    B: int,
    W: int,
    bincode: BinCode,
):
    """Consume the time-``state.time`` channel output.

    Returns ``(state, layers)`` where ``layers`` is the full symbol for
    that time, or None when the time falls inside a burst or its
    recovery window (a "not required" marker).

    Raises:
        PatternViolation: the erasure pattern breaks the single-burst /
            guard-spacing contract this codec is designed for.
        DecodeFailure: the hash did not pin the unknowns down uniquely.
    """
    plan = _Plan(spec, B, W)
    t = state.time
    if packet is None:
        if state.mode == "steady":
            if B == 0:
                raise PatternViolation("erasure on a channel designed for B = 0")
            state.mode = "recovering"
            state.burst_start = t
            state.burst_len = 1
            state.buffered = []
        else:
            if state.buffered:
                raise PatternViolation(
                    "new burst began inside the recovery window"
                )
            state.burst_len += 1
            if state.burst_len > B:
                raise PatternViolation("burst longer than the design bound B")
        state.time += 1
        return state, None

    arr = np.asarray(packet, np.uint8)
    if arr.shape != (bincode.packet_bits,):
        raise InvalidInput("packet size does not match the bin code")

    if state.mode == "steady":
        layers = _steady_decode(plan, bincode, t, state.last_known, arr)
    else:
        state.buffered.append(arr)
        if len(state.buffered) < W + 1:
            state.time += 1
            return state, None
        layers = _deadline_decode(plan, bincode, state, t)
        state.mode = "steady"
        state.burst_start = None
        state.burst_len = 0
        state.buffered = []
    state.last_known = layers
    state.recovered_time = t
    state.time += 1
    return state, layers


def decode_stream(stream: PacketStream, bincode: BinCode, tail_symbol) -> list:
    """Run the decoder over a whole PacketStream; one entry per time."""
    state = DecoderState.initial(tail_symbol)
    out = []
    for t in range(stream.T):
        state, layers = decode_step(
            state, stream.packets[t], stream.spec, stream.B, stream.W, bincode
        )
        out.append(layers)
    return out


def _solve_bits(solver: gf2.PrefactoredSolver, rhs: np.ndarray, t: int) -> np.ndarray:
    """Unique GF(2) solve, mapped onto the decoder's failure contract."""
    try:
        return solver.solve_unique(rhs)
    except ValueError as exc:
        raise DecodeFailure(f"time {t}: {exc}") from exc


def _steady_decode(
    plan: _Plan, bincode: BinCode, t: int, prev: Sequence[np.ndarray], packet: np.ndarray
) -> list[np.ndarray]:
    """One-packet decode: only the innovation bits are unknown."""
    n = bincode.n
    n0 = plan.widths[0]
    det = plan.advance(prev)
    base = np.zeros((n, plan.r0), np.uint8)
    for k in range(1, plan.B + 1):
        base[:, plan.offs[k] : plan.offs[k + 1]] = (
            det[k] @ plan.prod(plan.W + k, k).T
        ) & 1
    rhs = packet ^ bincode.hash_vec(t, base)
    # the coefficient matrix depends only on (code, t), so its elimination
    # is cached and repeat visits cost one matrix-vector product
    key = ("steady", t, n0, plan.r0)
    solver = bincode._cache.get(key)
    if solver is None:
        m = bincode.matrix(t).reshape(bincode.packet_bits, n, plan.r0)[:, :, :n0]
        solver = gf2.PrefactoredSolver(
            gf2.BitMatrix.from_bits(m.reshape(bincode.packet_bits, n * n0))
        )
        bincode._cache[key] = solver
    det[0] = _solve_bits(solver, rhs, t).reshape(n, n0)
    return det


def _deadline_decode(
    plan: _Plan, bincode: BinCode, state: DecoderState, t: int
) -> list[np.ndarray]:
    """Stacked post-burst decode at the recovery deadline.

    Unknowns: the innovation of each buffered time, plus the deep
    codeword parts c_{burst_end, 1..B'} the burst wiped out.  Every
    codeword bit of the buffered packets is affine in these, because
    part k of time tau is the innovation of time tau-k pushed through
    the layer products — and tau-k is either buffered (an unknown
    innovation), inside the burst (an unknown deep part), or pre-burst
    (known, propagated from the frozen last_known symbol).
    """
    n, W, B = bincode.n, plan.W, plan.B
    n0 = plan.widths[0]
    j0 = state.burst_start
    bp = state.burst_len
    burst_end = j0 + bp
    assert t == burst_end + W and len(state.buffered) == W + 1
    assert state.recovered_time == j0 - 1
    pre = state.last_known

    zw = [n0] * (W + 1) + [plan.widths[W + k] for k in range(1, bp + 1)]
    zoffs = [0]
    for w in zw:
        zoffs.append(zoffs[-1] + w)
    zdim = n * zoffs[-1]

    rows = bincode.packet_bits
    # the stacked coefficient matrix is fixed by the burst geometry and the
    # hash times, so its elimination is cached; only the right-hand side
    # (which folds in the pre-burst symbol) changes between decodes
    key = ("window", burst_end, bp, W, tuple(plan.widths))
    solver = bincode._cache.get(key)
    m_parts = [] if solver is None else None
    rhs_parts = []
    for i, tau in enumerate(range(burst_end, burst_end + W + 1)):
        base = np.zeros((n, plan.r0), np.uint8)
        for k in range(1, B + 1):
            if plan.part_widths[k] == 0:
                continue
            b = tau - k  # time whose innovation feeds this part
            if b < j0:
                src = pre[k - (tau - j0 + 1)]
                base[:, plan.offs[k] : plan.offs[k + 1]] = (
                    src @ plan.prod(W + k, k - (tau - j0 + 1)).T
                ) & 1
        rhs_parts.append(state.buffered[i] ^ bincode.hash_vec(tau, base))
        if m_parts is None:
            continue
        h3 = bincode.matrix(tau).reshape(rows, n, plan.r0)
        acc = np.zeros((rows, zdim), np.int32)
        acc[:, n * zoffs[i] : n * zoffs[i + 1]] += h3[:, :, :n0].reshape(rows, n * n0)
        for k in range(1, B + 1):
            if plan.part_widths[k] == 0:
                continue
            sl = slice(plan.offs[k], plan.offs[k + 1])
            b = tau - k
            if b >= burst_end:
                blk = b - burst_end
                coef = plan.prod(W + k, 0).astype(np.int32)
            elif b >= j0:
                blk = W + 1 + (burst_end - b) - 1
                coef = plan.prod(W + k, W + burst_end - b).astype(np.int32)
            else:
                continue
            contrib = np.einsum("rnk,kc->rnc", h3[:, :, sl], coef)
            acc[:, n * zoffs[blk] : n * zoffs[blk + 1]] += contrib.reshape(rows, -1)
        m_parts.append((acc & 1).astype(np.uint8))
    if solver is None:
        solver = gf2.PrefactoredSolver(
            gf2.BitMatrix.from_bits(np.concatenate(m_parts))
        )
        bincode._cache[key] = solver

    z = _solve_bits(solver, np.concatenate(rhs_parts), t)
    blocks = [
        z[n * zoffs[b] : n * zoffs[b + 1]].reshape(n, zw[b]) for b in range(len(zw))
    ]
    innovations = blocks[: W + 1]
    deep = blocks[W + 1 :]
    return _assemble(plan, innovations, deep, (pre, t - j0 + 1))


def _assemble(
    plan: _Plan,
    innovations: Sequence[np.ndarray],
    deep_parts: Sequence[np.ndarray],
    anchor: tuple[Sequence[np.ndarray], int] | None,
) -> list[np.ndarray]:
    K, W = plan.spec.K, plan.W
    layers: list = [None] * (K + 1)
    layers[0] = np.asarray(innovations[-1], np.uint8)
    for j in range(1, min(W, K) + 1):
        layers[j] = (np.asarray(innovations[-1 - j], np.uint8) @ plan.prod(j, 0).T) & 1
    for k, part in enumerate(deep_parts, start=1):
        layers[W + k] = np.asarray(part, np.uint8)
    if anchor is not None:
        src, delta = anchor
        for j in range(W + len(deep_parts) + 1, K + 1):
            layers[j] = (np.asarray(src[j - delta], np.uint8) @ plan.prod(j, j - delta).T) & 1
    assert all(l is not None for l in layers), "missing reconstruction dependency"
    return layers


def reconstruct_symbol(
    spec: DiagonalSourceSpec,
    B: int,
    W: int,
    innovations: Sequence[np.ndarray],
    deep_parts: Sequence[np.ndarray] = (),
    anchor: tuple[Sequence[np.ndarray], int] | None = None,
) -> list[np.ndarray]:
    """Rebuild the full symbol at time i from recovered codeword pieces.

    Args:
        innovations: the last W+1 innovation layers, times i-W .. i.
        deep_parts: codeword parts c_{i-W, 1..L}; part k lands verbatim
            as layer W+k of time i.
        anchor: (symbol_layers, delta) for layers deeper than W+L, taken
            from the full symbol at time i-delta.

    Layer j <= W comes from the innovation of time i-j pushed down j
    steps; with L = B and spec.K == B+W nothing else is needed.
    """
    plan = _Plan(spec, B, W)
    if len(innovations) != W + 1:
        raise InvalidInput("need exactly W+1 innovation layers")
    if len(deep_parts) > B:
        raise InvalidInput("more deep parts than burst slots")
    return _assemble(plan, innovations, deep_parts, anchor)


def dump_packets(stream: PacketStream, fp) -> None:
    """Write a PacketStream as JSON lines: one header, then one record
    per time with the payload hex-packed (None payload when erased)."""
    header = {
        "spec": stream.spec.to_json(),
        "B": stream.B,
        "W": stream.W,
        "n": stream.n,
        "rate_bits": stream.packet_bits,
        "seed": stream.seed,
        "T": stream.T,
    }
    fp.write(json.dumps(header) + "\n")
    for t, pkt in enumerate(stream.packets):
        rec = {"t": t, "erased": pkt is None}
        rec["payload"] = None if pkt is None else np.packbits(pkt).tobytes().hex()
        fp.write(json.dumps(rec) + "\n")


def load_packets(fp) -> PacketStream:
    """Inverse of dump_packets."""
    header = json.loads(fp.readline())
    packets: list = []
    for _ in range(int(header["T"])):
        rec = json.loads(fp.readline())
        if rec["erased"]:
            packets.append(None)
        else:
            raw = np.frombuffer(bytes.fromhex(rec["payload"]), np.uint8)
            packets.append(np.unpackbits(raw, count=int(header["rate_bits"])))
    return PacketStream(
        spec=DiagonalSourceSpec.from_json(header["spec"]),
        B=int(header["B"]),
        W=int(header["W"]),
        n=int(header["n"]),
        packet_bits=int(header["rate_bits"]),
        seed=int(header["seed"]),
        packets=packets,
    )
