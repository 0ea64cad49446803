"""Lossy streaming of i.i.d. Gaussian samples with sliding-window targets.

The encoder quantizes each time block with a successive-refinement scalar
quantizer: one uniform grid per sample, nested so that dropping the finest
digits leaves a coarser but still valid quantizer.  Digits are split into
layers sized by the per-layer rate increments, the layers are rearranged
into a layered linear bit source (fresh finest digits enter at the top,
coarser suffixes drain diagonally), and that bit source rides the same
burst-robust transport as any other layered source.  After a burst of up
to B packet losses the decoder resumes at full quality W+1 packets later,
while older samples remain reconstructable at the coarser targets.

Two transports are available: "ideal" tracks which digit blocks each
packet carries and delivers them verbatim (delivery bookkeeping only),
"binned" actually hashes the rearranged bit source into packets and runs
the streaming decoder, so every delivered bit is solved from the hashes.

Subtractive dither is drawn uniform over the *coarsest* cell of each
sample's grid.  Because every finer step divides the coarsest one exactly,
the reconstruction error at every layer is uniform over that layer's cell,
giving mean squared error step^2/12 independent of the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import channel
from .errors import InvalidInput, InvariantViolation, PatternViolation
from .prospicient import decode_stream, design_bincode, encode
from .rates import diagonal_rate, gaussian_rate
from .sources import DiagonalSourceSpec, StreamTrace
from . import gf2

# multiplicative gap of dithered uniform quantization over the rate-distortion
# bound; per-lag budgets in reports are gap * target
QUANT_GAP = math.pi * math.e / 6.0

_TIME_MASK = (1 << 63) - 1


def normalize_distortions(d: Sequence[float], B: int, W: int) -> tuple[float, ...]:
    """Pad or truncate a lag-distortion vector to exactly B + W + 1 lags.

    Lags beyond the window the transport can serve are dropped (they are
    met for free by the deeper layers); missing lags are padded with 1.0,
    i.e. no requirement beyond the variance.
    """
    if B < 0 or W < 0:
        raise InvalidInput("B and W must be nonnegative")
    vals = [float(x) for x in d]
    if not vals:
        raise InvalidInput("distortion vector must be non-empty")
    if any(not 0.0 < x <= 1.0 for x in vals):
        raise InvalidInput("distortions must lie in (0, 1]")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise InvalidInput("distortions must be nondecreasing")
    want = B + W + 1
    vals = vals[:want] + [1.0] * (want - len(vals))
    return tuple(vals)


@dataclass(frozen=True)
class LayerRates:
    """Per-layer rate split for the layered Gaussian scheme.

    ``lag_targets`` are the normalized per-lag distortions; ``layer_targets``
    the distortion each layer suffix must reach (layer 0 = full quality,
    layer j >= 1 = quality at lag W + j).  ``tilde`` holds the incremental
    bits per sample each layer contributes and ``cumulative`` the bits per
    sample carried by the suffix from each layer down.
    """

    B: int
    W: int
    lag_targets: tuple[float, ...]
    layer_targets: tuple[float, ...]
    tilde: tuple[float, ...]
    cumulative: tuple[float, ...]

    @property
    def total(self) -> float:
        """Transported bits per sample: full suffix once, deep suffixes
        amortized over the W+1 packets that repeat them."""
        return self.cumulative[0] + sum(self.cumulative[1:]) / (self.W + 1)


def layer_rates(d: Sequence[float], B: int, W: int) -> LayerRates:
    """Split the target distortions into per-layer rate increments."""
    lag = normalize_distortions(d, B, W)
    layer = (lag[0],) + tuple(lag[W + k] for k in range(1, B + 1))
    cumulative = tuple(0.5 * math.log2(1.0 / x) for x in layer)
    tilde = tuple(
        cumulative[j] - (cumulative[j + 1] if j < B else 0.0) for j in range(B + 1)
    )
    if any(t < -1e-12 for t in tilde):
        raise InvariantViolation("layer rate increments must be nonnegative")
    return LayerRates(
        B=B,
        W=W,
        lag_targets=lag,
        layer_targets=layer,
        tilde=tuple(max(0.0, t) for t in tilde),
        cumulative=cumulative,
    )


def rate_grid(
    rates: LayerRates, max_denominator: int = 64, tol: float = 1e-6
) -> tuple[int, tuple[Fraction, ...]]:
    """Smallest group size m such that every layer contributes an integer
    number of bits per m samples.  Requires the rate increments to be
    rational with small denominators; otherwise no fixed-rate digit layout
    exists and the caller should adjust the targets.  The snap tolerance
    forgives targets given to a few decimal places while still rejecting
    rates that genuinely miss every coarse grid."""
    fracs = []
    for t in rates.tilde:
        fr = Fraction(t).limit_denominator(max_denominator)
        if abs(float(fr) - t) > tol:
            raise InvalidInput(
                "layer rates have no exact rational grid with denominator "
                f"<= {max_denominator}; adjust the distortion targets"
            )
        fracs.append(fr)
    m = math.lcm(*(fr.denominator for fr in fracs)) if fracs else 1
    if m > max_denominator:
        raise InvalidInput(
            f"rational grid needs {m} samples per group, above the cap "
            f"{max_denominator}; adjust the distortion targets"
        )
    return m, tuple(fracs)


@dataclass(eq=False)
class SRCodec:
    """Successive-refinement dithered quantizer on a fixed digit layout.

    Samples are processed in groups of ``group``; within a group, each
    layer's fractional bits-per-sample become an exact integer bit count,
    spread over the group with a rotating remainder so no position is
    systematically starved.  The coarsest layer that carries any rate (the
    ``carrier``) stores whole grid indices over a clamped range; finer
    layers store power-of-two refinement digits.
    """

    rates: LayerRates
    group: int
    fracs: tuple[Fraction, ...]
    gamma: float
    clamp: float
    carrier: int | None
    refine_bits: np.ndarray = field(repr=False)  # (B+1, group) bits per slot
    below: np.ndarray = field(repr=False)  # bits finer than each layer
    step0: np.ndarray = field(repr=False)  # finest step per slot
    levels: np.ndarray = field(repr=False)  # carrier level count per slot
    shift: np.ndarray = field(repr=False)  # carrier index offset per slot
    group_bits: tuple[int, ...] = ()  # wire bits per group, per layer

    @property
    def carrier_step(self) -> np.ndarray:
        if self.carrier is None:
            return np.zeros(self.group)
        return self.step0 * 2.0 ** self.below[self.carrier]

    def layer_widths(self, n: int) -> tuple[int, ...]:
        """Wire bits per layer for an n-sample block."""
        g = self._groups(n)
        return tuple(g * b for b in self.group_bits)

    def block_offsets(self, n: int) -> tuple[int, ...]:
        w = self.layer_widths(n)
        offs = [0]
        for x in w:
            offs.append(offs[-1] + x)
        return tuple(offs)

    def _groups(self, n: int) -> int:
        if n < 1 or n % self.group:
            raise InvalidInput(
                f"sample count must be a positive multiple of the group size {self.group}"
            )
        return n // self.group

    def _dither(self, n: int, time: int, seed: int) -> np.ndarray:
        """Per-sample dither, uniform over the coarsest cell of each slot."""
        g = n // self.group
        if self.carrier is None:
            return np.zeros((g, self.group))
        rng = np.random.default_rng([0xD17, seed, time & _TIME_MASK])
        return (rng.random((g, self.group)) - 0.5) * self.carrier_step


def sr_codec(rates: LayerRates, *, gamma: float = 0.9, clamp: float = 5.0) -> SRCodec:
    """Design the quantizer for a rate split.

    ``gamma`` is the safety factor applied to the per-layer error budgets
    (gap * target); ``clamp`` bounds the representable range in standard
    deviations.  The per-slot steps are chosen so every layer's modelled
    error (step^2/12, exact under the dither) sits inside its budget.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidInput("safety factor must lie in (0, 1)")
    if clamp <= 0.0:
        raise InvalidInput("clamp must be positive")
    m, fracs = rate_grid(rates)
    B = rates.B
    carrier = None
    for j in range(B, -1, -1):
        if rates.layer_targets[j] < 1.0 - 1e-12:
            carrier = j
            break
    refine = np.zeros((B + 1, m), dtype=np.int64)
    if carrier is not None:
        ptr = 0
        for j in range(carrier):
            bits = int(fracs[j] * m)
            base, rem = divmod(bits, m)
            refine[j, :] = base
            refine[j, (ptr + np.arange(rem)) % m] += 1
            ptr = (ptr + rem) % m
    below = np.zeros((B + 1, m), dtype=np.int64)
    for j in range(1, B + 1):
        below[j] = below[j - 1] + refine[j - 1]

    if carrier is None:
        step0 = np.zeros(m)
        levels = np.zeros(m, dtype=np.int64)
        shift = np.zeros(m, dtype=np.int64)
        group_bits = (0,) * (B + 1)
    else:
        budgets = np.array(
            [QUANT_GAP * rates.layer_targets[j] for j in range(carrier + 1)]
        )
        expo = 4.0 ** below[: carrier + 1]  # variance growth per layer
        shape = 1.0 / np.max(expo / budgets[:, None], axis=0)
        kappa = gamma * np.min(budgets / (expo * shape[None, :]).mean(axis=1))
        step0 = np.sqrt(12.0 * kappa * shape)
        cstep = step0 * 2.0 ** below[carrier]
        fmax = np.floor((clamp + cstep / 2) / cstep).astype(np.int64)
        fmin = np.floor(-(clamp + cstep / 2) / cstep).astype(np.int64)
        levels = fmax - fmin + 1
        shift = -fmin
        span = math.prod(int(x) for x in levels)
        gbits = (span - 1).bit_length() if span > 1 else 0
        group_bits = tuple(
            int(fracs[j] * m) if j < carrier else (gbits if j == carrier else 0)
            for j in range(B + 1)
        )
    return SRCodec(
        rates=rates,
        group=m,
        fracs=fracs,
        gamma=gamma,
        clamp=clamp,
        carrier=carrier,
        refine_bits=refine,
        below=below,
        step0=step0,
        levels=levels,
        shift=shift,
        group_bits=group_bits,
    )


def _bits_msb(vals: np.ndarray, width: int) -> np.ndarray:
    """(g,) nonnegative ints -> (g, width) uint8, most significant first."""
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((vals.astype(np.uint64)[:, None] >> shifts) & 1).astype(np.uint8)


def _ints_msb(bits: np.ndarray) -> np.ndarray:
    """(g, width) bits -> (g,) uint64 values, inverse of _bits_msb."""
    if bits.shape[1] == 0:
        return np.zeros(bits.shape[0], dtype=np.uint64)
    weights = np.uint64(1) << np.arange(bits.shape[1] - 1, -1, -1, dtype=np.uint64)
    return bits.astype(np.uint64) @ weights


def _pack_mixed_radix(idx: np.ndarray, radices: np.ndarray, width: int) -> np.ndarray:
    """Pack per-slot indices (g, m) with per-slot radices into width-bit rows."""
    g = idx.shape[0]
    if width == 0:
        return np.zeros((g, 0), np.uint8)
    span = math.prod(int(x) for x in radices)
    if span <= 1 << 62:
        v = np.zeros(g, dtype=np.uint64)
        for s in range(idx.shape[1]):
            v = v * np.uint64(radices[s]) + idx[:, s].astype(np.uint64)
        return _bits_msb(v, width)
    out = np.zeros((g, width), np.uint8)
    for i in range(g):
        v = 0
        for s in range(idx.shape[1]):
            v = v * int(radices[s]) + int(idx[i, s])
        for b in range(width):
            out[i, width - 1 - b] = (v >> b) & 1
    return out


def _unpack_mixed_radix(bits: np.ndarray, radices: np.ndarray) -> np.ndarray:
    """Inverse of _pack_mixed_radix: (g, width) bits -> (g, m) indices."""
    g, width = bits.shape
    m = len(radices)
    out = np.zeros((g, m), dtype=np.int64)
    span = math.prod(int(x) for x in radices)
    if span <= 1 << 62:
        v = _ints_msb(bits)
        for s in range(m - 1, -1, -1):
            out[:, s] = (v % np.uint64(radices[s])).astype(np.int64)
            v //= np.uint64(radices[s])
        return out
    for i in range(g):
        v = 0
        for b in range(width):
            v = (v << 1) | int(bits[i, b])
        for s in range(m - 1, -1, -1):
            out[i, s] = v % int(radices[s])
            v //= int(radices[s])
    return out


def sr_encode(
    codec: SRCodec, samples: np.ndarray, *, time: int = 0, seed: int = 0
) -> np.ndarray:
    """Quantize one time block into its layered digit bits.

    Returns the concatenated per-layer bit blocks (finest first) as a flat
    uint8 array; slicing off the first k blocks leaves exactly the bits a
    decoder needs for quality at lag W + k.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput("samples must be a 1-D array")
    n = x.shape[0]
    g = codec._groups(n)
    if codec.carrier is None:
        return np.zeros(0, np.uint8)
    u = codec._dither(n, time, seed)
    w = np.clip(x, -codec.clamp, codec.clamp).reshape(g, codec.group) + u
    f = np.floor(w / codec.step0[None, :]).astype(np.int64)
    blocks: list[np.ndarray] = []
    for j in range(codec.carrier):
        rho = (1 << codec.refine_bits[j]).astype(np.int64)
        digits = np.mod(f, rho[None, :])
        f = np.floor_divide(f, rho[None, :])
        cols = [
            _bits_msb(digits[:, s], int(codec.refine_bits[j, s]))
            for s in range(codec.group)
            if codec.refine_bits[j, s]
        ]
        block = np.concatenate(cols, axis=1) if cols else np.zeros((g, 0), np.uint8)
        blocks.append(block.ravel())
    fmax = codec.levels - codec.shift - 1
    idx = np.clip(f, -codec.shift, fmax) + codec.shift
    blocks.append(
        _pack_mixed_radix(idx, codec.levels, codec.group_bits[codec.carrier]).ravel()
    )
    blocks.extend(np.zeros(0, np.uint8) for _ in range(codec.carrier + 1, codec.rates.B + 1))
    return np.concatenate(blocks) if blocks else np.zeros(0, np.uint8)


def sr_decode(
    codec: SRCodec,
    bits: np.ndarray,
    *,
    n: int,
    from_layer: int = 0,
    time: int = 0,
    seed: int = 0,
) -> np.ndarray:
    """Reconstruct a time block from the digit suffix starting at a layer.

    ``bits`` must be the concatenation of the layer blocks from
    ``from_layer`` down to the coarsest; quality matches the layer's
    target (full quality for layer 0, lag W + k quality for layer k).
    """
    if not 0 <= from_layer <= codec.rates.B:
        raise InvalidInput("layer index out of range")
    g = codec._groups(n)
    widths = codec.layer_widths(n)
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.shape[0] != sum(widths[from_layer:]):
        raise InvalidInput("bit count does not match the layer suffix width")
    if codec.carrier is None or from_layer > codec.carrier:
        return np.zeros(n)
    offs = [0]
    for wdt in widths[from_layer:]:
        offs.append(offs[-1] + wdt)
    local = lambda j: slice(offs[j - from_layer], offs[j - from_layer + 1])
    carrier_bits = bits[local(codec.carrier)].reshape(g, -1)
    f = _unpack_mixed_radix(carrier_bits, codec.levels) - codec.shift[None, :]
    for j in range(codec.carrier - 1, from_layer - 1, -1):
        block = bits[local(j)].reshape(g, -1)
        digits = np.zeros((g, codec.group), dtype=np.int64)
        col = 0
        for s in range(codec.group):
            width = int(codec.refine_bits[j, s])
            if width:
                digits[:, s] = _ints_msb(block[:, col : col + width]).astype(np.int64)
                col += width
        f = f * (1 << codec.refine_bits[j])[None, :].astype(np.int64) + digits
    u = codec._dither(n, time, seed)
    step = codec.step0 * 2.0 ** codec.below[from_layer]
    return ((f + 0.5) * step[None, :] - u).ravel()


def layer_rearrange(
    codec: SRCodec, blocks: np.ndarray, *, lead: int | None = None
) -> tuple[DiagonalSourceSpec, StreamTrace]:
    """Rearrange per-time digit blocks into a layered linear bit source.

    ``blocks`` holds one encoded row per time for times [-lead, T); the
    default lead of 2(B+W) is exactly what the deepest layer of the
    earliest revealed tail time reaches back to.  Layer l <= W of the
    result repeats the full digit block from l steps ago; layer W + k
    carries the coarse suffix from W + k steps ago, so each inter-layer
    map is either an identity or a projection that drops one finer block
    -- full row rank either way.
    """
    B, W = codec.rates.B, codec.rates.W
    K = B + W
    blk = np.asarray(blocks, dtype=np.uint8)
    if blk.ndim != 2:
        raise InvalidInput("blocks must be a (times, bits) array")
    lead = 2 * K if lead is None else int(lead)
    if lead < 2 * K:
        raise InvalidInput(f"need at least {2 * K} lead-in blocks before time zero")
    T = blk.shape[0] - lead
    if T < 0:
        raise InvalidInput("not enough blocks for the lead-in")
    total = blk.shape[1]
    n = total * codec.group // sum(codec.group_bits) if sum(codec.group_bits) else codec.group
    offs = codec.block_offsets(n)
    if total != offs[-1]:
        raise InvalidInput("block width does not match the codec layout")
    spec = source_spec(codec, n)
    sub: list[np.ndarray] = []
    tail: list[np.ndarray] = []
    for ell in range(W + 1):
        rows = blk[lead - ell : lead - ell + T]
        sub.append(rows[:, None, :])
        tail.append(blk[lead - K - ell : lead - ell][:, None, :])
    for k in range(1, B + 1):
        rows = blk[lead - W - k : lead - W - k + T, offs[k] :]
        sub.append(rows[:, None, :])
        tail.append(blk[lead - K - W - k : lead - W - k][:, None, offs[k] :])
    trace = StreamTrace(
        kind="diagonal",
        n=1,
        T=T,
        widths=spec.widths,
        sub=sub,
        tail=[t.copy() for t in tail],
        meta={"group": codec.group},
    )
    return spec, trace


def source_spec(codec: SRCodec, n: int) -> DiagonalSourceSpec:
    """Layered-source description of the rearranged digit stream."""
    B, W = codec.rates.B, codec.rates.W
    widths = codec.layer_widths(n)
    offs = codec.block_offsets(n)
    total = offs[-1]
    layer_w = [total] * (W + 1) + [total - offs[k] for k in range(1, B + 1)]
    maps: list[gf2.BitMatrix] = []
    for _ in range(W):
        maps.append(gf2.BitMatrix.identity(total))
    prev = total
    for k in range(1, B + 1):
        rows = total - offs[k]
        maps.append(gf2.BitMatrix.from_bits(np.eye(rows, prev, prev - rows, dtype=np.uint8)))
        prev = rows
    return DiagonalSourceSpec(widths=tuple(layer_w), R=tuple(maps))


def expected_delivery(t: int, B: int, W: int) -> tuple[tuple[int, int], ...]:
    """Digit blocks a decoder holds for output time t: the full blocks of
    the last W+1 times plus one coarse suffix per deeper lag."""
    full = tuple((t - ell, 0) for ell in range(W + 1))
    deep = tuple((t - W - k, k) for k in range(1, B + 1))
    return full + deep


def _burst_runs(erased: frozenset[int], T: int) -> list[tuple[int, int]]:
    runs: list[list[int]] = []
    for t in sorted(x for x in erased if 0 <= x < T):
        if runs and t == runs[-1][0] + runs[-1][1]:
            runs[-1][1] += 1
        else:
            runs.append([t, 1])
    return [(j, b) for j, b in runs]


def _check_pattern(runs: list[tuple[int, int]], B: int, W: int) -> None:
    if runs and B == 0:
        raise PatternViolation("erasure on a channel designed for B = 0")
    for j, b in runs:
        if b > B:
            raise PatternViolation("burst longer than the design bound B")
    for (j1, b1), (j2, _) in zip(runs, runs[1:]):
        if j2 - (j1 + b1) <= W:
            raise PatternViolation("new burst began inside the recovery window")


@dataclass
class DistortionReport:
    """Outcome of one streaming run: which times were served, with which
    digit blocks, and the per-lag error against the budgeted targets."""

    mode: str
    B: int
    W: int
    T: int
    targets: tuple[float, ...]  # normalized per-lag distortions
    skipped: tuple[int, ...]  # times inside a recovery window
    delivered: dict[int, tuple[tuple[int, int], ...]]
    mse: np.ndarray  # (T, B+W+1), NaN where not served
    lag_mse: tuple[float, ...]
    met: tuple[bool, ...]  # lag_mse <= QUANT_GAP * target
    rate: dict

    @property
    def all_met(self) -> bool:
        return all(self.met)


def gaussian_pipeline(
    d: Sequence[float],
    B: int,
    W: int,
    *,
    n: int,
    T: int,
    burst=None,
    mode: str = "ideal",
    seed: int = 0,
    delta: int = 8,
    gamma: float = 0.9,
    clamp: float = 5.0,
) -> DistortionReport:
    """Run the layered Gaussian scheme end to end and measure it.

    Parameters
    ----------
    d, B, W : targets and channel design bounds.
    n, T : samples per time block and number of streamed blocks.
    burst : None, a (start, length) pair, or an ErasurePattern.
    mode : "ideal" delivers digit blocks verbatim and only tracks which
        packets carried them; "binned" hashes the rearranged bit source
        into packets and runs the streaming decoder on what survives.
    delta : extra packet bits above the rate floor (binned accounting).
    gamma, clamp : quantizer safety factor and range, in standard deviations.

    Returns a DistortionReport; raises PatternViolation when the erasures
    break the (B, W) contract and InvariantViolation if the realized rate
    accounting drifts from the closed form.
    """
    rates_split = layer_rates(d, B, W)
    codec = sr_codec(rates_split, gamma=gamma, clamp=clamp)
    if mode not in ("ideal", "binned"):
        raise InvalidInput("mode must be 'ideal' or 'binned'")
    if T < 1:
        raise InvalidInput("need at least one time block")
    K = B + W
    lead = 2 * K
    if burst is None:
        pattern = None
    elif isinstance(burst, channel.ErasurePattern):
        pattern = burst
    else:
        start, length = burst
        pattern = channel.single_burst(int(start), int(length), T)
    erased = pattern.erased if pattern is not None else frozenset()
    runs = _burst_runs(erased, T)
    _check_pattern(runs, B, W)
    window: set[int] = set()
    for j, b in runs:
        window.update(range(j, min(j + b + W, T)))

    rng = np.random.default_rng([seed, 0])
    samples = rng.standard_normal((T + lead, n))
    blocks = np.stack(
        [sr_encode(codec, samples[r], time=r - lead, seed=seed) for r in range(T + lead)]
    )
    offs = codec.block_offsets(n)

    if mode == "ideal":
        # packet i carries the full block of time i plus one coarse suffix
        # per deeper layer; track the finest level held for every time
        best: dict[int, int] = {t: 0 for t in range(-lead, 0)}
        for i in range(T):
            if i in erased:
                continue
            for k in range(B + 1):
                prev = best.get(i - k)
                best[i - k] = k if prev is None else min(prev, k)
        served = [
            all(best.get(t - ell, B + 1) <= 0 for ell in range(W + 1))
            and all(best.get(t - W - k, B + 1) <= k for k in range(1, B + 1))
            for t in range(T)
        ]
        full_bits = lambda t, ell: blocks[lead + t - ell]
        deep_bits = lambda t, k: blocks[lead + t - W - k, offs[k] :]
    else:
        spec, trace = layer_rearrange(codec, blocks)
        bincode = design_bincode(spec, B, W, n=1, delta=delta, seed=seed)
        stream = encode(trace, spec, B, W, bincode)
        if pattern is not None:
            stream = stream.with_erasures(pattern)
        tail_symbol = [trace.tail[j][-1] for j in range(len(trace.widths))]
        outs = decode_stream(stream, bincode, tail_symbol)
        served = [out is not None for out in outs]
        for t, out in enumerate(outs):
            if out is None:
                continue
            for ell in range(W + 1):
                if not np.array_equal(out[ell][0], blocks[lead + t - ell]):
                    raise InvariantViolation(
                        f"decoded bits diverge from the encoder at time {t}"
                    )
            for k in range(1, B + 1):
                if not np.array_equal(out[W + k][0], blocks[lead + t - W - k, offs[k] :]):
                    raise InvariantViolation(
                        f"decoded bits diverge from the encoder at time {t}"
                    )
        full_bits = lambda t, ell: outs[t][ell][0]
        deep_bits = lambda t, k: outs[t][W + k][0]

    for t in range(T):
        if not served[t] and t not in window:
            raise InvariantViolation(f"time {t} undelivered outside any recovery window")

    mse = np.full((T, K + 1), np.nan)
    delivered: dict[int, tuple[tuple[int, int], ...]] = {}
    for t in range(T):
        if not served[t]:
            continue
        delivered[t] = expected_delivery(t, B, W)
        for ell in range(W + 1):
            src = t - ell
            xh = sr_decode(codec, full_bits(t, ell), n=n, from_layer=0, time=src, seed=seed)
            mse[t, ell] = float(np.mean((xh - samples[lead + src]) ** 2))
        for k in range(1, B + 1):
            src = t - W - k
            xh = sr_decode(codec, deep_bits(t, k), n=n, from_layer=k, time=src, seed=seed)
            mse[t, W + k] = float(np.mean((xh - samples[lead + src]) ** 2))

    lag_mse = tuple(
        float(np.mean(col[np.isfinite(col)])) if np.isfinite(col).any() else float("nan")
        for col in mse.T
    )
    met = tuple(
        np.isfinite(v) and v <= QUANT_GAP * tgt
        for v, tgt in zip(lag_mse, rates_split.lag_targets)
    )

    cum = [sum(codec.fracs[j:], start=Fraction(0)) for j in range(B + 1)]
    formula_widths = [n * cum[0]] * (W + 1) + [n * cum[k] for k in range(1, B + 1)]
    if any(fw.denominator != 1 for fw in formula_widths):
        raise InvariantViolation("rate grid does not divide the block length")
    formula_widths = tuple(int(fw) for fw in formula_widths)
    dr = diagonal_rate(formula_widths, B, W)
    closed = gaussian_rate(rates_split.lag_targets, B, W)
    if abs(float(dr) / n - closed) > 1e-6 * max(1.0, closed):
        raise InvariantViolation("rate accounting diverged from the closed form")
    wire_widths = tuple([offs[-1]] * (W + 1) + [offs[-1] - offs[k] for k in range(1, B + 1)])
    wire_rate = diagonal_rate(wire_widths, B, W)
    packet_bits = (
        design_bincode(source_spec(codec, n), B, W, n=1, delta=delta, seed=seed).packet_bits
        if mode == "binned"
        else math.ceil(dr) + delta
    )
    rate = {
        "group_size": codec.group,
        "per_sample": float(dr) / n,
        "closed_form": closed,
        "per_sample_wire": float(wire_rate) / n,
        "formula_widths": formula_widths,
        "wire_widths": wire_widths,
        "packet_bits": packet_bits,
        "delta": delta,
    }
    return DistortionReport(
        mode=mode,
        B=B,
        W=W,
        T=T,
        targets=rates_split.lag_targets,
        skipped=tuple(sorted(window)),
        delivered=delivered,
        mse=mse,
        lag_mse=lag_mse,
        met=met,
        rate=rate,
    )
