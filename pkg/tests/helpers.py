"""Shared brute-force oracles used by several test modules."""

from __future__ import annotations

import itertools
import math

import numpy as np


def h_b(p: float) -> float:
    """Binary entropy in bits."""
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def entropy_of(dist: dict) -> float:
    return -sum(p * math.log2(p) for p in dist.values() if p > 0.0)


def path_marginal(chain, length: int, keep: tuple[int, ...]) -> dict:
    """Joint law of the kept time indices of (s_0, ..., s_length), by
    enumerating every path through the chain."""
    n = chain.alphabet_size
    out: dict[tuple, float] = {}
    for path in itertools.product(range(n), repeat=length + 1):
        p = chain.pi[path[0]]
        for a, b in zip(path, path[1:]):
            p *= chain.P[a, b]
        if p == 0.0:
            continue
        key = tuple(path[i] for i in keep)
        out[key] = out.get(key, 0.0) + p
    return out


def oracle_cond_entropy(chain, k: int) -> float:
    joint = path_marginal(chain, k, (0, k))
    first = path_marginal(chain, 0, (0,))
    return entropy_of(joint) - entropy_of(first)


def oracle_cond_mutual_info(chain, B: int, gap: int) -> float:
    triple = path_marginal(chain, B + gap, (0, B, B + gap))
    pair_b = path_marginal(chain, B + gap, (0, B))
    pair_c = path_marginal(chain, B + gap, (0, B + gap))
    single = path_marginal(chain, 0, (0,))
    return (
        entropy_of(pair_b)
        + entropy_of(pair_c)
        - entropy_of(triple)
        - entropy_of(single)
    )


def oracle_block_cond_entropy(chain, B: int, W: int) -> float:
    keep = (0,) + tuple(range(B + 1, B + W + 2))
    joint = path_marginal(chain, B + W + 1, keep)
    single = path_marginal(chain, 0, (0,))
    return entropy_of(joint) - entropy_of(single)


def stacked_timeline(trace) -> np.ndarray:
    """(tail_depth + T, n, total_width) array of a layered bit trace."""
    parts = []
    for j in range(len(trace.widths)):
        parts.append(np.concatenate([trace.tail[j], trace.sub[j]], axis=0))
    return np.concatenate(parts, axis=2).astype(np.uint8)


def assert_transition(trace, trans_bits, widths) -> None:
    """Check every adjacent time pair against a dense one-step transition
    (rows: layers past the innovation, cols: full previous symbol)."""
    full = stacked_timeline(trace)
    n0 = widths[0]
    got = full[1:, :, n0:]
    want = (full[:-1].astype(np.int32) @ trans_bits.T.astype(np.int32)) & 1
    assert np.array_equal(got, want.astype(np.uint8))


def diag_transition(spec) -> np.ndarray:
    """Dense transition for a layered diagonal spec."""
    rows = np.concatenate(([0], np.cumsum(spec.widths[1:])))
    cols = np.concatenate(([0], np.cumsum(spec.widths)))
    out = np.zeros((int(rows[-1]), int(cols[-1])), np.uint8)
    for j in range(1, spec.K + 1):
        out[rows[j - 1] : rows[j], cols[j - 1] : cols[j]] = spec.R[j - 1].to_bits()
    return out
