"""Dense linear algebra over GF(2) with machine-word packed rows.

Matrices are stored row-major, 64 columns to a ``uint64`` word, least
significant bit first.  Elimination routines work on the packed form and
process pivot columns in 64-wide stripes with byte-table batched row
updates, which keeps the cost of the big streaming-decoder solves in the
tens of milliseconds.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BitMatrix",
    "BitVector",
    "rank",
    "rref",
    "solve",
    "invert",
    "independent_rows",
]

_ONE = np.uint64(1)
_BYTE = np.uint64(0xFF)


def _n_words(cols: int) -> int:
    return (cols + 63) >> 6


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, cols) 0/1 array into (rows, n_words) uint64."""
    rows, cols = bits.shape
    nw = _n_words(cols)
    out = np.zeros((rows, nw * 8), np.uint8)
    if cols:
        packed = np.packbits(bits.astype(np.uint8, copy=False), axis=1, bitorder="little")
        out[:, : packed.shape[1]] = packed
    return out.view(np.uint64)


def _unpack_bits(words: np.ndarray, cols: int) -> np.ndarray:
    rows = words.shape[0]
    if cols == 0:
        return np.zeros((rows, 0), np.uint8)
    as_bytes = words.view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :cols]


class BitMatrix:
    """A rows x cols matrix over GF(2), packed 64 columns per word.

    Attributes:
        rows: Number of rows.
        cols: Number of columns.
        words: Backing ``uint64`` array of shape (rows, ceil(cols/64)).
    """

    __slots__ = ("rows", "cols", "words")

    def __init__(self, rows: int, cols: int, words: np.ndarray | None = None):
        if rows < 0 or cols < 0:
            raise ValueError("negative dimension")
        self.rows = rows
        self.cols = cols
        if words is None:
            words = np.zeros((rows, _n_words(cols)), np.uint64)
        self.words = words

    # -- construction ---------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BitMatrix":
        return cls(rows, cols)

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        m = cls(n, n)
        for i in range(n):
            m.words[i, i >> 6] = _ONE << np.uint64(i & 63)
        return m

    @classmethod
    def from_bits(cls, bits) -> "BitMatrix":
        """Build from any 2-D array-like of 0/1 entries."""
        arr = np.asarray(bits, dtype=np.uint8) & 1
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array of bits")
        return cls(arr.shape[0], arr.shape[1], _pack_bits(arr))

    @classmethod
    def random(cls, rows: int, cols: int, rng: np.random.Generator) -> "BitMatrix":
        if rows == 0 or cols == 0:
            return cls(rows, cols)
        return cls.from_bits(rng.integers(0, 2, (rows, cols), dtype=np.uint8))

    # -- inspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_bits(self) -> np.ndarray:
        """Return a (rows, cols) uint8 array of the matrix entries."""
        return _unpack_bits(self.words, self.cols)

    def bit(self, i: int, j: int) -> int:
        return int((self.words[i, j >> 6] >> np.uint64(j & 63)) & _ONE)

    def set_bit(self, i: int, j: int, value: int) -> None:
        mask = _ONE << np.uint64(j & 63)
        if value & 1:
            self.words[i, j >> 6] |= mask
        else:
            self.words[i, j >> 6] &= ~mask

    def is_zero(self) -> bool:
        return not self.words.any()

    def copy(self) -> "BitMatrix":
        return BitMatrix(self.rows, self.cols, self.words.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and bool(np.array_equal(self.words, other.words))
        )

    def __hash__(self):  # pragma: no cover - mutable, not hashable
        raise TypeError("BitMatrix is mutable and unhashable")

    def __repr__(self) -> str:
        return f"BitMatrix({self.rows}x{self.cols})"

    # -- algebra ---------------------------------------------------------

    def __xor__(self, other: "BitMatrix") -> "BitMatrix":
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return BitMatrix(self.rows, self.cols, self.words ^ other.words)

    def __matmul__(self, other: "BitMatrix") -> "BitMatrix":
        if self.cols != other.rows:
            raise ValueError("inner dimension mismatch")
        if self.rows == 0 or other.cols == 0:
            return BitMatrix(self.rows, other.cols)
        if self.cols == 0:
            return BitMatrix.zeros(self.rows, other.cols)
        # Small products go through a dense integer matmul; large ones use
        # packed AND + popcount against the transposed right factor.
        if self.rows * self.cols * other.cols <= (1 << 22):
            prod = (
                self.to_bits().astype(np.int64) @ other.to_bits().astype(np.int64)
            ) & 1
            return BitMatrix.from_bits(prod)
        bt = other.transpose()
        out = np.zeros((self.rows, other.cols), np.uint8)
        for i in range(self.rows):
            anded = bt.words & self.words[i]
            out[i] = (np.bitwise_count(anded).sum(axis=1) & 1).astype(np.uint8)
        return BitMatrix.from_bits(out)

    def mul_vec(self, vec: "BitVector") -> "BitVector":
        """Matrix-vector product over GF(2)."""
        if vec.n != self.cols:
            raise ValueError("dimension mismatch")
        if self.cols == 0:
            return BitVector.zeros(self.rows)
        parity = np.bitwise_count(self.words & vec.words).sum(axis=1) & 1
        return BitVector.from_bits(parity.astype(np.uint8))

    def transpose(self) -> "BitMatrix":
        return BitMatrix.from_bits(self.to_bits().T)

    def take_rows(self, idx) -> "BitMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return BitMatrix(len(idx), self.cols, self.words[idx].copy())

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        """Return the {"rows", "cols", "data"} dict form; rows as '01' strings."""
        bits = self.to_bits()
        data = ["".join("1" if b else "0" for b in row) for row in bits]
        return {"rows": self.rows, "cols": self.cols, "data": data}

    @classmethod
    def from_json(cls, obj: dict) -> "BitMatrix":
        rows, cols = int(obj["rows"]), int(obj["cols"])
        data = obj["data"]
        if len(data) != rows or any(len(s) != cols for s in data):
            raise ValueError("malformed matrix payload")
        bits = np.zeros((rows, cols), np.uint8)
        for i, s in enumerate(data):
            for j, ch in enumerate(s):
                if ch == "1":
                    bits[i, j] = 1
                elif ch != "0":
                    raise ValueError("malformed matrix payload")
        return cls.from_bits(bits)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "BitMatrix":
        return cls.from_json(json.loads(text))


def hstack(mats: Sequence[BitMatrix]) -> BitMatrix:
    rows = mats[0].rows
    if any(m.rows != rows for m in mats):
        raise ValueError("row count mismatch")
    return BitMatrix.from_bits(np.concatenate([m.to_bits() for m in mats], axis=1))


def vstack(mats: Sequence[BitMatrix]) -> BitMatrix:
    cols = mats[0].cols
    if any(m.cols != cols for m in mats):
        raise ValueError("column count mismatch")
    return BitMatrix.from_bits(np.concatenate([m.to_bits() for m in mats], axis=0))


class BitVector:
    """A length-n bit vector packed into uint64 words (LSB-first)."""

    __slots__ = ("n", "words")

    def __init__(self, n: int, words: np.ndarray | None = None):
        self.n = n
        if words is None:
            words = np.zeros(_n_words(n), np.uint64)
        self.words = words

    @classmethod
    def zeros(cls, n: int) -> "BitVector":
        return cls(n)

    @classmethod
    def from_bits(cls, bits) -> "BitVector":
        arr = np.asarray(bits, dtype=np.uint8).ravel() & 1
        return cls(arr.size, _pack_bits(arr[None, :])[0])

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "BitVector":
        if n == 0:
            return cls(0)
        return cls.from_bits(rng.integers(0, 2, n, dtype=np.uint8))

    def to_bits(self) -> np.ndarray:
        return _unpack_bits(self.words[None, :], self.n)[0]

    def bit(self, i: int) -> int:
        return int((self.words[i >> 6] >> np.uint64(i & 63)) & _ONE)

    def __xor__(self, other: "BitVector") -> "BitVector":
        if self.n != other.n:
            raise ValueError("length mismatch")
        return BitVector(self.n, self.words ^ other.words)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.words, other.words))

    def __hash__(self):  # pragma: no cover
        raise TypeError("BitVector is mutable and unhashable")

    def __repr__(self) -> str:
        return f"BitVector(n={self.n})"

    def to_hex(self) -> str:
        """Hex encoding of the packed little-endian byte payload."""
        nbytes = (self.n + 7) >> 3
        return self.words.tobytes()[:nbytes].hex()

    @classmethod
    def from_hex(cls, text: str, n: int) -> "BitVector":
        raw = bytes.fromhex(text)
        if len(raw) != (n + 7) >> 3:
            raise ValueError("payload length mismatch")
        buf = np.zeros(_n_words(n) * 8, np.uint8)
        buf[: len(raw)] = np.frombuffer(raw, np.uint8)
        vec = cls(n, buf.view(np.uint64))
        if int(np.bitwise_count(vec.words).sum()) != int(vec.to_bits().sum()):
            raise ValueError("stray bits beyond payload length")
        return vec


def concat_vecs(vecs: Iterable[BitVector]) -> BitVector:
    parts = [v.to_bits() for v in vecs]
    if not parts:
        return BitVector.zeros(0)
    return BitVector.from_bits(np.concatenate(parts))


# ---------------------------------------------------------------------------
# elimination kernel
# ---------------------------------------------------------------------------


def _forward_eliminate(words: np.ndarray, n_cols: int, max_cols: int | None = None):
    """In-place forward elimination to row-echelon form.

    Pivot columns are scanned left to right in 64-column stripes.  Row
    updates for each stripe are batched: the combination every row needs
    (over the stripe's finished pivot rows) is tracked as a 64-bit mask and
    applied to the trailing words with 256-entry XOR tables.

    On return the first ``rank`` rows of ``words`` hold the echelon rows in
    pivot order.  Returns (rank, pivot_columns).
    """
    m, nw = words.shape
    if max_cols is None:
        max_cols = n_cols
    rank = 0
    pivot_cols: list[int] = []
    n_stripes = (max_cols + 63) >> 6
    for s in range(n_stripes):
        if rank >= m:
            break
        hi = min(64, max_cols - (s << 6))
        act = words[rank:]
        nact = act.shape[0]
        col = act[:, s].copy()
        dep = np.zeros(nact, np.uint64)
        taken = np.zeros(nact, bool)
        prows: list[int] = []
        piv_words: list[int] = []
        dep_masks: list[int] = []
        stripe_piv_cols: list[int] = []
        # taken rows have their stripe word zeroed in `col` (stashed in
        # piv_words) so they drop out of the scans without an extra mask
        for b in range(hi):
            nz = np.nonzero((col >> np.uint64(b)) & _ONE)[0]
            if nz.size == 0:
                continue
            sel = int(nz[0])
            dsel = int(dep[sel])
            dep_masks.append(dsel)
            idx = nz[1:]
            if idx.size:
                col[idx] ^= col[sel]
                dep[idx] ^= np.uint64(dsel ^ (1 << len(prows)))
            piv_words.append(int(col[sel]))
            col[sel] = 0
            taken[sel] = True
            prows.append(sel)
            stripe_piv_cols.append((s << 6) + b)
        npiv = len(prows)
        if npiv == 0:
            continue
        wtrail = nw - (s + 1)
        if wtrail > 0:
            raw = act[prows, s + 1 :]
            # tables over the raw pivot rows, 8 pivots per table
            nbytes = (npiv + 7) >> 3
            tables = []
            for t in range(nbytes):
                cnt = min(8, npiv - (t << 3))
                tab = np.zeros((1 << cnt, wtrail), np.uint64)
                size = 1
                for r_ in raw[t << 3 : (t << 3) + cnt]:
                    tab[size : 2 * size] = tab[:size] ^ r_
                    size <<= 1
                tables.append(tab)
            # frozen content of the pivot rows themselves (each mask is a
            # combination over the raw rows, plus the row's own raw content)
            piv_masks = np.array(
                [dep_masks[k] ^ (1 << k) for k in range(npiv)], np.uint64
            )
            frozen = tables[0][(piv_masks & _BYTE).astype(np.int64)]
            for t in range(1, nbytes):
                frozen ^= tables[t][((piv_masks >> np.uint64(t << 3)) & _BYTE).astype(np.int64)]
            act[prows, s + 1 :] = frozen
            # batched update of every remaining row that needs one
            upd_idx = np.nonzero((~taken) & (dep != 0))[0]
            if upd_idx.size:
                d = dep[upd_idx]
                upd = tables[0][(d & _BYTE).astype(np.int64)]
                for t in range(1, nbytes):
                    upd ^= tables[t][((d >> np.uint64(t << 3)) & _BYTE).astype(np.int64)]
                act[upd_idx, s + 1 :] ^= upd
        col[prows] = np.array(piv_words, np.uint64)
        act[:, s] = col
        # move the stripe's pivot rows into the next `npiv` settled slots,
        # keeping them in pivot-column order; displaced rows take the slots
        # the pivots vacate
        psrc = np.array(prows)
        if not np.array_equal(psrc, np.arange(npiv)):
            displaced = np.nonzero(~taken[:npiv])[0]
            vacated = psrc[psrc >= npiv]
            moved = act[psrc].copy()
            disp = act[displaced].copy()
            act[vacated] = disp
            act[:npiv] = moved
        pivot_cols.extend(stripe_piv_cols)
        rank += npiv
    return rank, pivot_cols


def _back_substitute(
    words: np.ndarray, pivot_cols: list[int], n_cols: int, rhs_cols: int
) -> np.ndarray:
    """Solve the echelon system for the appended RHS columns (free vars 0).

    ``words`` holds [A | B] in echelon form with ``len(pivot_cols)`` pivot
    rows on top; returns X (n_cols x rhs_cols, uint8) with A X = B.
    """
    rank = len(pivot_cols)
    b = _unpack_bits(words[:rank], n_cols + rhs_cols)[:, n_cols:].copy()
    x = np.zeros((n_cols, rhs_cols), np.uint8)
    if rank == 0:
        return x
    # group pivots by the word their column lives in and sweep right to left;
    # each group does a tiny in-word triangular solve, then one masked
    # popcount per RHS column folds its contribution into the rows above
    groups: list[tuple[int, int, int]] = []  # (word index, k_lo, k_hi)
    k = 0
    while k < rank:
        wi = pivot_cols[k] >> 6
        k_hi = k
        while k_hi < rank and (pivot_cols[k_hi] >> 6) == wi:
            k_hi += 1
        groups.append((wi, k, k_hi))
        k = k_hi
    for wi, k_lo, k_hi in reversed(groups):
        gcol = words[:k_hi, wi]
        rows_int = [int(v) for v in gcol[k_lo:k_hi]]
        for j in range(rhs_cols):
            xmask = 0
            for k in range(k_hi - 1, k_lo - 1, -1):
                c = pivot_cols[k]
                val = int(b[k, j]) ^ ((rows_int[k - k_lo] & xmask).bit_count() & 1)
                if val:
                    xmask |= 1 << (c & 63)
                    x[c, j] = 1
            if xmask and k_lo:
                xm = np.uint64(xmask)
                b[:k_lo, j] ^= (np.bitwise_count(gcol[:k_lo] & xm) & np.uint8(1)).astype(
                    np.uint8
                )
    return x


def rank(m: BitMatrix) -> int:
    """Matrix rank over GF(2)."""
    w = m.words.copy()
    r, _ = _forward_eliminate(w, m.cols)
    return r


def rref(m: BitMatrix) -> tuple[BitMatrix, tuple[int, ...]]:
    """Reduced row-echelon form.

    Returns:
        (R, pivots): R has the same shape as ``m``; ``pivots`` is the tuple
        of pivot column indices, one per nonzero row of R.
    """
    w = m.words.copy()
    r, pivots = _forward_eliminate(w, m.cols)
    # clear entries above every pivot
    for k in range(r):
        c = pivots[k]
        wi, bi = c >> 6, np.uint64(c & 63)
        colbits = (w[:k, wi] >> bi) & _ONE
        idx = np.nonzero(colbits)[0]
        if idx.size:
            w[idx] ^= w[k]
    return BitMatrix(m.rows, m.cols, w), tuple(pivots)


def solve(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    """Solve A X = B over GF(2), setting free variables to zero.

    Args:
        a: Coefficient matrix (r x n).
        b: Right-hand side (r x k).

    Returns:
        X of shape (n x k).

    Raises:
        ValueError: If the system is inconsistent.
    """
    if a.rows != b.rows:
        raise ValueError("row count mismatch")
    aug = hstack([a, b]) if a.cols and b.cols else None
    if aug is None:
        if a.cols == 0:
            # only the zero map is available; B must be zero
            if not b.is_zero():
                raise ValueError("inconsistent system")
            return BitMatrix.zeros(0, b.cols)
        return BitMatrix.zeros(a.cols, 0)
    w = aug.words.copy()
    r, pivots = _forward_eliminate(w, aug.cols, max_cols=a.cols)
    # any leftover row must not constrain the RHS
    tail = _unpack_bits(w[r:], aug.cols)
    if tail[:, a.cols :].any():
        raise ValueError("inconsistent system")
    x = _back_substitute(w, pivots, a.cols, b.cols)
    return BitMatrix.from_bits(x)


def solve_unique(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    """Solve A X = B over GF(2), insisting the solution is unique.

    Same contract as :func:`solve` except that A must have full column
    rank, i.e. there must be exactly one X.

    Raises:
        ValueError: "underdetermined" if A is column-rank deficient,
            "inconsistent system" if no solution exists.
    """
    if a.rows != b.rows:
        raise ValueError("row count mismatch")
    if a.cols == 0:
        if not b.is_zero():
            raise ValueError("inconsistent system")
        return BitMatrix.zeros(0, b.cols)
    if a.rows < a.cols:
        raise ValueError("underdetermined")
    aug = hstack([a, b]) if b.cols else a
    w = aug.words.copy()
    r, pivots = _forward_eliminate(w, aug.cols, max_cols=a.cols)
    if len(pivots) < a.cols:
        raise ValueError("underdetermined")
    tail = _unpack_bits(w[r:], aug.cols)
    if tail[:, a.cols :].any():
        raise ValueError("inconsistent system")
    x = _back_substitute(w, pivots, a.cols, b.cols)
    return BitMatrix.from_bits(x)


class PrefactoredSolver:
    """Reusable unique-solution solver for a fixed coefficient matrix.

    Eliminating ``[A | I]`` once splits the row operations into a solve
    map S (x = S b when A has full column rank) and a residual map C
    (C b == 0 exactly when the system is consistent), so every further
    right-hand side costs two packed matrix-vector products instead of
    a fresh elimination.
    """

    __slots__ = ("rows", "cols", "rank", "_solve_map", "_check_map")

    def __init__(self, a: BitMatrix) -> None:
        self.rows, self.cols = a.rows, a.cols
        ident = BitMatrix.identity(a.rows)
        aug = hstack([a, ident]) if a.cols else ident
        w = aug.words.copy()
        r, pivots = _forward_eliminate(w, aug.cols, max_cols=a.cols)
        # clear above the pivots: with full column rank the A-part of the
        # pivot rows becomes the identity and the I-part is the solve map
        for k in range(r):
            c = pivots[k]
            wi, bi = c >> 6, np.uint64(c & 63)
            colbits = (w[:k, wi] >> bi) & _ONE
            idx = np.nonzero(colbits)[0]
            if idx.size:
                w[idx] ^= w[k]
        self.rank = r
        ops = _unpack_bits(w, aug.cols)[:, a.cols :]
        self._solve_map = BitMatrix.from_bits(ops[:r])
        self._check_map = BitMatrix.from_bits(ops[r:])

    def solve_unique(self, b) -> np.ndarray:
        """Solve A x = b for one right-hand side.

        Args:
            b: Bit vector of length ``rows`` (any 0/1 array-like).

        Returns:
            x as a uint8 bit vector of length ``cols``.

        Raises:
            ValueError: "underdetermined" if A lacks full column rank,
                "inconsistent system" if b is outside A's column space,
                "row count mismatch" on a wrong-length b.
        """
        vec = BitVector.from_bits(b)
        if vec.n != self.rows:
            raise ValueError("row count mismatch")
        if self.rank < self.cols:
            raise ValueError("underdetermined")
        if self._check_map.mul_vec(vec).words.any():
            raise ValueError("inconsistent system")
        return self._solve_map.mul_vec(vec).to_bits()


def invert(m: BitMatrix) -> BitMatrix:
    """Inverse of a square matrix; raises ValueError("singular") otherwise."""
    if m.rows != m.cols:
        raise ValueError("singular")
    if m.rows == 0:
        return BitMatrix.zeros(0, 0)
    aug = hstack([m, BitMatrix.identity(m.rows)])
    w = aug.words.copy()
    r, pivots = _forward_eliminate(w, aug.cols, max_cols=m.cols)
    if r < m.rows:
        raise ValueError("singular")
    x = _back_substitute(w, pivots, m.cols, m.rows)
    return BitMatrix.from_bits(x)


def independent_rows(m: BitMatrix) -> tuple[np.ndarray, BitMatrix]:
    """Split rows into a maximal independent prefix and their dependents.

    Returns:
        (perm, V): ``perm`` lists row indices, independent rows first (in
        order of first appearance) followed by the dependent rows; V is a
        (num_dependent x num_independent) matrix with
        ``M[dependent] = V @ M[independent]``.
    """
    bits = m.to_bits()
    nrows = m.rows
    basis_vecs: list[np.ndarray] = []
    basis_expr: list[np.ndarray] = []
    lead: dict[int, int] = {}
    indep: list[int] = []
    dep: list[int] = []
    dep_expr: list[np.ndarray] = []
    for r in range(nrows):
        v = bits[r].copy()
        expr = np.zeros(nrows, np.uint8)
        while True:
            nz = np.nonzero(v)[0]
            if nz.size == 0:
                dep.append(r)
                dep_expr.append(expr)
                break
            l = int(nz[0])
            hit = lead.get(l)
            if hit is None:
                k = len(indep)
                expr = expr.copy()
                expr[k] ^= 1
                lead[l] = len(basis_vecs)
                basis_vecs.append(v)
                basis_expr.append(expr)
                indep.append(r)
                break
            v = v ^ basis_vecs[hit]
            expr = expr ^ basis_expr[hit]
    n_ind = len(indep)
    if dep:
        vmat = np.stack([e[:n_ind] for e in dep_expr])
    else:
        vmat = np.zeros((0, n_ind), np.uint8)
    perm = np.array(indep + dep, dtype=np.int64)
    return perm, BitMatrix.from_bits(vmat)
