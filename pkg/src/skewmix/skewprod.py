"""The skew product F(x, r) = (shift x, r + f(x)) and its combinatorics.

Contains Birkhoff sums of locally constant fiber cocycles, the exact
finite-range reduction of two-sided cocycles to one-sided ones, the
chain-of-stable-pairs search used both for accessibility coverage and for
cancellation witnesses, and a periodic-orbit probe for arithmetic
obstructions (cohomology to a constant, lattice-valued cocycles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DepthTooSmall, WordTooShort
from .gibbs import RpfData
from .symbolic import SftSpace, Word, format_word

_ROUND = 1e-9  # dedup granularity for achieved Birkhoff-difference sums


@dataclass(eq=False)
class FiberCocycle:
    """Locally constant real cocycle driving the fiber translation.

    values maps every admissible depth-k word to a real; mean is the Gibbs
    average stored after centering (|mean| <= 1e-12 once centered).
    """

    depth: int
    values: dict[Word, float]
    mean: float | None = None

    @classmethod
    def from_table(cls, sft: SftSpace, depth: int, table: Mapping[Word, float]) -> "FiberCocycle":
        words = sft.words(depth)
        missing = [w for w in words if w not in table]
        if missing:
            raise KeyError(f"cocycle misses word {format_word(missing[0])}")
        vals = {w: float(table[w]) for w in words}
        if not all(math.isfinite(v) for v in vals.values()):
            raise ValueError("cocycle values must be finite")
        return cls(depth=depth, values=vals)

    def __call__(self, word: Word) -> float:
        return self.values[word[: self.depth]]

    def as_array(self, sft: SftSpace, m: int) -> np.ndarray:
        """Values over the admissible depth-m words, m >= depth."""
        if m < self.depth:
            raise DepthTooSmall(f"depth {m} below cocycle depth {self.depth}")
        return np.array([self.values[w[: self.depth]] for w in sft.words(m)], dtype=float)


def birkhoff_sum(f: FiberCocycle, word: Word, n: int) -> float:
    """Exact n-term Birkhoff sum f(w) + f(shift w) + ... along a finite word."""
    k = f.depth
    if len(word) < n + k - 1:
        raise WordTooShort(
            f"word of depth {len(word)} cannot host {n} windows of depth {k}"
        )
    return float(sum(f.values[word[i : i + k]] for i in range(n)))


def center(f: FiberCocycle, rpf: RpfData) -> FiberCocycle:
    """Subtract the Gibbs mean; the result integrates to zero to 1e-12."""
    mean = sum(rpf.cylinder_measure(w) * v for w, v in f.values.items())
    shifted = {w: v - mean for w, v in f.values.items()}
    residual = sum(rpf.cylinder_measure(w) * v for w, v in shifted.items())
    return FiberCocycle(depth=f.depth, values=shifted, mean=float(residual))


@dataclass(eq=False)
class TwoSidedCocycle:
    """Cocycle depending on coordinates -k..k, tabulated on windows of length 2k+1.

    The window tuple lists the coordinates in increasing order, so entry
    index k is the current position.
    """

    range_k: int
    values: dict[Word, float]

    @classmethod
    def from_table(cls, sft: SftSpace, range_k: int, table: Mapping[Word, float]) -> "TwoSidedCocycle":
        width = 2 * range_k + 1
        words = sft.words(width)
        missing = [w for w in words if w not in table]
        if missing:
            raise KeyError(f"cocycle misses window {format_word(missing[0])}")
        return cls(range_k=range_k, values={w: float(table[w]) for w in words})


def reduce_to_one_sided(
    sft: SftSpace, f2: TwoSidedCocycle
) -> tuple[FiberCocycle, FiberCocycle]:
    """Exact finite telescoping f = f_plus + h - h o shift for finite range k.

    f_plus = f o shift^k depends on coordinates 0..2k, so as a one-sided
    cocycle its table is the window table itself (depth 2k+1).  The transfer
    term h = sum_{j=0}^{k-1} f o shift^j depends on coordinates -k..2k-1 and
    is returned as a depth-3k table evaluated at offset -k (h of a point x is
    the table value at the word x_{-k}..x_{2k-1}).  The identity holds
    pointwise exactly on every admissible window of length 3k+1.
    """
    k = f2.range_k
    if k == 0:
        f_plus = FiberCocycle(depth=1, values={w: f2.values[w] for w in sft.words(1)})
        h = FiberCocycle(depth=1, values={w: 0.0 for w in sft.words(1)})
        return f_plus, h
    f_plus = FiberCocycle(depth=2 * k + 1, values=dict(f2.values))
    width = 2 * k + 1
    h_values: dict[Word, float] = {}
    for w in sft.words(3 * k):
        h_values[w] = float(sum(f2.values[w[j : j + width]] for j in range(k)))
    h = FiberCocycle(depth=3 * k, values=h_values)
    return f_plus, h


def cohomology_defect(sft: SftSpace, f2: TwoSidedCocycle, f_plus: FiberCocycle, h: FiberCocycle) -> float:
    """Max |f - (f_plus + h - h o shift)| over all admissible spanning windows.

    The spanning window has length 3k+1; the two-sided value sits at offset k.
    """
    k = f2.range_k
    if k == 0:
        return max(
            abs(f2.values[w] - f_plus.values[w]) for w in sft.words(1)
        )
    worst = 0.0
    width = 2 * k + 1
    for w in sft.words(3 * k + 1):
        lhs = f2.values[w[:width]]
        rhs = f_plus.values[w[k : k + width]] + h.values[w[: 3 * k]] - h.values[w[1 : 3 * k + 1]]
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# chain-of-stable-pairs search
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _ClassTable:
    """Transitions available from one junction prefix class.

    ext_words lists the candidate next x words (each extends the class
    prefix); the flat record arrays give, per transition, the Birkhoff
    difference delta = f_n(x) - f_n(y), the destination class, and the
    (ext, stem) indices that reconstruct the pair.
    """

    ext_words: list[Word]
    delta: np.ndarray
    next_cls: np.ndarray
    ext_id: np.ndarray
    stem_id: np.ndarray
    by_next: dict[int, np.ndarray] = field(default_factory=dict)

    def group(self) -> None:
        order = {}
        for q in np.unique(self.next_cls):
            order[int(q)] = np.nonzero(self.next_cls == q)[0]
        self.by_next = order


@dataclass(eq=False)
class CycleSearch:
    """Level tables of the chain search, with enough data to rebuild paths."""

    sft: SftSpace
    f: FiberCocycle
    n: int
    m: int
    slack: int
    base_word: Word
    stems: list[Word]
    tables: dict[int, _ClassTable]
    classes: tuple[Word, ...]
    base_cls: int
    levels: list[dict[int, dict[str, np.ndarray]]]
    truncated: bool

    def closing_entries(self) -> Iterator[tuple[float, int, int]]:
        """Yield (sum, cycle_length, row) for chains that close at the base class."""
        for lvl, table in enumerate(self.levels, start=1):
            if self.base_cls in table:
                sums = table[self.base_cls]["sums"]
                for row in range(len(sums)):
                    yield float(sums[row]), lvl, row

    def reconstruct(self, length: int, row: int) -> list[tuple[Word, Word]]:
        """Stable pairs (x_i, y_i) of the chain ending at (base class, row)."""
        pairs: list[tuple[Word, Word]] = []
        cls = self.base_cls
        lvl = length
        while lvl >= 1:
            ent = self.levels[lvl - 1][cls]
            parent_cls = int(ent["parent_cls"][row])
            parent_row = int(ent["parent_row"][row])
            trans_row = int(ent["trans_row"][row])
            if lvl == 1:
                x = self.base_word
                y = self.stems[trans_row] + x[self.n :]
            else:
                tab = self.tables[parent_cls]
                x = tab.ext_words[int(tab.ext_id[trans_row])]
                y = self.stems[int(tab.stem_id[trans_row])] + x[self.n :]
            pairs.append((x, y))
            cls, row, lvl = parent_cls, parent_row, lvl - 1
        pairs.reverse()
        return pairs


def _build_tables(
    sft: SftSpace, f: FiberCocycle, n: int, m: int, slack: int
) -> tuple[list[Word], dict[int, _ClassTable], tuple[Word, ...]]:
    plen = n - slack
    if plen == 0:
        # vacuous junction constraint: one class holding the empty prefix
        classes: tuple[Word, ...] = ((),)
        cls_index: dict[Word, int] = {(): 0}
    else:
        classes = sft.words(plen)
        cls_index = sft.word_index(plen)
    stems = list(sft.words(n))
    stems_by_head: dict[int, list[int]] = {}
    for si, q in enumerate(stems):
        stems_by_head.setdefault(q[-1], []).append(si)

    tables: dict[int, _ClassTable] = {}
    for ci, prefix in enumerate(classes):
        exts: list[Word] = []
        _complete(sft, prefix, n + m, exts)
        delta, next_cls, ext_id, stem_id = [], [], [], []
        for ei, x in enumerate(exts):
            fx = birkhoff_sum(f, x, n)
            suffix = x[n:]
            head = suffix[0]
            for si in stems_by_head_valid(sft, stems, stems_by_head, head):
                y = stems[si] + suffix
                fy = birkhoff_sum(f, y, n)
                delta.append(fx - fy)
                next_cls.append(cls_index[stems[si][:plen]])
                ext_id.append(ei)
                stem_id.append(si)
        delta_arr = np.array(delta, dtype=float)
        next_arr = np.array(next_cls, dtype=np.int64)
        # distinct (destination, delta) transitions suffice: any representative
        # pair realizes the same running sum, so dedup keeps the search small
        keys = next_arr * (1 << 42) + np.round(delta_arr / _ROUND).astype(np.int64)
        _, first = np.unique(keys, return_index=True)
        first.sort()
        tab = _ClassTable(
            ext_words=exts,
            delta=delta_arr[first],
            next_cls=next_arr[first],
            ext_id=np.array(ext_id, dtype=np.int64)[first],
            stem_id=np.array(stem_id, dtype=np.int64)[first],
        )
        tab.group()
        tables[ci] = tab
    return stems, tables, classes


def stems_by_head_valid(sft, stems, stems_by_head, head) -> list[int]:
    out = []
    for last, sids in stems_by_head.items():
        if sft.transitions[last, head]:
            out.extend(sids)
    out.sort()
    return out


def _complete(sft: SftSpace, prefix: Word, depth: int, out: list[Word]) -> None:
    if len(prefix) == depth:
        out.append(prefix)
        return
    if not prefix:
        for b in range(sft.alphabet_size):
            _complete(sft, (b,), depth, out)
        return
    for b in range(sft.alphabet_size):
        if sft.transitions[prefix[-1], b]:
            _complete(sft, prefix + (b,), depth, out)


def cycle_search(
    sft: SftSpace,
    f: FiberCocycle,
    n: int,
    m: int,
    max_pairs: int,
    budget: int,
    slack: int = 2,
    base_word: Word | None = None,
) -> CycleSearch:
    """Breadth-first search over chains of stable pairs anchored at one word.

    A chain is x_1, y_1, x_2, y_2, ... with x_1 the base word, every (x_i, y_i)
    a stable pair (shared depth-m suffix at our word depth n+m), and every
    junction y_i -> x_{i+1} sharing a prefix of length >= n - slack.  Chains
    whose running endpoint returns to the base prefix class close into cycles;
    the per-level tables keep all reachable Birkhoff-difference sums, deduped
    at 1e-9, with back-pointers for path reconstruction.  The search stops
    early (truncated=True) if the total number of table entries would exceed
    the budget.
    """
    slack = min(slack, n)
    if m < f.depth - 1:
        raise DepthTooSmall(f"suffix depth {m} too small for cocycle depth {f.depth}")
    base_words = sft.words(n + m)
    base = base_word if base_word is not None else base_words[0]
    if len(base) != n + m:
        raise WordTooShort(f"base word must have depth {n + m}")

    stems, tables, classes = _build_tables(sft, f, n, m, slack)
    cls_index = {w: i for i, w in enumerate(classes)}
    base_cls = cls_index[base[: n - slack]]

    # level 1: pairs (base, y)
    f_base = birkhoff_sum(f, base, n)
    suffix = base[n:]
    level1: dict[int, dict[str, np.ndarray]] = {}
    sums1, pcls1, prow1, trow1, ncls1 = [], [], [], [], []
    for si in stems_by_head_valid(sft, stems, _stem_heads(stems), suffix[0]):
        y = stems[si] + suffix
        sums1.append(f_base - birkhoff_sum(f, y, n))
        ncls1.append(cls_index[stems[si][: n - slack]])
        pcls1.append(-1)
        prow1.append(-1)
        trow1.append(si)
    _merge_level(level1, np.array(ncls1), np.array(sums1), np.array(pcls1), np.array(prow1), np.array(trow1))

    levels = [level1]
    total = sum(len(e["sums"]) for e in level1.values())
    truncated = False
    for _ in range(1, max_pairs):
        prev = levels[-1]
        pending: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]] = {}
        for p in sorted(prev):
            ent = prev[p]
            tab = tables[p]
            if len(tab.delta) == 0:
                continue
            sums = ent["sums"]
            for q in sorted(tab.by_next):
                idx = tab.by_next[q]
                # chunk the outer sum to bound transient memory
                step = max(1, int(40_000_000 // max(len(sums), 1)))
                for lo in range(0, len(idx), step):
                    sub = idx[lo : lo + step]
                    cand = (sums[:, None] + tab.delta[sub][None, :]).ravel()
                    rows = np.repeat(np.arange(len(sums)), len(sub))
                    trans = np.tile(sub, len(sums))
                    keys = np.round(cand / _ROUND).astype(np.int64)
                    _, first = np.unique(keys, return_index=True)
                    first.sort()
                    pending.setdefault(q, []).append(
                        (cand[first], np.full(len(first), p), rows[first], trans[first])
                    )
        nxt: dict[int, dict[str, np.ndarray]] = {}
        for q in sorted(pending):
            chunks = pending[q]
            cand = np.concatenate([c[0] for c in chunks])
            pcls = np.concatenate([c[1] for c in chunks])
            prow = np.concatenate([c[2] for c in chunks])
            trow = np.concatenate([c[3] for c in chunks])
            _merge_level(nxt, np.full(len(cand), q), cand, pcls, prow, trow)
        new_count = sum(len(e["sums"]) for e in nxt.values())
        if total + new_count > budget:
            truncated = True
            break
        total += new_count
        levels.append(nxt)

    return CycleSearch(
        sft=sft,
        f=f,
        n=n,
        m=m,
        slack=slack,
        base_word=base,
        stems=stems,
        tables=tables,
        classes=classes,
        base_cls=base_cls,
        levels=levels,
        truncated=truncated,
    )


def _stem_heads(stems: list[Word]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for si, q in enumerate(stems):
        out.setdefault(q[-1], []).append(si)
    return out


def _merge_level(
    table: dict[int, dict[str, np.ndarray]],
    cls: np.ndarray,
    sums: np.ndarray,
    pcls: np.ndarray,
    prow: np.ndarray,
    trow: np.ndarray,
) -> None:
    for q in np.unique(cls):
        mask = cls == q
        cand = sums[mask]
        keys = np.round(cand / _ROUND).astype(np.int64)
        _, first = np.unique(keys, return_index=True)
        first.sort()
        entry = {
            "sums": cand[first],
            "parent_cls": pcls[mask][first],
            "parent_row": prow[mask][first],
            "trans_row": trow[mask][first],
        }
        q = int(q)
        if q in table:
            old = table[q]
            cand2 = np.concatenate([old["sums"], entry["sums"]])
            keys2 = np.round(cand2 / _ROUND).astype(np.int64)
            _, first2 = np.unique(keys2, return_index=True)
            first2.sort()
            table[q] = {
                "sums": cand2[first2],
                "parent_cls": np.concatenate([old["parent_cls"], entry["parent_cls"]])[first2],
                "parent_row": np.concatenate([old["parent_row"], entry["parent_row"]])[first2],
                "trans_row": np.concatenate([old["trans_row"], entry["trans_row"]])[first2],
            }
        else:
            table[q] = entry


@dataclass(eq=False)
class AccessReport:
    """Witnessed coverage of [0, 1] by chain-of-stable-pair Birkhoff sums."""

    n: int
    N: int
    budget: int
    achieved: list[float]
    covering_radius: float
    entries: list[tuple[float, int]]
    base_word: Word
    slack: int
    truncated: bool


def collapsed_access_coverage(
    sft: SftSpace,
    rpf: RpfData,
    f: FiberCocycle,
    n: int,
    N: int,
    budget: int = 2_000_000,
    slack: int | None = None,
    base_word: Word | None = None,
) -> AccessReport:
    """Enumerate achievable sums of Birkhoff differences over closed chains.

    Collects the values t = sum of f_n(x_i) - f_n(y_i) over cycles of at most
    N stable pairs anchored at the base word, keeps those inside [0, 1], and
    reports the covering radius: half the largest gap of the achieved set,
    with the interval endpoints 0 and 1 counted as gap boundaries.

    The default slack = n makes the junction constraint vacuous at this word
    depth (closeness constant theta**-n); coverage is then the richest set of
    sums compatible with the stable-pair structure, and the report records
    the slack actually used.
    """
    if slack is None:
        slack = n
    search = cycle_search(sft, f, n, rpf.depth, N, budget, slack=slack, base_word=base_word)
    best_len: dict[int, tuple[float, int]] = {}
    for t, length, _row in search.closing_entries():
        if t < -1e-12 or t > 1.0 + 1e-12:
            continue
        t = min(max(t, 0.0), 1.0)
        key = int(round(t / _ROUND))
        if key not in best_len or length < best_len[key][1]:
            best_len[key] = (t, length)
    entries = sorted(best_len.values())
    achieved = [t for t, _ in entries]
    radius = _covering_radius(achieved)
    return AccessReport(
        n=n,
        N=N,
        budget=budget,
        achieved=achieved,
        covering_radius=radius,
        entries=entries,
        base_word=search.base_word,
        slack=search.slack,
        truncated=search.truncated,
    )


def _covering_radius(points: Sequence[float]) -> float:
    if not points:
        return 0.5
    gaps = [points[0] - 0.0]
    gaps.extend(b - a for a, b in zip(points, points[1:]))
    gaps.append(1.0 - points[-1])
    return max(gaps) / 2.0


@dataclass(eq=False)
class ProbeReport:
    """Periodic-orbit diagnostics for arithmetic obstructions."""

    max_period: int
    orbit_sums: list[tuple[int, Word, float]]
    normalized_sums: list[float]
    constant_candidate: bool
    constant_value: float | None
    lattice_candidate: bool
    lattice_r: float | None


def non_arithmeticity_probe(
    sft: SftSpace, f: FiberCocycle, max_period: int = 6, tol: float = 1e-10
) -> ProbeReport:
    """Compute cocycle sums over all periodic orbits up to a given period.

    If f were cohomologous to a constant c, every period-p sum would equal
    p * c; if f sat in c + r * (integers) up to coboundary, same-period sums
    would differ by multiples of r.  The probe reports both candidate flags:
    a constant candidate when all normalized sums agree to tol, a lattice
    candidate when an approximate real gcd r > 1e-6 divides all same-period
    pairwise differences.
    """
    orbit_sums: list[tuple[int, Word, float]] = []
    same_period_diffs: list[float] = []
    normalized: list[float] = []
    k = f.depth
    for p in range(1, max_period + 1):
        sums_p: list[float] = []
        for w in _cyclic_words(sft, p):
            total = 0.0
            for i in range(p):
                window = tuple(w[(i + j) % p] for j in range(k))
                total += f.values[window]
            sums_p.append(total)
            if _is_primitive(w) and w == _canonical_rotation(w):
                orbit_sums.append((p, w, total))
                normalized.append(total / p)
        for i in range(len(sums_p)):
            for j in range(i + 1, len(sums_p)):
                d = sums_p[i] - sums_p[j]
                if abs(d) > tol:
                    same_period_diffs.append(abs(d))

    constant = bool(normalized) and (max(normalized) - min(normalized) <= tol)
    constant_value = float(np.mean(normalized)) if constant and normalized else None

    lattice = False
    lattice_r: float | None = None
    if same_period_diffs and not constant:
        g = _approx_gcd(same_period_diffs)
        if g > 1e-6:
            mult_ok = all(
                abs(d / g - round(d / g)) <= 1e-6 for d in same_period_diffs
            )
            if mult_ok:
                lattice = True
                lattice_r = float(g)
    if constant:
        lattice = False

    return ProbeReport(
        max_period=max_period,
        orbit_sums=orbit_sums,
        normalized_sums=normalized,
        constant_candidate=constant,
        constant_value=constant_value,
        lattice_candidate=lattice,
        lattice_r=lattice_r,
    )


def _cyclic_words(sft: SftSpace, p: int) -> list[Word]:
    return [w for w in sft.words(p) if sft.transitions[w[-1], w[0]]]


def _is_primitive(w: Word) -> bool:
    p = len(w)
    for d in range(1, p):
        if p % d == 0 and w == w[:d] * (p // d):
            return False
    return True


def _canonical_rotation(w: Word) -> Word:
    return min(w[i:] + w[:i] for i in range(len(w)))


def _approx_gcd(values: Sequence[float], tol: float = 1e-9) -> float:
    g = 0.0
    for v in values:
        v = abs(float(v))
        if v <= tol:
            continue
        if g == 0.0:
            g = v
            continue
        a, b = max(g, v), min(g, v)
        while b > tol:
            a, b = b, a - math.floor(a / b) * b
        g = a
    return g
