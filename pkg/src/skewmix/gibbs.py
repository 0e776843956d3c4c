"""Ruelle-Perron-Frobenius eigendata and the Gibbs measure on cylinder words.

For a locally constant potential u of depth k <= m, the depth-m transfer
matrix M[x, y] = exp(u(y)) over one-step preimage pairs is the exact
restriction of the transfer operator to depth-m locally constant functions.
Its leading eigentriple (lambda, h, nu) yields the normalized weights

    g(y) = exp(u(y)) h(y) / (lambda h(sigma y)),    sum over sigma y = x of g(y) = 1,

and the Gibbs cylinder measure mu(C_w) = h(w) nu(w) after normalization.
Longer cylinders carry the exact cocycle weights
mu(C_{w0..w_{L-1}}) = prod_j g(w_j..w_{j+m-1}) * mu(C_{last m symbols}).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DepthTooSmall, InsufficientData, NoConvergence
from .symbolic import SftSpace, StateFunction, Word, format_word, preimages

DENSE_FALLBACK_STATES = 64


@dataclass(eq=False)
class Potential:
    """Locally constant potential: one real value per admissible depth-k word."""

    depth: int
    values: dict[Word, float]

    @classmethod
    def from_table(cls, sft: SftSpace, depth: int, table: Mapping[Word, float]) -> "Potential":
        words = sft.words(depth)
        missing = [w for w in words if w not in table]
        if missing:
            raise KeyError(f"potential misses word {format_word(missing[0])}")
        vals = {w: float(table[w]) for w in words}
        if not all(np.isfinite(v) for v in vals.values()):
            raise ValueError("potential values must be finite")
        return cls(depth=depth, values=vals)

    @classmethod
    def constant(cls, sft: SftSpace, value: float) -> "Potential":
        return cls.from_table(sft, 1, {w: value for w in sft.words(1)})

    def __call__(self, word: Word) -> float:
        return self.values[word[: self.depth]]


@dataclass(eq=False)
class RpfData:
    """Leading eigendata of the transfer matrix and the induced Gibbs measure.

    All vectors are aligned with sft.words(depth).  g holds the normalized
    per-word weights, mu the cylinder probabilities, and stochastic_matrix the
    row-stochastic normalized transfer matrix P[x, y] = g[y] on preimage pairs.
    """

    sft: SftSpace
    depth: int
    potential: Potential
    eigenvalue: float
    h: np.ndarray
    nu: np.ndarray
    g: np.ndarray
    mu: np.ndarray
    stochastic_matrix: np.ndarray
    ball_constants: tuple[float, float] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def words(self) -> tuple[Word, ...]:
        return self.sft.words(self.depth)

    def g_of(self, word: Word) -> float:
        return float(self.g[self.sft.word_index(self.depth)[word[: self.depth]]])

    def g_cocycle(self, word: Word, n: int) -> float:
        """Product of g over the first n depth-m windows of a long word."""
        m = self.depth
        if len(word) < n + m - 1:
            raise DepthTooSmall(f"word of depth {len(word)} cannot host {n} windows of depth {m}")
        index = self.sft.word_index(m)
        out = 1.0
        for i in range(n):
            out *= self.g[index[word[i : i + m]]]
        return out

    def cylinder_measure(self, word: Word) -> float:
        """Exact Gibbs measure of the cylinder of any admissible word.

        Shorter words are marginals of mu, longer words carry g-cocycle
        weights times the measure of their depth-m suffix.
        """
        m = self.depth
        L = len(word)
        index = self.sft.word_index(m)
        if L == m:
            return float(self.mu[index[word]])
        if L < m:
            mask = [w[:L] == word for w in self.words]
            return float(self.mu[mask].sum())
        out = float(self.mu[index[word[L - m :]]])
        for i in range(L - m):
            out *= self.g[index[word[i : i + m]]]
        return out

    def expectation(self, v: StateFunction) -> complex:
        if v.depth != self.depth:
            raise DepthTooSmall("state function depth does not match eigendata depth")
        return complex(np.dot(self.mu, v.values))

    def row_sum_error(self) -> float:
        """Max over words x of |sum over preimages y of g(y) - 1|."""
        return float(np.max(np.abs(self.stochastic_matrix.sum(axis=1) - 1.0)))

    def invariance_error(self) -> float:
        """Max defect of mu(C_w) = sum over prefixes a of mu(C_{aw})."""
        m = self.depth
        worst = 0.0
        for w in self.words:
            total = sum(self.cylinder_measure((a,) + w) for a in range(self.sft.alphabet_size)
                        if self.sft.transitions[a, w[0]])
            worst = max(worst, abs(total - self.cylinder_measure(w)))
        return worst

    def consistency_error(self) -> float:
        """Max defect of mu(C_w) = sum over admissible extensions b of mu(C_{wb})."""
        worst = 0.0
        for w in self.words:
            total = sum(self.cylinder_measure(w + (b,)) for b in range(self.sft.alphabet_size)
                        if self.sft.transitions[w[-1], b])
            worst = max(worst, abs(total - self.cylinder_measure(w)))
        return worst

    def export(self) -> dict:
        """Structured result with documented key names: lambda, h, nu, g, mu."""
        names = [format_word(w) for w in self.words]
        return {
            "depth": self.depth,
            "lambda": self.eigenvalue,
            "h": dict(zip(names, map(float, self.h))),
            "nu": dict(zip(names, map(float, self.nu))),
            "g": dict(zip(names, map(float, self.g))),
            "mu": dict(zip(names, map(float, self.mu))),
        }


def ruelle_matrix(sft: SftSpace, u: Potential, m: int) -> np.ndarray:
    """Depth-m transfer matrix: M[x, y] = exp(u(y)) over preimage pairs y of x."""
    if m < u.depth:
        raise DepthTooSmall(f"state depth {m} is below potential depth {u.depth}")
    words = sft.words(m)
    index = sft.word_index(m)
    mat = np.zeros((len(words), len(words)), dtype=float)
    for xi, x in enumerate(words):
        for y in preimages(sft, x):
            mat[xi, index[y]] = np.exp(u(y))
    return mat


def _power_iteration(mat: np.ndarray, tol: float, max_iters: int) -> tuple[float, np.ndarray] | None:
    n = mat.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iters):
        w = mat @ v
        lam = float(np.max(np.abs(w)))
        if lam <= 0.0:
            return None
        v_new = w / lam
        if np.max(np.abs(mat @ v_new - lam * v_new)) <= tol * max(lam, 1.0):
            return lam, v_new
        v = v_new
    return None


def rpf_eigendata(
    sft: SftSpace,
    u: Potential,
    m: int,
    tol: float = 1e-13,
    max_iters: int = 200_000,
) -> RpfData:
    """Leading eigentriple of the depth-m transfer matrix and the Gibbs measure.

    Power iteration with residual stopping; a dense solver takes over for
    small matrices if the iteration stalls.  Raises NoConvergence otherwise.
    Normalization: <nu, h> = 1, then mu scaled to a probability vector.
    """
    mat = ruelle_matrix(sft, u, m)
    n = mat.shape[0]

    right = _power_iteration(mat, tol, max_iters)
    left = _power_iteration(mat.T, tol, max_iters)
    if (right is None or left is None) and n <= DENSE_FALLBACK_STATES:
        lam_r, h = _dense_leading(mat)
        lam_l, nu = _dense_leading(mat.T)
        lam = 0.5 * (lam_r + lam_l)
    elif right is None or left is None:
        raise NoConvergence(f"power iteration failed at tol={tol} after {max_iters} iterations")
    else:
        lam_r, h = right
        lam_l, nu = left
        lam = 0.5 * (lam_r + lam_l)

    h = np.abs(h)
    nu = np.abs(nu)
    if np.any(h <= 0.0) or np.any(nu < 0.0):
        raise NoConvergence("leading eigenvector is not strictly positive")

    nu = nu / np.dot(nu, h)
    mu = h * nu
    mu = mu / mu.sum()

    words = sft.words(m)
    index = sft.word_index(m)
    pmat = np.zeros_like(mat)
    for xi, x in enumerate(words):
        for y in preimages(sft, x):
            yi = index[y]
            pmat[xi, yi] = mat[xi, yi] * h[yi] / (lam * h[xi])

    # per-word g: the normalized weight of y as a preimage, independent of the
    # target's last symbol because h is constant over it
    g = np.zeros(n, dtype=float)
    for yi, y in enumerate(words):
        parents = [x for x in (y[1:] + (b,) for b in range(sft.alphabet_size))
                   if sft.is_admissible(x)]
        g[yi] = pmat[index[parents[0]], yi]

    return RpfData(
        sft=sft,
        depth=m,
        potential=u,
        eigenvalue=lam,
        h=h,
        nu=nu,
        g=g,
        mu=mu,
        stochastic_matrix=pmat,
    )


def _dense_leading(mat: np.ndarray) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eig(mat)
    k = int(np.argmax(np.abs(vals)))
    lam = float(np.real(vals[k]))
    vec = np.real(vecs[:, k])
    if vec.sum() < 0:
        vec = -vec
    return lam, vec


def spectral_gap_fit(
    rpf: RpfData, trials: int = 20, n_max: int = 30, seed: int = 7
) -> tuple[float, float]:
    """Fit the contraction L^n v -> integral of v, returning (C, delta).

    For random zero-mean state functions the sup defect decays like C delta^n;
    the fitted delta is the reported spectral gap rate.
    """
    rng = np.random.default_rng(seed)
    pmat = rpf.stochastic_matrix
    n_words = len(rpf.words)
    rates = []
    amps = []
    for _ in range(trials):
        v = rng.standard_normal(n_words) + 1j * rng.standard_normal(n_words)
        mean = np.dot(rpf.mu, v)
        cur = v.copy()
        defects = []
        for _ in range(n_max):
            cur = pmat @ cur
            defects.append(np.max(np.abs(cur - mean)))
        defects = np.array(defects)
        good = defects > 1e-14 * max(1.0, defects[0])
        ns = np.arange(1, n_max + 1)[good]
        if len(ns) < 3:
            continue
        slope, intercept = np.polyfit(ns, np.log(defects[good]), 1)
        rates.append(np.exp(slope))
        amps.append(np.exp(intercept))
    if not rates:
        return 1.0, 0.0
    return float(np.max(amps)), float(np.max(rates))


@dataclass(eq=False)
class GibbsChain:
    """Forward Markov realization of the Gibbs measure on depth-m windows.

    transition[i, j] is the conditional probability of moving from word i to
    the shifted word j = sigma(w_i) + (b,); rows are probability vectors and
    the initial distribution is mu.
    """

    rpf: RpfData
    transition: np.ndarray
    initial: np.ndarray
    next_word: np.ndarray  # next_word[i, b] = word index after appending b, or -1

    @classmethod
    def from_rpf(cls, rpf: RpfData) -> "GibbsChain":
        sft = rpf.sft
        m = rpf.depth
        words = rpf.words
        index = sft.word_index(m)
        n = len(words)
        trans = np.zeros((n, n), dtype=float)
        nxt = np.full((n, sft.alphabet_size), -1, dtype=np.int64)
        for i, w in enumerate(words):
            mu_w = rpf.mu[i]
            for b in range(sft.alphabet_size):
                if not sft.transitions[w[-1], b]:
                    continue
                j = index[w[1:] + (b,)]
                nxt[i, b] = j
                trans[i, j] = rpf.cylinder_measure(w + (b,)) / mu_w
        return cls(rpf=rpf, transition=trans, initial=rpf.mu.copy(), next_word=nxt)

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.transition.sum(axis=1) - 1.0)))


def sample_orbit(chain: GibbsChain, length: int, seed: int) -> np.ndarray:
    """Deterministic-per-seed symbol sequence whose windows follow mu."""
    m = chain.rpf.depth
    if length < m:
        raise ValueError(f"length {length} is below the window depth {m}")
    rng = np.random.default_rng(seed)
    words = chain.rpf.words
    cum_init = np.cumsum(chain.initial)
    state = int(np.searchsorted(cum_init, rng.random() * cum_init[-1]))
    symbols = list(words[state])
    cum_rows = np.cumsum(chain.transition, axis=1)
    draws = rng.random(length - m)
    for u in draws:
        state = int(np.searchsorted(cum_rows[state], u * cum_rows[state, -1]))
        symbols.append(words[state][-1])
    return np.array(symbols, dtype=np.int64)


def sample_windows(chain: GibbsChain, length: int, count: int, seed: int) -> np.ndarray:
    """Batch of count independent length-L symbol rows, deterministic per seed.

    Random draws are consumed in a fixed order independent of the sampled
    states, so the output is reproducible bit for bit.
    """
    m = chain.rpf.depth
    if length < m:
        raise ValueError(f"length {length} is below the window depth {m}")
    rng = np.random.default_rng(seed)
    words_arr = chain.rpf.sft.word_array(m)
    cum_init = np.cumsum(chain.initial)
    states = np.searchsorted(cum_init, rng.random(count) * cum_init[-1])
    out = np.empty((count, length), dtype=np.int64)
    out[:, :m] = words_arr[states]
    cum_rows = np.cumsum(chain.transition, axis=1)
    for t in range(m, length):
        u = rng.random(count)
        new_states = np.empty(count, dtype=np.int64)
        for s in np.unique(states):
            mask = states == s
            new_states[mask] = np.searchsorted(cum_rows[s], u[mask] * cum_rows[s, -1])
        states = new_states
        out[:, t] = words_arr[states][:, -1]
    return out


def gibbs_ball_fit(
    rpf: RpfData,
    radii_exponents: Sequence[int],
    max_centers: int = 64,
) -> tuple[float, float]:
    """Fit constants (C_u, d) with mu(B(x, theta**j)) >= C_u * (theta**j)**d.

    A ball of radius theta**j around a word is the cylinder of its length-j
    prefix, so the fit is a log-log regression of prefix-cylinder measures
    against radii, with C_u lowered until the bound holds at every sampled
    pair.  Raises InsufficientData for fewer than two distinct radii.
    """
    exps = sorted(set(int(j) for j in radii_exponents))
    if len(exps) < 2:
        raise InsufficientData("need at least two distinct radii to fit two constants")
    if min(exps) < 1:
        raise ValueError("radius exponents must be >= 1")
    jmax = max(exps)
    theta = rpf.sft.theta
    centers = rpf.sft.words(jmax)[:max_centers]
    logs_r = []
    logs_mu = []
    for center in centers:
        for j in exps:
            measure = rpf.cylinder_measure(center[:j])
            if measure <= 0.0:
                continue
            logs_r.append(j * np.log(theta))
            logs_mu.append(np.log(measure))
    logs_r = np.array(logs_r)
    logs_mu = np.array(logs_mu)
    d, intercept = np.polyfit(logs_r, logs_mu, 1)
    # lower C_u so the stated lower bound holds on all sampled pairs
    c_u = float(np.exp(np.min(logs_mu - d * logs_r)))
    return c_u, float(d)
