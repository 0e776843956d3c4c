"""Twisted transfer operators, spectral curves, and cancellation machinery.

The twisted matrix at frequency xi carries entries g(y) exp(i xi f(y)) over
one-step preimage pairs; at xi = 0 it is exactly the normalized transfer
matrix.  Around frequency zero the leading eigenvalue curve bends like
1 - (sigma^2/2) xi^2 with sigma^2 the Green-Kubo variance of the cocycle;
away from zero, contraction is driven by oscillatory cancellation which the
stable-pair / us-cycle search below witnesses quantitatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, DepthTooSmall, NotNice, ToleranceUndefined
from .gibbs import RpfData
from .skewprod import FiberCocycle, birkhoff_sum, cycle_search
from .symbolic import SftSpace, StateFunction, Word, lipschitz_seminorm, word_metric

TWO_PI = 2.0 * math.pi


def wrap_angle(x: float) -> float:
    """Reduce an angle to (-pi, pi]."""
    w = math.remainder(x, TWO_PI)
    return math.pi if w == -math.pi else w


@dataclass(eq=False)
class TwistedOperator:
    """Finite-memory matrix of the twisted transfer operator at one frequency.

    matrix[x, y] = g(y) exp(i xi f(y)) on preimage pairs; g_tilde holds the
    per-word twisted weights, seminorm their exact theta-Lipschitz seminorm,
    r_const the Lasota-Yorke remainder R and h_const = max(1, 2R/(1-theta)).
    """

    xi: float
    depth: int
    sft: SftSpace
    matrix: np.ndarray
    g_tilde: np.ndarray
    seminorm: float
    r_const: float
    h_const: float
    c0: float

    def apply(self, v: StateFunction) -> StateFunction:
        if v.depth != self.depth:
            raise DepthTooSmall("state function depth does not match operator depth")
        return v.copy_with(self.matrix @ v.values)

    def power_apply(self, v: StateFunction, n: int) -> StateFunction:
        cur = v.values
        for _ in range(n):
            cur = self.matrix @ cur
        return v.copy_with(cur)


def preimage_mismatch(rpf: RpfData) -> float:
    """Structural remainder for transition matrices that are not full.

    When two target words start with different symbols their preimage sets
    can differ; the unmatched preimages contribute at most this much weight.
    Zero for full shifts.
    """
    key = "preimage_mismatch"
    if key not in rpf._cache:
        sft = rpf.sft
        g_max_by_head = np.zeros(sft.alphabet_size)
        for w, gv in zip(rpf.words, rpf.g):
            g_max_by_head[w[0]] = max(g_max_by_head[w[0]], gv)
        worst = 0.0
        for b in range(sft.alphabet_size):
            for b2 in range(sft.alphabet_size):
                if b2 == b:
                    continue
                diff = sft.transitions[:, b] != sft.transitions[:, b2]
                worst = max(worst, float(np.sum(g_max_by_head[diff])))
        rpf._cache[key] = worst
    return rpf._cache[key]


def twisted_matrix(
    rpf: RpfData, f: FiberCocycle, xi: float, m: int | None = None, c0: float | None = None
) -> TwistedOperator:
    """Build the depth-m twisted operator; xi = 0 reproduces the stochastic matrix.

    The Lasota-Yorke remainder is R = c0 |g~|_theta + mismatch with the
    provable default c0 = theta * alphabet_size; the mismatch term accounts
    for preimage sets that differ between target symbols and vanishes for
    full shifts.
    """
    m = rpf.depth if m is None else m
    if m != rpf.depth:
        raise DepthTooSmall(f"eigendata is at depth {rpf.depth}; rebuild it for depth {m}")
    if m < f.depth:
        raise DepthTooSmall(f"state depth {m} below cocycle depth {f.depth}")
    sft = rpf.sft
    fvals = f.as_array(sft, m)
    phases = np.exp(1j * xi * fvals)
    g_tilde = rpf.g * phases
    matrix = rpf.stochastic_matrix * phases[None, :]
    semi = lipschitz_seminorm(
        StateFunction(depth=m, words=rpf.words, values=g_tilde), sft.theta, sft
    )
    c0_val = default_c0(sft) if c0 is None else float(c0)
    r_const = c0_val * semi + preimage_mismatch(rpf)
    h_const = max(1.0, 2.0 * r_const / (1.0 - sft.theta))
    return TwistedOperator(
        xi=float(xi),
        depth=m,
        sft=sft,
        matrix=matrix,
        g_tilde=g_tilde,
        seminorm=semi,
        r_const=r_const,
        h_const=h_const,
        c0=c0_val,
    )


def default_c0(sft: SftSpace) -> float:
    """Provable Lasota-Yorke constant: prepending a symbol scales distances by
    theta, so alphabet_size * theta covers the matched-preimage variation."""
    return sft.alphabet_size * sft.theta


def calibrate_c0(
    rpf: RpfData,
    f: FiberCocycle,
    xis: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 4.0),
    trials: int = 200,
    seed: int = 11,
    margin: float = 1.1,
) -> float:
    """Smallest empirical C0 (times a safety margin) making the basic
    inequality |L v|_theta <= theta |v|_theta + (C0 |g~|_theta + mismatch)
    ||v||_inf hold across random locally constant observables at several
    frequencies.
    """
    rng = np.random.default_rng(seed)
    sft = rpf.sft
    theta = sft.theta
    mismatch = preimage_mismatch(rpf)
    worst = 0.0
    for xi in xis:
        op = twisted_matrix(rpf, f, xi)
        if op.seminorm <= 1e-14:
            continue
        for _ in range(trials):
            vals = rng.standard_normal(len(rpf.words)) + 1j * rng.standard_normal(len(rpf.words))
            v = StateFunction(depth=rpf.depth, words=rpf.words, values=vals)
            lhs = lipschitz_seminorm(op.apply(v), theta, sft)
            base = theta * lipschitz_seminorm(v, theta, sft)
            need = (lhs - base) / max(v.sup_norm(), 1e-300) - mismatch
            if need > 0:
                worst = max(worst, need / op.seminorm)
    return float(worst * margin) if worst > 0 else 0.0


def h_norm(v: StateFunction, big_h: float, theta: float, sft: SftSpace | None = None) -> float:
    """max(sup norm, theta-seminorm / H); requires H >= 1."""
    if big_h < 1.0:
        raise ValueError("H must be >= 1")
    return max(v.sup_norm(), lipschitz_seminorm(v, theta, sft) / big_h)


# ---------------------------------------------------------------------------
# spectral curve and Green-Kubo variance
# ---------------------------------------------------------------------------


def green_kubo_variance(
    rpf: RpfData, f: FiberCocycle, k_max: int = 200, tiny: float = 1e-15
) -> tuple[float, list[float]]:
    """sigma^2 = int f^2 dmu + 2 sum_k int f (f o shift^k) dmu, each term exact.

    Correlation terms are contracted through the normalized transfer matrix,
    which aggregates the full cylinder enumeration exactly; the series stops
    after three consecutive negligible terms.
    """
    sft = rpf.sft
    fvals = f.as_array(sft, rpf.depth)
    terms = [float(np.dot(rpf.mu, fvals * fvals))]
    sigma2 = terms[0]
    pmat = rpf.stochastic_matrix
    propagated = fvals.astype(complex)
    small_run = 0
    scale = max(abs(terms[0]), 1.0)
    for _ in range(1, k_max + 1):
        propagated = pmat @ propagated
        term = float(np.real(np.dot(rpf.mu, fvals * propagated)))
        terms.append(term)
        sigma2 += 2.0 * term
        small_run = small_run + 1 if abs(term) < tiny * scale else 0
        if small_run >= 3:
            break
    return sigma2, terms


@dataclass(eq=False)
class SpectralCurve:
    """Tracked leading eigenvalue of the twisted operators over a frequency grid."""

    xis: np.ndarray
    lams: np.ndarray
    sigma2: float
    curvature: float
    quad_coeff: float  # fitted c in lambda ~ 1 - c xi^2  (c = 2 A_kappa)
    cubic_bound: float  # fitted B with |lambda - (1 - c xi^2)| <= B |xi|^3
    crossing_xi: float | None

    @property
    def a_kappa(self) -> float:
        return self.quad_coeff / 2.0

    def lambda_at_zero_error(self) -> float:
        k = int(np.argmin(np.abs(self.xis)))
        return float(abs(self.lams[k] - 1.0))


def spectral_curve(
    rpf: RpfData,
    f: FiberCocycle,
    xi_grid: Sequence[float],
    fit_window: float = 0.2,
    curvature_h: float = 0.02,
) -> SpectralCurve:
    """Continuity-tracked eigenvalue curve with curvature and variance checks.

    The curve is walked outward from 0 picking the eigenvalue closest to the
    previous one; if the tracked branch loses strict dominance the curve is
    truncated there and crossing_xi reports the frequency.  The curvature at
    0 comes from a fourth-order central difference and, by the central limit
    behaviour of Birkhoff sums, matches minus the Green-Kubo variance.
    """
    xis = np.array(sorted(set(float(x) for x in xi_grid) | {0.0}))
    order = np.argsort(np.abs(xis), kind="stable")
    lam_map: dict[int, complex] = {}
    crossing: float | None = None
    for side in (order[xis[order] >= 0], order[xis[order] < 0]):
        prev = 1.0 + 0.0j
        for k in side:
            if crossing is not None and abs(xis[k]) >= abs(crossing):
                continue
            vals = np.linalg.eigvals(twisted_matrix(rpf, f, xis[k]).matrix)
            pick = int(np.argmin(np.abs(vals - prev)))
            lam = vals[pick]
            others = np.delete(np.abs(vals), pick)
            if others.size and np.max(others) > abs(lam) + 1e-12:
                crossing = float(xis[k])
                continue
            lam_map[k] = complex(lam)
            prev = lam
    keep = np.array(sorted(lam_map), dtype=int)
    xis_kept = xis[keep]
    lams = np.array([lam_map[k] for k in keep])

    h = curvature_h
    lam_h = _leading_near_one(rpf, f, h)
    lam_2h = _leading_near_one(rpf, f, 2 * h)
    curvature = float((-2.0 * lam_2h.real + 32.0 * lam_h.real - 30.0) / (12.0 * h * h))

    sigma2, _terms = green_kubo_variance(rpf, f)

    window = (np.abs(xis_kept) <= fit_window) & (np.abs(xis_kept) > 0)
    if window.sum() >= 2:
        x2 = xis_kept[window] ** 2
        y = 1.0 - lams[window].real
        quad = float(np.dot(x2, y) / np.dot(x2, x2))
        resid = np.abs(lams[window] - (1.0 - quad * xis_kept[window] ** 2))
        cubic = float(np.max(resid / np.abs(xis_kept[window]) ** 3))
    else:
        quad = sigma2 / 2.0
        cubic = 0.0

    return SpectralCurve(
        xis=xis_kept,
        lams=lams,
        sigma2=sigma2,
        curvature=curvature,
        quad_coeff=quad,
        cubic_bound=cubic,
        crossing_xi=crossing,
    )


def _leading_near_one(rpf: RpfData, f: FiberCocycle, xi: float) -> complex:
    vals = np.linalg.eigvals(twisted_matrix(rpf, f, xi).matrix)
    return complex(vals[np.argmin(np.abs(vals - 1.0))])


@dataclass(eq=False)
class DecayProfile:
    """H-norm decay w_n = |L_xi^n probe|_H of an h-normalized probe."""

    xi: float
    ns: np.ndarray
    values: np.ndarray
    h_const: float

    def is_monotone(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.values) <= tol))

    def fitted_rate(self) -> tuple[float, float]:
        """(amplitude, rate) of the exponential envelope fitted on the tail."""
        good = self.values > 1e-14
        if good.sum() < 3:
            return 0.0, 0.0
        ns = self.ns[good]
        slope, intercept = np.polyfit(ns, np.log(self.values[good]), 1)
        return float(np.exp(intercept)), float(np.exp(slope))

    def satisfies_envelope(self, a_kappa: float) -> bool:
        env = 4.0 * (1.0 - a_kappa * self.xi * self.xi) ** self.ns.astype(float)
        return bool(np.all(self.values <= env + 1e-12))


def norm_decay_profile(
    rpf: RpfData,
    f: FiberCocycle,
    xi: float,
    probe: StateFunction,
    n_max: int,
    c0: float | None = None,
) -> DecayProfile:
    """Iterate the twisted operator on an h-normalized probe, recording norms."""
    op = twisted_matrix(rpf, f, xi, c0=c0)
    theta = rpf.sft.theta
    norm0 = h_norm(probe, op.h_const, theta, rpf.sft)
    if norm0 <= 0:
        raise ValueError("probe must be nonzero")
    cur = probe.copy_with(probe.values / norm0)
    ns = np.arange(0, n_max + 1)
    vals = np.empty(len(ns))
    vals[0] = 1.0
    for i in range(1, len(ns)):
        cur = op.apply(cur)
        vals[i] = h_norm(cur, op.h_const, theta, rpf.sft)
    return DecayProfile(xi=float(xi), ns=ns, values=vals, h_const=op.h_const)


# ---------------------------------------------------------------------------
# stable pairs, tolerances, us-cycles
# ---------------------------------------------------------------------------


def stable_pairs(
    sft: SftSpace, n: int, suffix: Word, budget: int = 1_000_000
) -> list[tuple[Word, Word]]:
    """All ordered pairs of depth-(n+m) words sharing the given depth-m suffix.

    Pairs include the diagonal (x, x); ordering is lexicographic in (x, y).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    exts: list[Word] = []
    _extend_left(sft, suffix, n, exts)
    if len(exts) ** 2 > budget:
        raise BudgetExceeded(f"{len(exts)**2} pairs exceed the budget {budget}")
    return [(x, y) for x in exts for y in exts]


def _extend_left(sft: SftSpace, word: Word, remaining: int, out: list[Word]) -> None:
    if remaining == 0:
        out.append(word)
        return
    for a in range(sft.alphabet_size):
        if sft.transitions[a, word[0]]:
            _extend_left(sft, (a,) + word, remaining - 1, out)


@dataclass(eq=False)
class StablePair:
    """A pair of words with shared depth-m suffix, with its twisted phase data."""

    x: Word
    y: Word
    n: int
    g_n_x: float
    g_n_y: float
    f_n_x: float
    f_n_y: float
    xi: float

    @property
    def phase(self) -> float:
        """arg of g~_n(y) / g~_n(x) = xi (f_n(y) - f_n(x)), wrapped to (-pi, pi]."""
        return wrap_angle(self.xi * (self.f_n_y - self.f_n_x))

    @property
    def delta(self) -> float:
        return self.f_n_x - self.f_n_y

    def stable_tolerance(self, epsilon: float) -> float:
        rhs = epsilon * (1.0 / self.g_n_x + 1.0 / self.g_n_y)
        if rhs >= 2.0:
            raise ToleranceUndefined(f"1 - cos(delta) = {rhs} has no solution below pi")
        return math.acos(1.0 - rhs)


def make_stable_pair(
    rpf: RpfData, f: FiberCocycle, xi: float, x: Word, y: Word, n: int
) -> StablePair:
    if x[n:] != y[n:]:
        raise ValueError("words do not share their suffix")
    return StablePair(
        x=x,
        y=y,
        n=n,
        g_n_x=rpf.g_cocycle(x, n),
        g_n_y=rpf.g_cocycle(y, n),
        f_n_x=birkhoff_sum(f, x, n),
        f_n_y=birkhoff_sum(f, y, n),
        xi=float(xi),
    )


def unstable_tolerance(d: float, big_h: float) -> float:
    s = 2.0 * big_h * d
    if s > 1.0:
        raise ToleranceUndefined(f"sin(delta) = {s} exceeds 1")
    return math.asin(s)


def tolerances(
    pair: StablePair, epsilon: float, big_h: float, theta: float
) -> tuple[float, float]:
    """(stable, unstable) tolerance of a pair; the unstable one uses d(x, y)."""
    d = word_metric(pair.x, pair.y, theta)
    return pair.stable_tolerance(epsilon), unstable_tolerance(d, big_h)


@dataclass(eq=False)
class UsCycle:
    """A closed chain of stable pairs with its phase and tolerance audit."""

    xi: float
    n: int
    epsilon: float
    h_const: float
    pairs: list[StablePair]
    stable_tols: list[float]
    junction_dists: list[float]
    junction_tols: list[float]
    total_phase: float
    total_tolerance: float

    @property
    def margin(self) -> float:
        return self.total_phase - self.total_tolerance

    def phase_recomputed(self) -> float:
        return wrap_angle(sum(p.phase for p in self.pairs))


def find_us_cycle(
    rpf: RpfData,
    f: FiberCocycle,
    xi: float,
    n: int,
    max_pairs: int = 4,
    budget: int = 2_000_000,
    slack: int = 2,
    a_const: float = 180.0,
    epsilon: float | None = None,
    base_word: Word | None = None,
    max_candidates: int = 400,
) -> UsCycle | None:
    """Search for a us-cycle whose phase beats its tolerance at frequency xi.

    Cancellation amounts follow the schedule epsilon = 1/(a_const * G**n)
    with G the reciprocal of the smallest normalized weight, so every stable
    tolerance is solvable.  Candidates are ranked by wrapped phase and the
    first cycle with a positive exact margin is returned with a full audit
    trail; None means no witness within the budget, not a disproof.
    """
    sft = rpf.sft
    m = rpf.depth
    op = twisted_matrix(rpf, f, xi)
    big_h = op.h_const
    g_min = float(np.min(rpf.g[rpf.g > 0]))
    big_g = 1.0 / g_min
    eps = epsilon if epsilon is not None else 1.0 / (a_const * big_g**n)

    search = cycle_search(sft, f, n, m, max_pairs, budget, slack=slack, base_word=base_word)
    base = search.base_word

    candidates = []
    for t, length, row in search.closing_entries():
        phase = wrap_angle(-xi * t)
        if phase > 1e-9:
            candidates.append((phase, length, row))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    for phase, length, row in candidates[:max_candidates]:
        words = search.reconstruct(length, row)
        pairs = [make_stable_pair(rpf, f, xi, x, y, n) for x, y in words]
        try:
            stable_tols = [p.stable_tolerance(eps) for p in pairs]
            dists = []
            for i in range(len(pairs)):
                nxt = pairs[i + 1].x if i + 1 < len(pairs) else base
                dists.append(word_metric(pairs[i].y, nxt, sft.theta))
            junction_tols = [unstable_tolerance(d, big_h) for d in dists]
        except ToleranceUndefined:
            continue
        total_phase = wrap_angle(sum(p.phase for p in pairs))
        if total_phase <= 0:
            continue
        total_tol = sum(stable_tols) + sum(junction_tols)
        if total_phase - total_tol > 0:
            return UsCycle(
                xi=float(xi),
                n=n,
                epsilon=eps,
                h_const=big_h,
                pairs=pairs,
                stable_tols=stable_tols,
                junction_dists=dists,
                junction_tols=junction_tols,
                total_phase=total_phase,
                total_tolerance=total_tol,
            )
    return None


# ---------------------------------------------------------------------------
# nice observables and cancellation pairs
# ---------------------------------------------------------------------------


def sample_nice(
    sft: SftSpace,
    m: int,
    epsilon: float,
    big_h: float,
    rng: np.random.Generator,
    max_shrink: int = 60,
) -> StateFunction:
    """Random nice observable: moduli in (1-eps, 1), theta-seminorm <= H.

    Phases are built from independent contributions per prefix level scaled
    by theta powers (so nearby words get nearby phases), then the spread is
    halved until the seminorm constraint holds.
    """
    words = sft.words(m)
    n_w = len(words)
    mod_u = rng.random(n_w)
    phase = np.zeros(n_w)
    for j in range(1, m + 1):
        prefixes = {}
        for i, w in enumerate(words):
            prefixes.setdefault(w[:j], []).append(i)
        draw = {p: rng.standard_normal() for p in sorted(prefixes)}
        for p, idxs in prefixes.items():
            phase[np.array(idxs)] += sft.theta**j * draw[p]
    scale = 1.0
    for _ in range(max_shrink):
        mods = 1.0 - epsilon * (0.5 + 0.45 * scale * (2.0 * mod_u - 1.0))
        vals = mods * np.exp(1j * scale * phase)
        v = StateFunction(depth=m, words=words, values=vals)
        if lipschitz_seminorm(v, sft.theta, sft) <= big_h:
            return v
        scale *= 0.5
    raise NotNice("could not produce a nice observable within the shrink budget")


def check_nice(v: StateFunction, epsilon: float, big_h: float, theta: float, sft=None) -> None:
    mods = np.abs(v.values)
    if not (np.all(mods > 1.0 - epsilon) and np.all(mods < 1.0)):
        raise NotNice("moduli leave the interval (1 - eps, 1)")
    if lipschitz_seminorm(v, theta, sft) > big_h + 1e-12:
        raise NotNice("theta-seminorm exceeds H")


def cancellation_pair_check(
    rpf: RpfData,
    f: FiberCocycle,
    op: TwistedOperator,
    pair: StablePair,
    v: StateFunction,
    epsilon: float,
    verify_transfer_bound: bool = True,
) -> tuple[bool, dict]:
    """Test the two-term cancellation inequality at one stable pair.

    When it holds, also recompute the full n-step preimage sum at the shared
    suffix and check the induced bound |L^n v(p)| <= 1 - eps.
    """
    check_nice(v, epsilon, op.h_const, rpf.sft.theta, rpf.sft)
    m = rpf.depth
    index = rpf.sft.word_index(m)
    n = pair.n
    xi = op.xi
    vx = v.values[index[pair.x[:m]]]
    vy = v.values[index[pair.y[:m]]]
    z1 = pair.g_n_x * np.exp(1j * xi * pair.f_n_x) * vx
    z2 = pair.g_n_y * np.exp(1j * xi * pair.f_n_y) * vy
    lhs = abs(z1 + z2)
    rhs = pair.g_n_x * abs(vx) + pair.g_n_y * abs(vy) - epsilon
    is_pair = lhs <= rhs
    audit = {"lhs": float(lhs), "rhs": float(rhs), "z1": complex(z1), "z2": complex(z2)}
    if is_pair and verify_transfer_bound:
        suffix = pair.x[n:]
        iterate = op.power_apply(v, n)
        value = iterate.values[index[suffix]]
        audit["transfer_value"] = complex(value)
        audit["transfer_bound_ok"] = bool(abs(value) <= 1.0 - epsilon + 1e-12)
    return bool(is_pair), audit
