"""Covariance of a global against a local observable, three independent ways.

With the measure-side transform Phi(w, r) = integral of exp(-i r xi)
d eta_w(xi) and q_xi(w) = quadrature of exp(-i xi r) conj(psi(w, r)) dr, the
pairing integral of Phi(shift^n x, r + f_n(x)) conj(psi(x, r)) rearranges
exactly into

    total(n) = sum_w mu(C_w) * integral over xi of (T_{-xi}^n q_xi)(w) d eta_w(xi),

where T_xi is the twisted matrix with weights g(y) exp(i xi f(y)).  The
estimators below evaluate total(n) by brute-force cylinder enumeration
(cov_exact), by seeded Monte Carlo over Gibbs samples (cov_direct), and by
the frequency-split operator formula (cov_spectral); all three then subtract
nu_av(Phi) * nu(psi).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, DegenerateWindow, DepthTooSmall, QuadratureWarning
from .gibbs import GibbsChain, RpfData, sample_windows
from .observables import (
    GlobalObservable,
    LocalObservable,
    frequency_split,
    low_freq_variation,
    nu_av_global,
    nu_local,
)
from .skewprod import FiberCocycle
from .twisted import twisted_matrix

_EIG_COND_LIMIT = 1e10


def _check_depths(rpf: RpfData, f: FiberCocycle, phi: GlobalObservable, psi: LocalObservable) -> None:
    m = rpf.depth
    if psi.depth != m or phi.depth != m:
        raise DepthTooSmall("observables must be built at the eigendata depth")
    if f.depth > m:
        raise DepthTooSmall("cocycle depth exceeds the eigendata depth")


def _window_indices(rpf: RpfData, length: int, rows: np.ndarray) -> np.ndarray:
    """Depth-m window indices of every position in an array of symbol rows."""
    sft = rpf.sft
    m = rpf.depth
    a = sft.alphabet_size
    lookup = np.full(a**m, -1, dtype=np.int64)
    powers = a ** np.arange(m - 1, -1, -1)
    codes = rpf.sft.word_array(m) @ powers
    lookup[codes] = np.arange(len(codes))
    n_windows = length - m + 1
    out = np.empty((rows.shape[0], n_windows), dtype=np.int64)
    for i in range(n_windows):
        out[:, i] = lookup[rows[:, i : i + m] @ powers]
    return out


def _q_matrix(psi: LocalObservable, freqs: np.ndarray) -> np.ndarray:
    """q_xi(w) = transform of conj(psi) at each support frequency."""
    return psi.transform_many(freqs, conjugate_input=True)


def _pair_values(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    f_n: np.ndarray,
    psi_idx: np.ndarray,
    phi_idx: np.ndarray,
    q_mat: np.ndarray,
) -> np.ndarray:
    """Fiber pairing per long word: sum over spectral components of
    c_w'(xi) exp(-i f_n xi) q_xi(w)."""
    freqs = phi.frequencies()
    comp = phi.component_weights()
    out = np.zeros(len(f_n), dtype=complex)
    chunk = max(1, int(4_000_000 / max(len(freqs), 1)))
    for lo in range(0, len(f_n), chunk):
        hi = lo + chunk
        phase = np.exp(-1j * np.outer(f_n[lo:hi], freqs))
        out[lo:hi] = np.sum(comp[phi_idx[lo:hi]] * phase * q_mat[psi_idx[lo:hi]], axis=1)
    return out


def cov_exact(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    n: int,
    budget: int = 1 << 21,
) -> complex:
    """Exact covariance at time n by full enumeration of depth-(n+m) cylinders."""
    _check_depths(rpf, f, phi, psi)
    sft = rpf.sft
    m = rpf.depth
    length = n + m
    words = sft.words(length)
    if len(words) > budget:
        raise BudgetExceeded(f"{len(words)} cylinders exceed the budget {budget}")
    rows = sft.word_array(length)
    win = _window_indices(rpf, length, rows)
    mu = rpf.mu[win[:, length - m]]
    for i in range(length - m):
        mu = mu * rpf.g[win[:, i]]
    fvals = f.as_array(sft, m)
    f_n = fvals[win[:, :n]].sum(axis=1) if n > 0 else np.zeros(len(words))
    q_mat = _q_matrix(psi, phi.frequencies())
    inner = _pair_values(rpf, f, phi, psi, f_n, win[:, 0], win[:, n], q_mat)
    total = complex(np.dot(mu, inner))
    return total - nu_av_global(phi, rpf) * nu_local(psi, rpf)


def cov_direct(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    n: int,
    samples: int = 100_000,
    seed: int = 0,
) -> tuple[complex, float]:
    """Monte Carlo covariance: average the fiber pairing over Gibbs samples.

    Deterministic for a fixed seed; returns (estimate, standard error).
    """
    _check_depths(rpf, f, phi, psi)
    m = rpf.depth
    length = n + m
    chain = rpf._cache.setdefault("gibbs_chain", GibbsChain.from_rpf(rpf))
    rows = sample_windows(chain, length, samples, seed)
    win = _window_indices(rpf, length, rows)
    fvals = f.as_array(rpf.sft, m)
    f_n = fvals[win[:, :n]].sum(axis=1) if n > 0 else np.zeros(samples)
    keys = np.rec.fromarrays([win[:, 0], win[:, n], f_n], names="psi,phi,fn")
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    q_mat = _q_matrix(psi, phi.frequencies())
    inner_u = _pair_values(
        rpf, f, phi, psi,
        np.asarray(uniq.fn, dtype=float),
        np.asarray(uniq.psi, dtype=np.int64),
        np.asarray(uniq.phi, dtype=np.int64),
        q_mat,
    )
    mean = complex(np.dot(counts, inner_u) / samples)
    dev2 = np.abs(inner_u - mean) ** 2
    var = float(np.dot(counts, dev2) / max(samples - 1, 1))
    stderr = float(np.sqrt(var / samples))
    value = mean - nu_av_global(phi, rpf) * nu_local(psi, rpf)
    return value, stderr


@dataclass(frozen=True)
class SpectralCov:
    """Frequency-split covariance: total value plus the three band sums.

    band_zero collects atoms at frequency exactly 0, band_low the remaining
    components with |xi| < n**(-alpha), band_high the rest; the bands sum to
    the pairing total and value = total - nu_av * nu(psi).
    """

    n: int
    alpha: float
    value: complex
    band_zero: complex
    band_low: complex
    band_high: complex

    @property
    def total(self) -> complex:
        return self.band_zero + self.band_low + self.band_high


@dataclass(eq=False)
class _SpectralEngine:
    """Eigendecomposition of T_{-xi} per support frequency, reused across n.

    For each frequency the pairing reduces to sum_k a[j, k] * d[j, k]**n with
    d the eigenvalues and a the projection coefficients of mu-weighted
    components against q_xi; ill-conditioned frequencies fall back to
    repeated matrix application.
    """

    rpf: RpfData
    f: FiberCocycle
    phi: GlobalObservable
    psi: LocalObservable
    freqs: np.ndarray
    coeff: np.ndarray
    eigvals: np.ndarray
    fallback: dict

    @classmethod
    def build(
        cls, rpf: RpfData, f: FiberCocycle, phi: GlobalObservable, psi: LocalObservable
    ) -> "_SpectralEngine":
        _check_depths(rpf, f, phi, psi)
        freqs = phi.frequencies()
        comp = phi.component_weights()
        q_mat = _q_matrix(psi, freqs)
        n_f = len(freqs)
        n_w = len(rpf.words)
        coeff = np.zeros((n_f, n_w), dtype=complex)
        eigvals = np.zeros((n_f, n_w), dtype=complex)
        fallback: dict = {}
        for j, xi in enumerate(freqs):
            mat = twisted_matrix(rpf, f, -float(xi)).matrix
            weights = rpf.mu * comp[:, j]
            q = q_mat[:, j]
            try:
                d, vecs = np.linalg.eig(mat)
                cond = np.linalg.cond(vecs)
                if not np.isfinite(cond) or cond > _EIG_COND_LIMIT:
                    raise np.linalg.LinAlgError
                left = weights @ vecs
                right = np.linalg.solve(vecs, q)
                coeff[j] = left * right
                eigvals[j] = d
            except np.linalg.LinAlgError:
                fallback[j] = (mat, weights, q)
        return cls(
            rpf=rpf, f=f, phi=phi, psi=psi,
            freqs=freqs, coeff=coeff, eigvals=eigvals, fallback=fallback,
        )

    def band_values(self, n: int) -> np.ndarray:
        """Per-frequency pairing values at time n."""
        powered = self.eigvals**n
        vals = np.sum(self.coeff * powered, axis=1)
        for j, (mat, weights, q) in self.fallback.items():
            cur = q.copy()
            for _ in range(n):
                cur = mat @ cur
            vals[j] = np.dot(weights, cur)
        return vals


def cov_spectral(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    n: int,
    alpha: float = 0.4,
    engine: _SpectralEngine | None = None,
) -> SpectralCov:
    """Frequency-split operator evaluation of the covariance at time n."""
    if engine is None:
        engine = _SpectralEngine.build(rpf, f, phi, psi)
    split = frequency_split(phi, n, alpha)
    if len(phi.nodes) and n > 0:
        closest = float(np.min(np.abs(phi.nodes)))
        if closest >= split.radius:
            warnings.warn(
                f"no density node below the band radius {split.radius:.3g}",
                QuadratureWarning,
            )
    vals = engine.band_values(n)
    b0 = complex(np.sum(vals[split.zero_band]))
    bl = complex(np.sum(vals[split.low_band]))
    bh = complex(np.sum(vals[split.high_band]))
    value = b0 + bl + bh - nu_av_global(phi, rpf) * nu_local(psi, rpf)
    return SpectralCov(n=n, alpha=alpha, value=value, band_zero=b0, band_low=bl, band_high=bh)


@dataclass(eq=False)
class CorrelationSeries:
    """Covariance estimates over strictly increasing times."""

    ns: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    estimator: str
    band_zero: np.ndarray | None = None
    band_low: np.ndarray | None = None
    band_high: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not np.all(np.diff(self.ns) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.errors < 0):
            raise ValueError("errors must be nonnegative")


def quadrature_error_floor(phi: GlobalObservable, psi: LocalObservable) -> float:
    """Heuristic absolute error of the exact and spectral estimators."""
    return 1e-12 * max(phi.total_variation() * psi.max_const(0), 1e-6)


def cov_series_spectral(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    ns: Sequence[int],
    alpha: float = 0.4,
) -> CorrelationSeries:
    engine = _SpectralEngine.build(rpf, f, phi, psi)
    ns_arr = np.array(sorted(set(int(n) for n in ns)))
    outs = [cov_spectral(rpf, f, phi, psi, int(n), alpha, engine=engine) for n in ns_arr]
    err = quadrature_error_floor(phi, psi)
    return CorrelationSeries(
        ns=ns_arr,
        values=np.array([o.value for o in outs]),
        errors=np.full(len(ns_arr), err),
        estimator="spectral",
        band_zero=np.array([o.band_zero for o in outs]),
        band_low=np.array([o.band_low for o in outs]),
        band_high=np.array([o.band_high for o in outs]),
    )


def cov_series_exact(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    ns: Sequence[int],
    budget: int = 1 << 21,
) -> CorrelationSeries:
    ns_arr = np.array(sorted(set(int(n) for n in ns)))
    vals = np.array([cov_exact(rpf, f, phi, psi, int(n), budget=budget) for n in ns_arr])
    err = quadrature_error_floor(phi, psi)
    return CorrelationSeries(ns=ns_arr, values=vals, errors=np.full(len(ns_arr), err), estimator="exact")


def cov_series_direct(
    rpf: RpfData,
    f: FiberCocycle,
    phi: GlobalObservable,
    psi: LocalObservable,
    ns: Sequence[int],
    samples: int = 100_000,
    seed: int = 0,
) -> CorrelationSeries:
    """Monte Carlo series; each time n draws from its own derived seed."""
    ns_arr = np.array(sorted(set(int(n) for n in ns)))
    vals, errs = [], []
    for n in ns_arr:
        v, e = cov_direct(rpf, f, phi, psi, int(n), samples=samples, seed=seed + int(n))
        vals.append(v)
        errs.append(e)
    return CorrelationSeries(
        ns=ns_arr, values=np.array(vals), errors=np.array(errs), estimator="direct"
    )


@dataclass(frozen=True)
class RateFit:
    """Log-log decay fit with a per-level rapid-decay verdict.

    The verdict at level ell passes when |cov(n)| * n**ell never rises more
    than a factor 10 above its value at the first usable window point, i.e.
    the left edge witnesses the polynomial constant for the whole window.
    """

    window: tuple[int, int]
    exponent: float
    ci: tuple[float, float]
    verdicts: dict[int, bool]
    n_used: int


def rate_fit(
    series: CorrelationSeries,
    window: tuple[int, int],
    levels: Sequence[int] = (1, 2, 3, 4, 5, 6),
    floor_factor: float = 10.0,
) -> RateFit:
    """Least-squares slope of log |cov| against log n on a window.

    Points with |cov| below floor_factor times the stored quadrature error
    are excluded (noise floor); fewer than five usable points raises
    DegenerateWindow.
    """
    lo, hi = window
    mask = (series.ns >= lo) & (series.ns <= hi)
    mask &= np.abs(series.values) > floor_factor * series.errors
    ns = series.ns[mask].astype(float)
    vals = np.abs(series.values[mask])
    if len(ns) < 5:
        raise DegenerateWindow(f"only {len(ns)} usable points in window {window}")
    x = np.log(ns)
    y = np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(len(ns) - 2, 1)
    se = float(np.sqrt(np.sum(resid**2) / dof / np.sum((x - x.mean()) ** 2)))
    verdicts = {}
    for ell in levels:
        weighted = vals * ns**ell
        verdicts[int(ell)] = bool(np.max(weighted) <= 10.0 * weighted[0])
    return RateFit(
        window=(int(lo), int(hi)),
        exponent=float(slope),
        ci=(float(slope - 1.96 * se), float(slope + 1.96 * se)),
        verdicts=verdicts,
        n_used=int(len(ns)),
    )


@dataclass(frozen=True)
class LfBoundReport:
    """Fit of |cov(n)| <= C (LF(Phi, n^(eps - 1/2)) + n^-k)."""

    c: float
    passed: bool
    ratios: np.ndarray


def lf_bound_check(
    series: CorrelationSeries,
    phi: GlobalObservable,
    rpf: RpfData,
    k: int = 4,
    eps: float = 0.1,
) -> LfBoundReport:
    """Fit the smallest envelope constant and test its stability.

    The fitted C is the largest ratio of |cov| to the envelope; the check
    passes when the ratio does not trend upward, measured as the second-half
    maximum staying within a factor 10 of the first-half maximum (an
    unbounded ratio means the series genuinely decays slower than the
    envelope).
    """
    env = np.array(
        [
            low_freq_variation(phi, rpf, float(n) ** (eps - 0.5)) + float(n) ** (-k)
            for n in series.ns
        ]
    )
    ratios = np.abs(series.values) / env
    c = float(np.max(ratios))
    half = len(ratios) // 2
    if half == 0:
        passed = True
    else:
        passed = bool(np.max(ratios[half:]) <= 10.0 * np.max(ratios[:half]) + 1e-300)
    return LfBoundReport(c=c, passed=passed, ratios=ratios)
