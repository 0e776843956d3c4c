"""Good local and global observables and their spectral bookkeeping.

A local observable is a state-indexed fiber function sampled on a uniform
compact grid; its transform at frequency xi is the quadrature of
exp(-i xi r) psi(w, r) dr.  A global observable is a state-indexed complex
measure stored exactly as atoms (location, weight) plus an absolutely
continuous part sampled at quadrature nodes; the induced fiber function is
the transform Phi(w, r) = integral of exp(-i r xi) d eta_w(xi).

All downstream functionals (total variation, tail mass, low frequency
variation, correlation estimators) are computed from this one discrete
representation, so the different estimators see literally the same measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NotPositive
from .gibbs import RpfData
from .symbolic import SftSpace, StateFunction, Word


def fiber_grid(r_max: float = 40.0, dr: float = 1.0 / 64.0) -> np.ndarray:
    """Uniform symmetric grid including 0; default resolves smooth data to ~1e-8."""
    half = int(round(r_max / dr))
    return np.arange(-half, half + 1, dtype=float) * dr


@dataclass(eq=False)
class LocalObservable:
    """State-indexed fiber function on a shared grid, with smoothness metadata.

    values[i] is the fiber function of word i on grid; derivative stacks up
    to ell_max are precomputed by finite differences, and the constants
    max_const(ell) = sup_w L1-norm of the ell-th derivative and
    lip_const(ell) = sup over word pairs of the L1 distance of derivatives
    divided by the word metric are exact on the stored representation.
    """

    depth: int
    words: tuple[Word, ...]
    grid: np.ndarray
    values: np.ndarray
    theta: float
    ell_max: int = 2
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_callable(
        cls,
        sft: SftSpace,
        depth: int,
        func: Callable[[Word, np.ndarray], np.ndarray],
        grid: np.ndarray | None = None,
        ell_max: int = 2,
    ) -> "LocalObservable":
        grid = fiber_grid() if grid is None else np.asarray(grid, dtype=float)
        words = sft.words(depth)
        vals = np.array([np.asarray(func(w, grid), dtype=complex) for w in words])
        return cls(depth=depth, words=words, grid=grid, values=vals, theta=sft.theta, ell_max=ell_max)

    @classmethod
    def word_independent(
        cls,
        sft: SftSpace,
        depth: int,
        func: Callable[[np.ndarray], np.ndarray],
        grid: np.ndarray | None = None,
        ell_max: int = 2,
    ) -> "LocalObservable":
        return cls.from_callable(sft, depth, lambda _w, r: func(r), grid=grid, ell_max=ell_max)

    @property
    def dr(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def derivative(self, ell: int) -> np.ndarray:
        if ell == 0:
            return self.values
        key = ("deriv", ell)
        if key not in self._cache:
            lower = self.derivative(ell - 1)
            self._cache[key] = np.gradient(lower, self.grid, axis=1)
        return self._cache[key]

    def max_const(self, ell: int) -> float:
        der = self.derivative(ell)
        return float(np.max(np.sum(np.abs(der), axis=1)) * self.dr)

    def lip_const(self, ell: int) -> float:
        der = self.derivative(ell)
        n = len(self.words)
        if n <= 1:
            return 0.0
        dist = _metric_matrix(self.words, self.depth, self.theta)
        l1 = np.zeros((n, n))
        for i in range(n):
            l1[i] = np.sum(np.abs(der - der[i]), axis=1) * self.dr
        return float(np.max(l1 / dist))

    def transform(self, xi: float) -> StateFunction:
        """Quadrature of exp(-i xi r) psi(w, r) dr, as a depth-m state function."""
        kernel = np.exp(-1j * xi * self.grid)
        vals = self.values @ kernel * self.dr
        return StateFunction(depth=self.depth, words=self.words, values=vals)

    def transform_many(self, xis: np.ndarray, conjugate_input: bool = False) -> np.ndarray:
        """Matrix of transforms, shape (n_words, n_xi); optionally of conj(psi)."""
        xis = np.asarray(xis, dtype=float)
        src = np.conj(self.values) if conjugate_input else self.values
        out = np.empty((len(self.words), len(xis)), dtype=complex)
        chunk = 256
        for k in range(0, len(xis), chunk):
            kernel = np.exp(-1j * np.outer(self.grid, xis[k : k + chunk]))
            out[:, k : k + chunk] = src @ kernel * self.dr
        return out


def fiber_fourier(psi: LocalObservable, xi: float) -> StateFunction:
    """Transform of the local observable at one frequency (exp(-i xi r) kernel)."""
    return psi.transform(xi)


@dataclass(eq=False)
class GlobalObservable:
    """State-indexed complex spectral measure: exact atoms plus sampled density.

    atom_locs are exact locations shared across words with per-word complex
    atom_weights; the absolutely continuous part lives on midpoint-style
    nodes with positive quadrature weights and per-word density values.
    Either part may be empty.
    """

    depth: int
    words: tuple[Word, ...]
    theta: float
    atom_locs: np.ndarray
    atom_weights: np.ndarray
    nodes: np.ndarray
    node_weights: np.ndarray
    density: np.ndarray
    stated_tightness: tuple[float, float] | None = None

    @classmethod
    def from_parts(
        cls,
        sft: SftSpace,
        depth: int,
        atoms: Sequence[tuple[float, complex]] = (),
        nodes: np.ndarray | None = None,
        node_weights: np.ndarray | None = None,
        density: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
        word_factors: Callable[[Word], complex] | None = None,
        stated_tightness: tuple[float, float] | None = None,
    ) -> "GlobalObservable":
        words = sft.words(depth)
        n_w = len(words)
        locs = np.array([a for a, _ in atoms], dtype=float)
        base_weights = np.array([c for _, c in atoms], dtype=complex)
        factors = np.ones(n_w, dtype=complex)
        if word_factors is not None:
            factors = np.array([word_factors(w) for w in words], dtype=complex)
        atom_weights = np.outer(factors, base_weights) if len(locs) else np.zeros((n_w, 0), complex)
        if nodes is None:
            nodes_arr = np.zeros(0)
            weights_arr = np.zeros(0)
            dens = np.zeros((n_w, 0), dtype=complex)
        else:
            nodes_arr = np.asarray(nodes, dtype=float)
            weights_arr = np.asarray(node_weights, dtype=float)
            if callable(density):
                row = np.asarray(density(nodes_arr), dtype=complex)
                dens = np.outer(factors, row)
            else:
                dens = np.asarray(density, dtype=complex) * factors[:, None]
                if dens.ndim == 1:
                    dens = np.tile(dens, (n_w, 1))
        return cls(
            depth=depth,
            words=words,
            theta=sft.theta,
            atom_locs=locs,
            atom_weights=atom_weights,
            nodes=nodes_arr,
            node_weights=weights_arr,
            density=dens,
            stated_tightness=stated_tightness,
        )

    # -- measure functionals ------------------------------------------------

    def frequencies(self) -> np.ndarray:
        """All support frequencies (atoms then nodes)."""
        return np.concatenate([self.atom_locs, self.nodes])

    def component_weights(self) -> np.ndarray:
        """Per-word complex masses aligned with frequencies(): atom weights,
        then quadrature weight times density value."""
        dens_mass = self.density * self.node_weights[None, :]
        return np.concatenate([self.atom_weights, dens_mass], axis=1)

    def total_variation(self) -> float:
        """sup over words of the total variation of eta_w."""
        masses = np.abs(self.component_weights())
        return float(np.max(np.sum(masses, axis=1))) if masses.size else 0.0

    def variation_of_region(self, mask: np.ndarray) -> np.ndarray:
        """Per-word |eta_w| mass of the frequency components selected by mask."""
        masses = np.abs(self.component_weights())
        return np.sum(masses[:, mask], axis=1)

    def atom_at_zero(self) -> np.ndarray:
        """Per-word weight of the atom at frequency exactly 0 (0 if absent)."""
        out = np.zeros(len(self.words), dtype=complex)
        for j, loc in enumerate(self.atom_locs):
            if loc == 0.0:
                out += self.atom_weights[:, j]
        return out

    def fiber_values(self, word_index: int, s: np.ndarray) -> np.ndarray:
        """Phi(w, s) synthesized from the spectral representation."""
        s = np.asarray(s, dtype=float)
        freqs = self.frequencies()
        weights = self.component_weights()[word_index]
        return np.exp(-1j * np.outer(s, freqs)) @ weights

    def is_positive(self, tol: float = 1e-12) -> bool:
        w = self.component_weights()
        return bool(np.all(np.abs(w.imag) <= tol) and np.all(w.real >= -tol))


def nu_local(psi: LocalObservable, rpf: RpfData) -> complex:
    """Gibbs-average of the fiber integrals: sum of mu(C_w) * psi_hat_0(w)."""
    hat0 = psi.transform(0.0)
    return complex(np.dot(rpf.mu, hat0.values))


def nu_av_global(phi: GlobalObservable, rpf: RpfData) -> complex:
    """Infinite-volume average: the Gibbs-averaged atom weight at frequency 0."""
    return complex(np.dot(rpf.mu, phi.atom_at_zero()))


def low_freq_variation(phi: GlobalObservable, rpf: RpfData, r: float) -> float:
    """Averaged spectral mass in (-r, r) excluding the atom at 0.

    Atoms strictly inside (-r, r) other than 0 contribute |weight|; density
    components contribute quadrature mass for every node with |node| < r.
    """
    if r <= 0.0:
        raise ValueError("radius must be positive")
    freqs = phi.frequencies()
    n_atoms = len(phi.atom_locs)
    mask = np.abs(freqs) < r
    mask[:n_atoms] &= phi.atom_locs != 0.0
    per_word = phi.variation_of_region(mask)
    return float(np.dot(rpf.mu, per_word))


def tail_mass(phi: GlobalObservable, r: float) -> np.ndarray:
    """Per-word |eta_w| mass outside [-r, r]."""
    mask = np.abs(phi.frequencies()) > r
    return phi.variation_of_region(mask)


def tightness_check(
    phi: GlobalObservable, radii: Sequence[float]
) -> tuple[float, float, bool]:
    """Fit the tightest tail bound sup_w |eta_w|(outside [-r, r]) <= A r^-a.

    Returns (a, A, passed) where passed reports whether the stated constants
    on the observable (when present) hold on all words and radii; with no
    stated pair the fitted bound holds by construction and passed is True.
    """
    radii = sorted(float(r) for r in radii)
    if any(r < 1.0 for r in radii):
        raise ValueError("tightness radii must be >= 1")
    tails = np.array([np.max(tail_mass(phi, r)) for r in radii])
    positive = tails > 0.0
    if positive.sum() >= 2:
        slope, _ = np.polyfit(np.log(np.array(radii)[positive]), np.log(tails[positive]), 1)
        a_fit = float(-slope)
    else:
        a_fit = float("inf") if not positive.any() else 1.0
    if np.isfinite(a_fit) and positive.any():
        a_fit = max(a_fit, 1e-9)
        big_a = float(np.max(tails * np.array(radii) ** a_fit))
    else:
        big_a = 0.0
    passed = True
    if phi.stated_tightness is not None:
        a_stated, big_a_stated = phi.stated_tightness
        passed = bool(np.all(tails <= big_a_stated * np.array(radii) ** (-a_stated) + 1e-12))
    return a_fit, big_a, passed


def lipschitz_tail_check(
    phi: GlobalObservable, radii: Sequence[float], grid: np.ndarray | None = None
) -> bool:
    """Tail bound eta(outside [-r, r]) <= 2 L / r for positive measures.

    L is the measured fiber Lipschitz constant of the synthesized transform.
    Raises NotPositive when some eta_w carries negative or complex mass.
    """
    if not phi.is_positive():
        raise NotPositive("spectral measure has negative or complex mass")
    grid = fiber_grid(8.0, 1.0 / 256.0) if grid is None else grid
    lip = 0.0
    for i in range(len(phi.words)):
        vals = phi.fiber_values(i, grid)
        slopes = np.abs(np.diff(vals)) / np.diff(grid)
        lip = max(lip, float(np.max(slopes)))
    for r in radii:
        if r <= 0:
            raise ValueError("radii must be positive")
        if np.max(tail_mass(phi, r)) > 2.0 * lip / r + 1e-10:
            return False
    return True


def pushforward_once(phi: GlobalObservable, sft: SftSpace, f) -> GlobalObservable:
    """Spectral representation of Phi o F at depth m+1.

    The fiber measure of (x, r) -> Phi(shift x, r + f(x)) at word w is
    exp(-i xi f(w)) d eta_{shift w}(xi): same variation, shifted phases.
    """
    m1 = phi.depth + 1
    words1 = sft.words(m1)
    index = {w: i for i, w in enumerate(phi.words)}
    n1 = len(words1)
    atom_w = np.zeros((n1, len(phi.atom_locs)), dtype=complex)
    dens = np.zeros((n1, len(phi.nodes)), dtype=complex)
    for i, w in enumerate(words1):
        parent = index[w[1:][: phi.depth]]
        fw = f(w)
        atom_w[i] = phi.atom_weights[parent] * np.exp(-1j * phi.atom_locs * fw)
        dens[i] = phi.density[parent] * np.exp(-1j * phi.nodes * fw)
    return GlobalObservable(
        depth=m1,
        words=tuple(words1),
        theta=phi.theta,
        atom_locs=phi.atom_locs.copy(),
        atom_weights=atom_w,
        nodes=phi.nodes.copy(),
        node_weights=phi.node_weights.copy(),
        density=dens,
        stated_tightness=phi.stated_tightness,
    )


@dataclass(frozen=True)
class FrequencyGrid:
    """Band split of the spectral support at one time n: zero / low / high.

    The split radius is n**(-alpha); atoms exactly at 0 form the zero band,
    all other components with |xi| < radius the low band, the rest the high
    band.  Density nodes at 0 count as low (they carry a.c. mass).
    """

    alpha: float
    radius: float
    zero_band: np.ndarray
    low_band: np.ndarray
    high_band: np.ndarray


def frequency_split(phi: GlobalObservable, n: int, alpha: float) -> FrequencyGrid:
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    radius = float(n) ** (-alpha) if n > 0 else 1.0
    freqs = phi.frequencies()
    n_atoms = len(phi.atom_locs)
    is_atom = np.zeros(len(freqs), dtype=bool)
    is_atom[:n_atoms] = True
    zero = is_atom & (freqs == 0.0)
    low = (~zero) & (np.abs(freqs) < radius)
    high = ~(zero | low)
    return FrequencyGrid(alpha=alpha, radius=radius, zero_band=zero, low_band=low, high_band=high)


def _metric_matrix(words: tuple[Word, ...], depth: int, theta: float) -> np.ndarray:
    arr = np.array(words, dtype=np.int64).reshape(len(words), depth)
    n = arr.shape[0]
    plen = np.zeros((n, n), dtype=np.int64)
    alive = np.ones((n, n), dtype=bool)
    for t in range(depth):
        col = arr[:, t]
        alive &= col[:, None] == col[None, :]
        plen += alive
    return theta**plen
