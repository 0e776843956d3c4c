"""Named systems and observables shared by the CLI, the tests, and the docs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import sici

from .errors import ConfigError
from .gibbs import Potential, RpfData, rpf_eigendata
from .observables import GlobalObservable, LocalObservable
from .skewprod import FiberCocycle, center
from .symbolic import SftSpace, build_sft, parse_word

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SystemPreset:
    name: str
    description: str
    alphabet_size: int
    transitions: tuple[tuple[int, ...], ...]
    theta: float
    potential_depth: int
    potential_table: tuple[tuple[str, float], ...]
    cocycle_depth: int
    cocycle_table: tuple[tuple[str, float], ...]


SYSTEMS: dict[str, SystemPreset] = {
    "bernoulli_s1": SystemPreset(
        name="bernoulli_s1",
        description="full 2-shift, uniform Bernoulli measure, non-lattice depth-2 cocycle (1, -1, sqrt2, -sqrt2)",
        alphabet_size=2,
        transitions=((1, 1), (1, 1)),
        theta=0.5,
        potential_depth=1,
        potential_table=(("0", -math.log(2.0)), ("1", -math.log(2.0))),
        cocycle_depth=2,
        cocycle_table=(("00", 1.0), ("01", -1.0), ("10", SQRT2), ("11", -SQRT2)),
    ),
    "golden_mean": SystemPreset(
        name="golden_mean",
        description="golden-mean shift (11 forbidden) with zero potential: Parry measure, eigenvalue (1+sqrt5)/2",
        alphabet_size=2,
        transitions=((1, 1), (1, 0)),
        theta=0.5,
        potential_depth=1,
        potential_table=(("0", 0.0), ("1", 0.0)),
        cocycle_depth=2,
        cocycle_table=(("00", 1.0), ("01", -1.0), ("10", SQRT2)),
    ),
    "lattice_counterexample": SystemPreset(
        name="lattice_counterexample",
        description="full 2-shift with cocycle values in {+1, -1}: lattice-valued, NOT accessible (negative control)",
        alphabet_size=2,
        transitions=((1, 1), (1, 1)),
        theta=0.5,
        potential_depth=1,
        potential_table=(("0", -math.log(2.0)), ("1", -math.log(2.0))),
        cocycle_depth=2,
        cocycle_table=(("00", 1.0), ("01", -1.0), ("10", 1.0), ("11", -1.0)),
    ),
}


@dataclass(eq=False)
class SystemBundle:
    """A built system: shift space, eigendata at the working depth, centered cocycle."""

    name: str
    sft: SftSpace
    potential: Potential
    rpf: RpfData
    cocycle: FiberCocycle


def build_system(name: str, m: int | None = None) -> SystemBundle:
    if name not in SYSTEMS:
        raise ConfigError(f"system.preset: unknown preset {name!r}")
    spec = SYSTEMS[name]
    sft = build_sft(spec.alphabet_size, np.array(spec.transitions, dtype=bool), spec.theta)
    u = Potential.from_table(
        sft, spec.potential_depth, {parse_word(k): v for k, v in spec.potential_table}
    )
    depth = m if m is not None else max(spec.potential_depth, spec.cocycle_depth)
    rpf = rpf_eigendata(sft, u, depth)
    f_raw = FiberCocycle.from_table(
        sft, spec.cocycle_depth, {parse_word(k): v for k, v in spec.cocycle_table}
    )
    f = center(f_raw, rpf)
    return SystemBundle(name=name, sft=sft, potential=u, rpf=rpf, cocycle=f)


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


def gaussian_local(sft: SftSpace, depth: int, grid: np.ndarray | None = None) -> LocalObservable:
    return LocalObservable.word_independent(
        sft, depth, lambda r: np.exp(-0.5 * r * r), grid=grid
    )


def mollified_indicator_local(
    sft: SftSpace, depth: int, grid: np.ndarray | None = None
) -> LocalObservable:
    """Smooth compactly supported plateau: 1 on [-1/2, 1/2], 0 outside [-1, 1]."""

    def bump(r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        inner = np.abs(r) <= 0.5
        out[inner] = 1.0
        edge = (np.abs(r) > 0.5) & (np.abs(r) < 1.0)
        t = (1.0 - np.abs(r[edge])) / 0.5
        out[edge] = _smoothstep(t)
        return out

    return LocalObservable.word_independent(sft, depth, bump, grid=grid)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    # C-infinity transition built from exp(-1/t)
    def phi(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    return phi(t) / (phi(t) + phi(1.0 - t))


def cosine_global(sft: SftSpace, depth: int, omega: float = 1.0) -> GlobalObservable:
    """Phi(r) = cos(omega r): atoms of weight 1/2 at +-omega, no density."""
    return GlobalObservable.from_parts(
        sft, depth, atoms=[(-omega, 0.5), (omega, 0.5)]
    )


def const_one_global(sft: SftSpace, depth: int) -> GlobalObservable:
    return GlobalObservable.from_parts(sft, depth, atoms=[(0.0, 1.0)])


def gaussian_global(
    sft: SftSpace, depth: int, xi_max: float = 8.0, dxi: float = 0.0125
) -> GlobalObservable:
    """Phi(r) = exp(-r^2/2): standard normal spectral density, midpoint nodes."""
    half = np.arange(int(round(xi_max / dxi))) * dxi + 0.5 * dxi
    nodes = np.concatenate([-half[::-1], half])
    weights = np.full(nodes.shape, dxi)
    dens = np.exp(-0.5 * nodes * nodes) / math.sqrt(2.0 * math.pi)
    return GlobalObservable.from_parts(
        sft, depth, nodes=nodes, node_weights=weights, density=dens
    )


def inverse_abs_density(xi: np.ndarray) -> np.ndarray:
    """Spectral density of Phi(r) = 1/(1 + |r|).

    For xi > 0 the Fourier inversion evaluates to
    (1/pi) [ sin(xi) (pi/2 - Si(xi)) - cos(xi) Ci(xi) ],
    even in xi, with an integrable logarithmic singularity at 0.
    """
    x = np.abs(np.asarray(xi, dtype=float))
    si, ci = sici(x)
    with np.errstate(invalid="ignore"):
        val = (np.sin(x) * (0.5 * math.pi - si) - np.cos(x) * ci) / math.pi
    return val


def inverse_abs_global(
    sft: SftSpace,
    depth: int,
    xi_min: float = 1e-6,
    xi_max: float = 200.0,
    ratio: float = 1.08,
) -> GlobalObservable:
    """Phi(r) = 1/(1+|r|): geometric node ladder resolving the log singularity."""
    edges = [xi_min]
    while edges[-1] < xi_max:
        edges.append(edges[-1] * ratio)
    edges = np.array(edges)
    mids = np.sqrt(edges[:-1] * edges[1:])
    widths = np.diff(edges)
    nodes = np.concatenate([-mids[::-1], mids])
    weights = np.concatenate([widths[::-1], widths])
    dens = inverse_abs_density(nodes)
    return GlobalObservable.from_parts(
        sft, depth, nodes=nodes, node_weights=weights, density=dens
    )


@dataclass(frozen=True)
class ObservablePreset:
    name: str
    kind: str  # "local", "global", or "both"
    description: str
    local_builder: Callable | None
    global_builder: Callable | None


OBSERVABLES: dict[str, ObservablePreset] = {
    "gaussian_bump": ObservablePreset(
        name="gaussian_bump",
        kind="both",
        description="exp(-r^2/2); usable as local observable or as global observable with normal spectral density",
        local_builder=gaussian_local,
        global_builder=gaussian_global,
    ),
    "cosine": ObservablePreset(
        name="cosine",
        kind="global",
        description="cos(r): spectral atoms at +-1, empty low-frequency band (rapid-mixing regime)",
        local_builder=None,
        global_builder=cosine_global,
    ),
    "inverse_abs": ObservablePreset(
        name="inverse_abs",
        kind="global",
        description="1/(1+|r|): absolutely continuous spectral measure, optimal sqrt-decay showcase",
        local_builder=None,
        global_builder=inverse_abs_global,
    ),
    "mollified_indicator": ObservablePreset(
        name="mollified_indicator",
        kind="local",
        description="smooth plateau equal to 1 on [-1/2, 1/2], compact support [-1, 1]",
        local_builder=mollified_indicator_local,
        global_builder=None,
    ),
    "const_one": ObservablePreset(
        name="const_one",
        kind="global",
        description="constant 1: single spectral atom at frequency 0, unit average",
        local_builder=None,
        global_builder=const_one_global,
    ),
}


def build_local(name: str, sft: SftSpace, depth: int) -> LocalObservable:
    preset = OBSERVABLES.get(name)
    if preset is None or preset.local_builder is None:
        raise ConfigError(f"observables.local.preset: {name!r} is not a local observable preset")
    return preset.local_builder(sft, depth)


def build_global(name: str, sft: SftSpace, depth: int) -> GlobalObservable:
    preset = OBSERVABLES.get(name)
    if preset is None or preset.global_builder is None:
        raise ConfigError(f"observables.global.preset: {name!r} is not a global observable preset")
    return preset.global_builder(sft, depth)


def preset_listing() -> str:
    """Stable human-readable listing of systems and observables."""
    lines = ["systems:"]
    for name in SYSTEMS:
        lines.append(f"  {name}: {SYSTEMS[name].description}")
    lines.append("observables:")
    for name in OBSERVABLES:
        p = OBSERVABLES[name]
        lines.append(f"  {name} [{p.kind}]: {p.description}")
    return "\n".join(lines)
