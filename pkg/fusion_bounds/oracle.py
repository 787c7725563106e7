"""Exact tight bounds on E[f g] for small discrete conditional laws.

Also holds the property suite that checks them against the Cauchy-Schwarz bounds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .utils import (
    EmptyInputError,
    FloatArray,
    InputValidationError,
    MassMismatchError,
    UnsupportedSpecError,
    UsageError,
    logger,
)

MASS_TOL = 1e-12
MAX_EXHAUSTIVE_ATOMS = 4

type Atoms = Tuple[Tuple[float, float], ...]
type AtomPairs = Sequence[Tuple[float, float]]


def _atoms(pairs: AtomPairs, what: str) -> Atoms:
    out = tuple((float(v), float(p)) for v, p in pairs)
    if not out:
        raise EmptyInputError(f"{what} has no atoms")
    probs = np.array([p for _, p in out])
    if np.any(probs < 0):
        raise MassMismatchError(f"{what} has negative probabilities")
    if abs(probs.sum() - 1.0) > MASS_TOL:
        raise MassMismatchError(
            f"{what} probabilities sum to {probs.sum():.15g}, expected 1"
        )
    return out


@dataclass(frozen=True)
class XAtom:
    """Covariate atom x_j with weight w_j and the laws of f(Y, x_j) and g(Z, x_j)."""

    weight: float
    f_atoms: Atoms
    g_atoms: Atoms

    @classmethod
    def of(cls, weight: float, f_atoms: AtomPairs, g_atoms: AtomPairs) -> XAtom:
        if weight <= 0:
            raise MassMismatchError(f"x-atom weight must be positive, got {weight}")
        return cls(
            weight=float(weight),
            f_atoms=_atoms(f_atoms, "f law"),
            g_atoms=_atoms(g_atoms, "g law"),
        )

    def swapped(self) -> XAtom:
        return XAtom(weight=self.weight, f_atoms=self.g_atoms, g_atoms=self.f_atoms)


@dataclass(frozen=True)
class DiscreteConditional:
    atoms: Tuple[XAtom, ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise EmptyInputError("discrete conditional has no x-atoms")
        total = sum(a.weight for a in self.atoms)
        if abs(total - 1.0) > MASS_TOL:
            raise MassMismatchError(f"x-atom weights sum to {total:.15g}, expected 1")

    @classmethod
    def single(cls, f_atoms: AtomPairs, g_atoms: AtomPairs) -> DiscreteConditional:
        return cls(atoms=(XAtom.of(1.0, f_atoms, g_atoms),))

    @classmethod
    def uniform(
        cls, f_values: Sequence[float], g_values: Sequence[float]
    ) -> DiscreteConditional:
        """One x-atom with uniform laws on the given support points."""
        return cls.single(
            [(v, 1.0 / len(f_values)) for v in f_values],
            [(v, 1.0 / len(g_values)) for v in g_values],
        )

    def swapped(self) -> DiscreteConditional:
        return DiscreteConditional(atoms=tuple(a.swapped() for a in self.atoms))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "atoms": [
                {
                    "weight": a.weight,
                    "f": [list(p) for p in a.f_atoms],
                    "g": [list(p) for p in a.g_atoms],
                }
                for a in self.atoms
            ]
        }


def _sorted(atoms: Atoms) -> Tuple[FloatArray, FloatArray]:
    values = np.array([v for v, _ in atoms])
    probs = np.array([p for _, p in atoms])
    order = np.argsort(values, kind="stable")
    return values[order], probs[order]


def _quantile(qs: FloatArray, cum: FloatArray, values: FloatArray) -> FloatArray:
    idx = np.searchsorted(cum, qs, side="left")
    return values[np.clip(idx, 0, values.shape[0] - 1)]


def _comonotone_expectation(f_atoms: Atoms, g_atoms: Atoms) -> float:
    """E[F^-1(U) G^-1(U)]: the northwest-corner coupling of the sorted marginals."""
    f_values, f_probs = _sorted(f_atoms)
    g_values, g_probs = _sorted(g_atoms)
    f_cum = np.cumsum(f_probs)
    g_cum = np.cumsum(g_probs)
    qs = np.unique(np.concatenate([f_cum, g_cum]))
    qs = qs[qs > 0]
    mass = np.diff(np.concatenate([[0.0], qs]))
    f_q = _quantile(qs, f_cum, f_values)
    g_q = _quantile(qs, g_cum, g_values)
    return float(np.sum(mass * f_q * g_q))


def _negated(atoms: Atoms) -> Atoms:
    return tuple((-v, p) for v, p in atoms)


def tight_bounds_discrete(dc: DiscreteConditional) -> Tuple[float, float]:
    """Exact inf and sup of E[f g] over all couplings of the conditional laws."""
    lower = 0.0
    upper = 0.0
    for atom in dc.atoms:
        upper += atom.weight * _comonotone_expectation(atom.f_atoms, atom.g_atoms)
        # antitone pairing: inf E[fg] = -sup E[f (-g)]
        antitone = _comonotone_expectation(atom.f_atoms, _negated(atom.g_atoms))
        lower -= atom.weight * antitone
    return lower, upper


def _equal_mass_values(atoms: Atoms) -> Optional[FloatArray]:
    probs = np.array([p for _, p in atoms])
    if len(atoms) > MAX_EXHAUSTIVE_ATOMS:
        return None
    if np.max(np.abs(probs - 1.0 / len(atoms))) > MASS_TOL:
        return None
    return np.array([v for v, _ in atoms])


def supports_exhaustive(dc: DiscreteConditional) -> bool:
    for atom in dc.atoms:
        f_values = _equal_mass_values(atom.f_atoms)
        g_values = _equal_mass_values(atom.g_atoms)
        if f_values is None or g_values is None or f_values.shape != g_values.shape:
            return False
    return True


def tight_bounds_exhaustive(dc: DiscreteConditional) -> Tuple[float, float]:
    """Enumerates every permutation coupling of equal-mass atoms (at most 4 per law).

    Permutation couplings are the extreme points of the equal-mass coupling
    polytope, so their min and max are the tight bounds.
    """
    if not supports_exhaustive(dc):
        raise UnsupportedSpecError(
            "exhaustive enumeration needs equal-mass laws with the same number "
            f"(<= {MAX_EXHAUSTIVE_ATOMS}) of atoms"
        )
    lower = 0.0
    upper = 0.0
    for atom in dc.atoms:
        f_values = np.array([v for v, _ in atom.f_atoms])
        g_values = np.array([v for v, _ in atom.g_atoms])
        k = f_values.shape[0]
        totals = [
            float(np.mean(f_values * g_values[list(perm)]))
            for perm in itertools.permutations(range(k))
        ]
        lower += atom.weight * min(totals)
        upper += atom.weight * max(totals)
    return lower, upper


def _mean_var(atoms: Atoms) -> Tuple[float, float]:
    values = np.array([v for v, _ in atoms])
    probs = np.array([p for _, p in atoms])
    mean = float(probs @ values)
    return mean, float(probs @ (values - mean) ** 2)


def cs_bounds_discrete(dc: DiscreteConditional) -> Tuple[float, float]:
    """sum_j w_j [m_Y,j m_Z,j -/+ sqrt(v_Y,j v_Z,j)] from the exact per-atom moments."""
    lower = 0.0
    upper = 0.0
    for atom in dc.atoms:
        m_f, v_f = _mean_var(atom.f_atoms)
        m_g, v_g = _mean_var(atom.g_atoms)
        spread = float(np.sqrt(v_f * v_g))
        lower += atom.weight * (m_f * m_g - spread)
        upper += atom.weight * (m_f * m_g + spread)
    return lower, upper


def _random_law(rng: np.random.Generator, size: int, equal_mass: bool) -> Atoms:
    values = rng.normal(size=size)
    probs = np.full(size, 1.0 / size) if equal_mass else rng.dirichlet(np.ones(size))
    probs = probs / probs.sum()
    return tuple(zip(values.tolist(), probs.tolist()))


def _renormalized(pairs: Atoms) -> Atoms:
    # absorb the cumulative rounding error into the last atom
    probs = [p for _, p in pairs]
    probs[-1] = 1.0 - sum(probs[:-1])
    return tuple((v, p) for (v, _), p in zip(pairs, probs))


def _weights(rng: np.random.Generator, size: int) -> List[float]:
    weights = rng.dirichlet(np.ones(size)).tolist()
    weights[-1] = 1.0 - sum(weights[:-1])
    return weights


def random_discrete_conditional(
    rng: np.random.Generator,
    *,
    max_x_atoms: int = 3,
    max_support: int = 4,
    equal_mass: bool = False,
) -> DiscreteConditional:
    """Random instance; ``equal_mass`` makes f and g uniform on equally many points."""
    if max_x_atoms < 1 or max_support < 1:
        raise InputValidationError("instance sizes must be positive")
    n_x = int(rng.integers(1, max_x_atoms + 1))
    atoms = []
    for weight in _weights(rng, n_x):
        size_f = int(rng.integers(1, max_support + 1))
        size_g = size_f if equal_mass else int(rng.integers(1, max_support + 1))
        atoms.append(
            XAtom.of(
                weight,
                _renormalized(_random_law(rng, size_f, equal_mass)),
                _renormalized(_random_law(rng, size_g, equal_mass)),
            )
        )
    return DiscreteConditional(atoms=tuple(atoms))


def _symmetric_law(rng: np.random.Generator, size: int) -> Atoms:
    """Law symmetric about a random center c: pairs c -/+ d_i, plus c when odd-sized."""
    center = float(rng.normal())
    half = size // 2
    offsets = np.abs(rng.normal(size=half)) + 1e-3
    pair_probs = rng.dirichlet(np.ones(half + size % 2))
    pairs: List[Tuple[float, float]] = []
    for d, p in zip(offsets.tolist(), pair_probs[:half].tolist()):
        pairs.append((center - d, p / 2.0))
        pairs.append((center + d, p / 2.0))
    if size % 2:
        pairs.append((center, float(pair_probs[-1])))
    return _renormalized(tuple(pairs))


def location_scale_conditional(
    rng: np.random.Generator,
    *,
    max_x_atoms: int = 3,
    max_support: int = 4,
) -> DiscreteConditional:
    """Instance where each g law is the f law mapped through g = (f - b_j) / a_j.

    The f laws are symmetric, so the decreasing image (a_j < 0) is again an
    affine image of f and both Cauchy-Schwarz bounds are attained.
    """
    if max_x_atoms < 1 or max_support < 1:
        raise InputValidationError("instance sizes must be positive")
    n_x = int(rng.integers(1, max_x_atoms + 1))
    atoms = []
    for weight in _weights(rng, n_x):
        f_law = _symmetric_law(rng, int(rng.integers(1, max_support + 1)))
        scale = float(rng.uniform(0.2, 5.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        shift = float(rng.normal())
        g_law = tuple(((v - shift) / scale, p) for v, p in f_law)
        atoms.append(XAtom.of(weight, f_law, g_law))
    return DiscreteConditional(atoms=tuple(atoms))


@dataclass
class OracleSuiteReport:
    """Outcome of the sandwich / tightness / enumeration / symmetry checks."""

    seed: int
    tolerance: float
    random_instances: int = 0
    location_scale_instances: int = 0
    exhaustive_checks: int = 0
    sandwich_violations: int = 0
    tightness_violations: int = 0
    exhaustive_mismatches: int = 0
    swap_mismatches: int = 0
    max_sandwich_violation: float = 0.0
    max_tightness_gap: float = 0.0
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.sandwich_violations
            or self.tightness_violations
            or self.exhaustive_mismatches
            or self.swap_mismatches
        )

    def to_dict(self) -> Dict[str, Any]:
        out = dict(self.__dict__)
        out["ok"] = self.ok
        return out


def _check_common(
    dc: DiscreteConditional, report: OracleSuiteReport, index: int, kind: str
) -> Tuple[float, ...]:
    tight_l, tight_u = tight_bounds_discrete(dc)
    cs_l, cs_u = cs_bounds_discrete(dc)
    tol = report.tolerance
    violation = max(cs_l - tight_l, tight_l - tight_u, tight_u - cs_u, 0.0)
    report.max_sandwich_violation = max(report.max_sandwich_violation, violation)
    if violation > tol:
        report.sandwich_violations += 1
        report.failures.append(
            {"check": "sandwich", "kind": kind, "index": index, "violation": violation}
        )

    swapped_l, swapped_u = tight_bounds_discrete(dc.swapped())
    swapped_cs_l, swapped_cs_u = cs_bounds_discrete(dc.swapped())
    swap_gap = max(
        abs(swapped_l - tight_l),
        abs(swapped_u - tight_u),
        abs(swapped_cs_l - cs_l),
        abs(swapped_cs_u - cs_u),
    )
    if swap_gap > tol:
        report.swap_mismatches += 1
        report.failures.append(
            {"check": "swap", "kind": kind, "index": index, "gap": swap_gap}
        )

    if supports_exhaustive(dc):
        report.exhaustive_checks += 1
        ex_l, ex_u = tight_bounds_exhaustive(dc)
        gap = max(abs(ex_l - tight_l), abs(ex_u - tight_u))
        if gap > max(tol, 1e-12):
            report.exhaustive_mismatches += 1
            report.failures.append(
                {"check": "exhaustive", "kind": kind, "index": index, "gap": gap}
            )
    return tight_l, tight_u, cs_l, cs_u


def run_oracle_suite(
    n_random: int = 200,
    n_location_scale: int = 50,
    seed: int = 0,
    *,
    tolerance: float = 1e-10,
) -> OracleSuiteReport:
    """Checks CS sandwiching on random instances and tightness on location-scale ones.

    Every other random instance has equal-mass laws so the greedy coupling is
    also compared against exhaustive enumeration.
    """
    if n_random < 0 or n_location_scale < 0:
        raise UsageError("instance counts must be non-negative")
    if n_random + n_location_scale == 0:
        raise UsageError("the oracle suite needs at least one instance")
    rng = np.random.default_rng(seed)
    report = OracleSuiteReport(seed=seed, tolerance=tolerance)
    for i in range(n_random):
        dc = random_discrete_conditional(rng, equal_mass=i % 2 == 1)
        _check_common(dc, report, i, "random")
        report.random_instances += 1
    for i in range(n_location_scale):
        dc = location_scale_conditional(rng)
        tight_l, tight_u, cs_l, cs_u = _check_common(dc, report, i, "location-scale")
        gap = max(abs(cs_l - tight_l), abs(cs_u - tight_u))
        report.max_tightness_gap = max(report.max_tightness_gap, gap)
        if gap > tolerance:
            report.tightness_violations += 1
            report.failures.append(
                {"check": "tightness", "kind": "location-scale", "index": i, "gap": gap}
            )
        report.location_scale_instances += 1
    logger.info(
        "oracle suite: %d random, %d location-scale instances, %d failures",
        report.random_instances,
        report.location_scale_instances,
        len(report.failures),
    )
    return report
