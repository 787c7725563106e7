"""Seeded data-generating processes with known Cauchy-Schwarz bounds."""

from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, Literal, Optional, Tuple, Type

import numpy as np
from scipy import linalg
from scipy.special import expit

from .dataset import FusedDataset
from .estimands import DecomposableEstimand, LinearContrast, Product, Ratio
from .utils import FloatArray, InvalidSpecError, UnsupportedSpecError, logger

MIN_SAMPLE = 10
HEAVY_TAIL_SD = 15.0 ** (-1.0 / 6.0)

type Moments = Tuple[FloatArray, FloatArray, FloatArray, FloatArray]
type Draws = Tuple[FloatArray, FloatArray, FloatArray]


@dataclass(frozen=True)
class SimulatedSample:
    """Estimator-facing dataset plus the counterfactual responses it censors.

    ``hidden_y`` holds y on r=0 rows and ``hidden_z`` holds z on r=1 rows (NaN
    elsewhere); they exist for audits and are never passed to estimators.
    """

    data: FusedDataset
    hidden_y: FloatArray
    hidden_z: FloatArray


@dataclass(frozen=True)
class TrueBounds:
    theta_l: float
    theta_u: float
    standard_error: float = 0.0
    method: Literal["analytic", "monte-carlo"] = "analytic"

    @property
    def width(self) -> float:
        return self.theta_u - self.theta_l


class DgpSpec(ABC):
    """A simulation design: covariates, responses, selection into y and the estimand."""

    name: ClassVar[str]
    # moment learner the design is correctly specified for
    moment_model: ClassVar[Literal["ridge", "lognormal"]] = "ridge"

    @abstractmethod
    def estimand(self) -> DecomposableEstimand: ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> Draws:
        """Draws (x, y, z) for n units."""

    def sample_covariates(self, rng: np.random.Generator, n: int) -> FloatArray:
        """Draws the covariate marginal only; designs with free covariates override."""
        return self.sample(rng, n)[0]

    @abstractmethod
    def propensity(self, x: FloatArray) -> FloatArray: ...

    def true_moments(self, x: FloatArray) -> Moments:
        """Conditional mean and variance of f(Y, X) and g(Z, X) at each row of ``x``."""
        raise UnsupportedSpecError(
            f"{self.name} does not expose its conditional moments"
        )

    def analytic_cs_bounds(self) -> Optional[Tuple[float, float]]:
        return None

    def true_theta(self) -> Optional[float]:
        """The (partially identified) estimand itself, when known in closed form."""
        return None

    def params(self) -> Dict[str, Any]:
        fields = dataclasses.asdict(self)  # type: ignore[call-overload]
        return {"name": self.name, **fields}


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidSpecError(message)


@dataclass(frozen=True)
class HeavyTailLinear(DgpSpec):
    """Y = b^T X + sigma_y eps_Y, Z = b^T X + sigma_z eps_Z, eps = W^3, Var(eps) = 1.

    b is uniform on the unit sphere, X ~ N(0, I) and R | X ~ Bern(0.5).
    The estimand is E[YZ].
    """

    name: ClassVar[str] = "heavy-tail-linear"

    p_x: int = 20
    sigma_y: float = 1.0
    sigma_z: float = 1.0
    beta_seed: int = 0

    def __post_init__(self) -> None:
        _check(self.p_x >= 1, f"p_x must be >= 1, got {self.p_x}")
        _check(
            self.sigma_y >= 0 and self.sigma_z >= 0,
            f"noise scales must be >= 0, got {self.sigma_y}, {self.sigma_z}",
        )

    @property
    def beta(self) -> FloatArray:
        draw = np.random.default_rng(self.beta_seed).normal(size=self.p_x)
        return draw / np.linalg.norm(draw)

    def noise(self, rng: np.random.Generator, n: int) -> FloatArray:
        return rng.normal(0.0, HEAVY_TAIL_SD, size=n) ** 3

    def estimand(self) -> DecomposableEstimand:
        return Product()

    def sample_covariates(self, rng: np.random.Generator, n: int) -> FloatArray:
        return rng.normal(size=(n, self.p_x))

    def sample(self, rng: np.random.Generator, n: int) -> Draws:
        x = self.sample_covariates(rng, n)
        signal = x @ self.beta
        y = signal + self.sigma_y * self.noise(rng, n)
        z = signal + self.sigma_z * self.noise(rng, n)
        return x, y, z

    def propensity(self, x: FloatArray) -> FloatArray:
        return np.full(x.shape[0], 0.5)

    def true_moments(self, x: FloatArray) -> Moments:
        signal = x @ self.beta
        rows = x.shape[0]
        v_y = np.full(rows, self.sigma_y**2)
        v_z = np.full(rows, self.sigma_z**2)
        return signal, signal.copy(), v_y, v_z

    def analytic_cs_bounds(self) -> Optional[Tuple[float, float]]:
        # E[(b^T X)^2] = |b|^2 = 1
        spread = self.sigma_y * self.sigma_z
        return 1.0 - spread, 1.0 + spread


@dataclass(frozen=True)
class GaussianLinear(HeavyTailLinear):
    """HeavyTailLinear with standard normal noise."""

    name: ClassVar[str] = "gaussian-linear"

    def noise(self, rng: np.random.Generator, n: int) -> FloatArray:
        return rng.normal(size=n)


@dataclass(frozen=True)
class LogNormalRelative(DgpSpec):
    """(log Y, log Z) | X bivariate normal with correlation rho.

    The means are (b_y^T X, b_z^T X) and both variances are sigma^2.
    X ~ N(0, S) with S_ij = 0.3^|i-j|, R | X ~ Bern(expit(b_r^T X)) and the
    estimand is E[Y / Z]. All three coefficient vectors are drawn from
    N(0, 0.5^2 / p_x I) with ``beta_seed``.
    """

    name: ClassVar[str] = "lognormal-relative"
    moment_model: ClassVar[Literal["ridge", "lognormal"]] = "lognormal"

    p_x: int = 20
    sigma: float = 0.5
    rho: float = 0.3
    beta_seed: int = 0

    def __post_init__(self) -> None:
        _check(self.p_x >= 1, f"p_x must be >= 1, got {self.p_x}")
        _check(self.sigma > 0, f"sigma must be > 0, got {self.sigma}")
        _check(-1.0 < self.rho < 1.0, f"rho must lie in (-1, 1), got {self.rho}")

    @property
    def betas(self) -> Tuple[FloatArray, FloatArray, FloatArray]:
        rng = np.random.default_rng(self.beta_seed)
        draws = rng.normal(0.0, 0.5 / np.sqrt(self.p_x), size=(3, self.p_x))
        return draws[0], draws[1], draws[2]

    @property
    def covariance(self) -> FloatArray:
        return np.asarray(linalg.toeplitz(0.3 ** np.arange(self.p_x)))

    def estimand(self) -> DecomposableEstimand:
        return Ratio()

    def sample_covariates(self, rng: np.random.Generator, n: int) -> FloatArray:
        chol = linalg.cholesky(self.covariance, lower=True)
        return np.asarray(rng.normal(size=(n, self.p_x)) @ chol.T)

    def sample(self, rng: np.random.Generator, n: int) -> Draws:
        x = self.sample_covariates(rng, n)
        beta_y, beta_z, _ = self.betas
        base = rng.normal(size=(n, 2))
        eps_y = self.sigma * base[:, 0]
        mixed = self.rho * base[:, 0] + np.sqrt(1.0 - self.rho**2) * base[:, 1]
        eps_z = self.sigma * mixed
        return x, np.exp(x @ beta_y + eps_y), np.exp(x @ beta_z + eps_z)

    def propensity(self, x: FloatArray) -> FloatArray:
        return np.asarray(expit(x @ self.betas[2]))

    def true_moments(self, x: FloatArray) -> Moments:
        beta_y, beta_z, _ = self.betas
        s2 = self.sigma**2
        mu_y = x @ beta_y
        mu_g = -(x @ beta_z)
        spread = np.expm1(s2)
        return (
            np.exp(mu_y + s2 / 2.0),
            np.exp(mu_g + s2 / 2.0),
            np.exp(2.0 * mu_y + s2) * spread,
            np.exp(2.0 * mu_g + s2) * spread,
        )

    def _quadratic(self) -> float:
        beta_y, beta_z, _ = self.betas
        d = beta_y - beta_z
        return float(d @ self.covariance @ d)

    def analytic_cs_bounds(self) -> Optional[Tuple[float, float]]:
        s2 = self.sigma**2
        base = np.exp(self._quadratic() / 2.0 + s2)
        return float(base * (2.0 - np.exp(s2))), float(base * np.exp(s2))

    def true_theta(self) -> Optional[float]:
        return float(np.exp(self.sigma**2 * (1.0 - self.rho) + self._quadratic() / 2.0))


@dataclass(frozen=True)
class ValidationStudy(DgpSpec):
    """Gold-standard Z in R^2, surrogate X = Z + noise, Y = beta^T Z + eps.

    R | X ~ Bern(0.5).

    Z ~ N(0, [[1, rho], [rho, 1]]), X | Z ~ N(Z, sigma^2 [[1, tau], [tau, 1]]).
    The estimand E[Y (Z_1 - rho Z_2)] / (1 - rho^2) equals beta1.
    """

    name: ClassVar[str] = "validation-study"

    rho: float = 0.3
    sigma: float = 0.5
    tau: float = 0.3
    sigma_eps: float = 0.5
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self) -> None:
        _check(-1.0 < self.rho < 1.0, f"rho must lie in (-1, 1), got {self.rho}")
        _check(-1.0 < self.tau < 1.0, f"tau must lie in (-1, 1), got {self.tau}")
        _check(self.sigma > 0, f"sigma must be > 0, got {self.sigma}")
        _check(self.sigma_eps >= 0, f"sigma_eps must be >= 0, got {self.sigma_eps}")

    @property
    def beta(self) -> FloatArray:
        return np.array([self.beta1, self.beta2])

    @property
    def contrast(self) -> FloatArray:
        return np.array([1.0, -self.rho]) / (1.0 - self.rho**2)

    def _covariances(self) -> Tuple[FloatArray, FloatArray]:
        sigma_z = np.array([[1.0, self.rho], [self.rho, 1.0]])
        sigma_noise = self.sigma**2 * np.array([[1.0, self.tau], [self.tau, 1.0]])
        return sigma_z, sigma_noise

    def _posterior(self) -> Tuple[FloatArray, FloatArray]:
        """E[Z | x] = A x and Cov(Z | x) = C."""
        sigma_z, sigma_noise = self._covariances()
        solved = linalg.solve(sigma_z + sigma_noise, sigma_z, assume_a="pos")
        gain = np.asarray(solved).T
        cond = sigma_z - gain @ sigma_z
        return gain, 0.5 * (cond + cond.T)

    def estimand(self) -> DecomposableEstimand:
        return LinearContrast(z_contrast=self.contrast.tolist())

    def sample(self, rng: np.random.Generator, n: int) -> Draws:
        # x is generated from z, so the covariates come out of the joint draw
        sigma_z, sigma_noise = self._covariances()
        z = rng.normal(size=(n, 2)) @ linalg.cholesky(sigma_z, lower=True).T
        x = z + rng.normal(size=(n, 2)) @ linalg.cholesky(sigma_noise, lower=True).T
        y = z @ self.beta + self.sigma_eps * rng.normal(size=n)
        return x, y, z

    def propensity(self, x: FloatArray) -> FloatArray:
        return np.full(x.shape[0], 0.5)

    def true_moments(self, x: FloatArray) -> Moments:
        gain, cond = self._posterior()
        z_mean = x @ gain.T
        rows = x.shape[0]
        c = self.contrast
        v_y = self.sigma_eps**2 + float(self.beta @ cond @ self.beta)
        v_z = float(c @ cond @ c)
        return z_mean @ self.beta, z_mean @ c, np.full(rows, v_y), np.full(rows, v_z)

    def analytic_cs_bounds(self) -> Optional[Tuple[float, float]]:
        sigma_z, _ = self._covariances()
        _, cond = self._posterior()
        c = self.contrast
        center = float(self.beta @ (sigma_z - cond) @ c)
        v_y = self.sigma_eps**2 + self.beta @ cond @ self.beta
        spread = float(np.sqrt(v_y * (c @ cond @ c)))
        return center - spread, center + spread

    def true_theta(self) -> Optional[float]:
        return self.beta1


DGP_SPECS: Dict[str, Type[DgpSpec]] = {
    spec.name: spec
    for spec in (HeavyTailLinear, GaussianLinear, LogNormalRelative, ValidationStudy)
}


def make_dgp(name: str, **params: Any) -> DgpSpec:
    try:
        cls = DGP_SPECS[name]
    except KeyError:
        raise InvalidSpecError(
            f"unknown design `{name}`, expected one of {sorted(DGP_SPECS)}"
        ) from None
    try:
        return cls(**params)
    except TypeError as error:
        raise InvalidSpecError(
            f"bad parameters for design `{name}`: {error}"
        ) from error


def sample_dgp(spec: DgpSpec, n: int, seed: int) -> SimulatedSample:
    """Draws n observations; fully determined by (spec, n, seed)."""
    if n < MIN_SAMPLE:
        raise InvalidSpecError(f"n must be >= {MIN_SAMPLE}, got {n}")
    rng = np.random.default_rng(seed)
    x, y, z = spec.sample(rng, n)
    r = (rng.random(n) < spec.propensity(x)).astype(np.int64)
    y2 = y.reshape(n, -1)
    z2 = z.reshape(n, -1)
    data = FusedDataset.from_arrays(x, r, y2, z2)
    hidden_y = np.where((r == 0)[:, None], y2, np.nan)
    hidden_z = np.where((r == 1)[:, None], z2, np.nan)
    return SimulatedSample(data=data, hidden_y=hidden_y, hidden_z=hidden_z)


def monte_carlo_cs_bounds(
    spec: DgpSpec,
    draws: int = 1_000_000,
    seed: int = 0,
    *,
    chunk: int = 1_000_000,
) -> TrueBounds:
    """E[m_Y m_Z -/+ sqrt(v_Y v_Z)] by Monte Carlo over X, with the true moments."""
    if draws < 2:
        raise InvalidSpecError(f"draws must be >= 2, got {draws}")
    rng = np.random.default_rng(seed)
    sums = np.zeros(2)
    squares = np.zeros(2)
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        x = spec.sample_covariates(rng, size)
        m_y, m_z, v_y, v_z = spec.true_moments(x)
        center = m_y * m_z
        spread = np.sqrt(v_y * v_z)
        values = np.vstack([center - spread, center + spread])
        sums += values.sum(axis=1)
        squares += (values**2).sum(axis=1)
        done += size
    means = sums / draws
    variances = np.maximum(squares / draws - means**2, 0.0) * draws / (draws - 1)
    se = float(np.max(np.sqrt(variances / draws)))
    logger.debug(
        "monte carlo bounds for %s: (%.6g, %.6g) +/- %.2g",
        spec.name,
        means[0],
        means[1],
        se,
    )
    return TrueBounds(
        theta_l=float(means[0]),
        theta_u=float(means[1]),
        standard_error=se,
        method="monte-carlo",
    )


def true_cs_bounds(
    spec: DgpSpec, *, draws: int = 10_000_000, seed: int = 0
) -> TrueBounds:
    """Closed form where the design has one, else a true-nuisance Monte Carlo value."""
    if not isinstance(spec, DgpSpec):
        raise UnsupportedSpecError(f"expected a DgpSpec, got {type(spec).__name__}")
    analytic = spec.analytic_cs_bounds()
    if analytic is not None:
        return TrueBounds(theta_l=analytic[0], theta_u=analytic[1])
    return monte_carlo_cs_bounds(spec, draws, seed)
