"""Stationary AR-p Gaussian processes with a standard normal marginal.

Coefficients are built from roots of the characteristic polynomial placed
in ``[0, 1)``; the white-noise variance is then chosen so the stationary
variance is exactly one.  The binomial subfamily (all roots equal to a
single ``alpha``) is what the policies use: ``alpha = 0`` gives white noise
and ``alpha -> 1`` approaches a constant signal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.signal import lfilter

MAX_ORDER = 32
COND_LIMIT = 1e12
STATIONARY_MARGIN = 1e-9


class ArModelError(ValueError):
    """Raised for coefficients or roots outside the supported contract."""


def _check_roots(roots) -> np.ndarray:
    roots = np.asarray(roots, dtype=float).ravel()
    if roots.size == 0:
        raise ArModelError("root list is empty")
    if roots.size > MAX_ORDER:
        raise ArModelError(f"order {roots.size} exceeds the supported maximum {MAX_ORDER}")
    if np.any(~np.isfinite(roots)) or np.any(roots < 0.0) or np.any(roots >= 1.0):
        raise ArModelError(f"roots must lie in [0, 1), got {roots.tolist()}")
    return roots


def coeffs_from_roots(roots) -> np.ndarray:
    """AR coefficients whose characteristic polynomial has the given roots.

    Expands ``prod(z - alpha_i)`` one factor at a time; coefficient ``k`` of the
    result is ``(-1)**(k+1) * e_k(roots)``.
    """
    roots = _check_roots(roots)
    # poly[i] holds the coefficient of z**(p-i) of the running product
    poly = np.array([1.0])
    for r in roots:
        poly = np.append(poly, 0.0) - r * np.insert(poly, 0, 0.0)
    return -poly[1:]


def coeffs_binomial(p: int, alpha: float) -> np.ndarray:
    """Coefficients of the order-``p`` process with ``p`` equal roots ``alpha``."""
    if int(p) != p or p < 1:
        raise ArModelError(f"order must be a positive integer, got {p!r}")
    _check_roots(np.full(int(p), alpha))
    p = int(p)
    return np.array([(-1) ** (k + 1) * comb(p, k) * alpha**k for k in range(1, p + 1)])


def characteristic_roots(coeffs) -> np.ndarray:
    """Roots of ``z**p - sum(phi_i z**(p-i))`` as companion-matrix eigenvalues.

    The eigenvalues come from LAPACK's Hessenberg QR iteration (``numpy.linalg.eigvals``).
    """
    phi = np.asarray(coeffs, dtype=float).ravel()
    p = phi.size
    companion = np.zeros((p, p))
    companion[0, :] = phi
    companion[1:, :-1] = np.eye(p - 1)
    return np.linalg.eigvals(companion)


def is_stationary(coeffs) -> bool:
    """True iff every characteristic root has modulus below ``1 - 1e-9``."""
    phi = np.asarray(coeffs, dtype=float).ravel()
    if phi.size == 0 or not np.all(np.isfinite(phi)):
        return False
    return bool(np.all(np.abs(characteristic_roots(phi)) < 1.0 - STATIONARY_MARGIN))


def yule_walker_system(coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Linear system ``A @ gamma = b`` for ``gamma_1..gamma_p`` with ``gamma_0 = 1``.

    Equation ``j`` is ``gamma_j = sum_k phi_k gamma_|j-k|``.  Every term is moved to
    the left except the ``gamma_0`` one (``k == j``), which lands in ``b``.
    Several ``phi_k`` can hit the same lag and are summed into one entry.
    """
    phi = np.asarray(coeffs, dtype=float).ravel()
    p = phi.size
    A = np.eye(p)
    b = np.zeros(p)
    for j in range(1, p + 1):
        for k in range(1, p + 1):
            lag = abs(j - k)
            if lag == 0:
                b[j - 1] += phi[k - 1]
            else:
                A[j - 1, lag - 1] -= phi[k - 1]
    return A, b


def solve_stationary(coeffs) -> tuple[np.ndarray, float]:
    """Autocovariances ``gamma_1..gamma_p`` and noise variance for unit stationary variance.

    Raises
    ------
    ArModelError
        If the system is too ill-conditioned ("near-nonstationary model") or
        the resulting noise variance is not positive ("invalid coefficients").
    """
    phi = np.asarray(coeffs, dtype=float).ravel()
    if phi.size == 0:
        raise ArModelError("coefficient list is empty")
    A, b = yule_walker_system(phi)
    if not np.isfinite(A).all() or np.linalg.cond(A) > COND_LIMIT:
        raise ArModelError("near-nonstationary model")
    gamma = np.linalg.solve(A, b)
    noise_var = float(1.0 - phi @ gamma)
    if not noise_var > 0.0:
        raise ArModelError("invalid coefficients")
    return gamma, noise_var


@dataclass(frozen=True, eq=False)
class ArModel:
    """Validated stationary AR-p process with ``N(0, 1)`` marginals.

    Build one with :meth:`from_roots` or :meth:`binomial` rather than directly.
    """

    order: int
    roots: tuple[float, ...]
    coeffs: np.ndarray = field(repr=False)
    noise_var: float
    autocov: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs.setflags(write=False)
        self.autocov.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, ArModel):
            return NotImplemented
        return self.roots == other.roots and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.roots, self.coeffs.tobytes()))

    @property
    def noise_std(self) -> float:
        return float(np.sqrt(self.noise_var))

    @classmethod
    def from_roots(cls, roots) -> "ArModel":
        roots = _check_roots(roots)
        return cls._build(tuple(float(r) for r in roots), coeffs_from_roots(roots))

    @classmethod
    def binomial(cls, p: int, alpha: float) -> "ArModel":
        phi = coeffs_binomial(p, alpha)
        return cls._build((float(alpha),) * int(p), phi)

    @classmethod
    def _build(cls, roots, phi) -> "ArModel":
        gamma, noise_var = solve_stationary(phi)
        autocov = np.concatenate([[1.0], gamma])
        return cls(order=phi.size, roots=roots, coeffs=phi, noise_var=noise_var, autocov=autocov)

    @property
    def is_white(self) -> bool:
        return not np.any(self.coeffs)


@dataclass(frozen=True)
class AcfTable:
    max_lag: int
    rho: np.ndarray


def acf(model: ArModel, max_lag: int) -> AcfTable:
    """Autocorrelation ``rho_0..rho_max_lag``; lags beyond ``p`` follow the AR recursion."""
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    p = model.order
    gamma = np.zeros(max(max_lag, p) + 1)
    gamma[: p + 1] = model.autocov
    phi = model.coeffs
    for tau in range(p + 1, max_lag + 1):
        gamma[tau] = phi @ gamma[tau - p : tau][::-1]
    rho = gamma[: max_lag + 1] / gamma[0]
    rho.setflags(write=False)
    return AcfTable(max_lag=max_lag, rho=rho)


def alpha_for_rho1(p: int, target_rho1: float, tol: float = 1e-9, max_iter: int = 200) -> float:
    """Binomial-family ``alpha`` whose lag-1 autocorrelation equals ``target_rho1``.

    Bisection on ``alpha``, assuming ``rho_1`` increases with ``alpha``.
    """
    if not 0.0 <= target_rho1 < 1.0:
        raise ValueError(f"target_rho1 must be in [0, 1), got {target_rho1}")
    if target_rho1 == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        try:
            rho1 = ArModel.binomial(p, mid).autocov[1]
        except ArModelError:
            # too close to one to solve: certainly above any reachable target
            hi = mid
            continue
        if abs(rho1 - target_rho1) < tol:
            return mid
        if rho1 < target_rho1:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection for p={p}, rho1={target_rho1} did not converge in {max_iter} iterations")


def ar_sum(coeffs, values):
    """``sum_k coeffs[k] * values[k]`` accumulated in order ``k = 0, 1, ...``.

    Every caller that must reproduce a realization bit-for-bit goes through
    this one summation order.  ``values`` may carry trailing axes.
    """
    acc = 0.0 * values[0] if len(values) else 0.0
    for c, v in zip(coeffs, values):
        acc = acc + c * v
    return acc


class ProcessState:
    """Running realization of an AR model, zero-initialized.

    ``history`` holds at most ``p`` past values, most recent first; terms
    reaching before the first step are dropped, which is the same as treating
    those values as zero.
    """

    def __init__(self, model: ArModel):
        self.model = model
        self.history: deque[float] = deque(maxlen=model.order)
        self.step_count = 0

    def step(self, noise: float) -> float:
        x = ar_sum(self.model.coeffs, self.history) + self.model.noise_std * noise
        self.history.appendleft(x)
        self.step_count += 1
        return x


def process_step(state: ProcessState, noise: float) -> float:
    return state.step(noise)


def realize(model: ArModel, noise) -> np.ndarray:
    """Zero-initialized realization driven by standard normal ``noise`` along axis 0.

    Vectorized counterpart of repeated :func:`process_step`; agrees with it up
    to floating point summation order.
    """
    noise = np.asarray(noise, dtype=float)
    a = np.concatenate([[1.0], -model.coeffs])
    return lfilter([model.noise_std], a, noise, axis=0)


def sample_realization(model: ArModel, steps: int, rng: np.random.Generator, burn_in: int = 0) -> np.ndarray:
    """Draw ``steps`` values after discarding ``burn_in`` warm-up values."""
    x = realize(model, rng.standard_normal(steps + burn_in))
    return x[burn_in:]


def default_burn_in(model: ArModel) -> int:
    """Several autocorrelation time constants: ``10 / (1 - max root)``."""
    # small slack so 10 / (1 - 0.9) gives 100, not 101
    return int(np.ceil(10.0 / (1.0 - max(model.roots)) - 1e-9))
