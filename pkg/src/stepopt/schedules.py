"""Noise-schedule families and time-step grid constructors.

A schedule defines the forward marginal ``x_t | x_0 ~ N(alpha_t x_0,
sigma_t^2 I)`` through the coefficient pair ``(alpha_t, sigma_t)``.  The
half log-SNR ``lambda_t = log(alpha_t / sigma_t)`` is strictly decreasing
in ``t`` and is the natural integration variable for exponential-integrator
solvers, so every schedule exposes both the forward map ``lambda_of_t`` and
its inverse ``t_of_lambda``.

Three families are supported:

* ``vp_linear``  - variance preserving, linearly increasing noise rate
  (parameters ``beta_min``, ``beta_max``),
* ``vp_cosine``  - variance preserving, cosine signal coefficient with a
  small shift ``s`` (valid time capped below 1.0 where the log-SNR
  diverges),
* ``ve_edm``     - variance exploding with ``alpha_t = 1`` and
  ``sigma_t = t`` (time is the noise level).

Grid constructors return a :class:`LambdaGrid`: ``N + 1`` nodes running
from the start time ``T`` down to the end time ``eps``, stored both as
times (decreasing) and as half log-SNR values (increasing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "NoiseSchedule",
    "LambdaGrid",
    "uniform_t_grid",
    "uniform_lambda_grid",
    "edm_grid",
    "FAMILIES",
]

FAMILIES = ("vp_linear", "vp_cosine", "ve_edm")

# CLI / JSON names for the families.
_FAMILY_NAMES = {
    "vp-linear": "vp_linear",
    "vp-cosine": "vp_cosine",
    "ve-edm": "ve_edm",
}

# vp_cosine has unbounded log-SNR at t = 1; cap the usable range below it.
_COSINE_T_MAX = 0.992


class DomainError(ValueError):
    """Raised when a time or log-SNR value lies outside a schedule's domain."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process coefficients for one named schedule family.

    Use the classmethod constructors (:meth:`vp_linear`, :meth:`vp_cosine`,
    :meth:`ve_edm`, or :meth:`from_name`) rather than instantiating
    directly.
    """

    family: str
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_shift: float = 0.008

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}")
        if self.family == "vp_linear" and not 0 < self.beta_min < self.beta_max:
            raise ValueError("vp_linear requires 0 < beta_min < beta_max")
        if self.family == "vp_cosine" and self.cosine_shift <= 0:
            raise ValueError("vp_cosine requires a positive shift")

    # -- constructors ---------------------------------------------------

    @classmethod
    def vp_linear(cls, beta_min: float = 0.1, beta_max: float = 20.0) -> "NoiseSchedule":
        return cls("vp_linear", beta_min=beta_min, beta_max=beta_max)

    @classmethod
    def vp_cosine(cls, shift: float = 0.008) -> "NoiseSchedule":
        return cls("vp_cosine", cosine_shift=shift)

    @classmethod
    def ve_edm(cls) -> "NoiseSchedule":
        return cls("ve_edm")

    @classmethod
    def from_name(cls, name: str, **params) -> "NoiseSchedule":
        """Build a schedule from its CLI name ("vp-linear", "vp-cosine", "ve-edm")."""
        try:
            family = _FAMILY_NAMES[name]
        except KeyError:
            raise ValueError(
                f"unknown schedule name {name!r}; expected one of {sorted(_FAMILY_NAMES)}"
            ) from None
        return cls(family, **params)

    @property
    def name(self) -> str:
        return self.family.replace("_", "-")

    @property
    def is_vp(self) -> bool:
        return self.family in ("vp_linear", "vp_cosine")

    # -- valid time domain ----------------------------------------------

    @property
    def t_domain(self) -> tuple[float, float]:
        """(t_min, t_max); t_min is exclusive for VP families (log-SNR diverges)."""
        if self.family == "ve_edm":
            return (0.002, 80.0)
        if self.family == "vp_cosine":
            return (0.0, _COSINE_T_MAX)
        return (0.0, 1.0)

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.t_domain
        ok = (t > lo) & (t <= hi) if self.is_vp else (t >= lo) & (t <= hi)
        if not np.all(ok):
            bad = np.atleast_1d(t)[~np.atleast_1d(ok)][0]
            raise DomainError(
                f"time {bad} outside valid domain ({lo}, {hi}] of {self.name}"
            )
        return t

    # -- forward coefficients --------------------------------------------

    def log_alpha(self, t):
        """log(alpha_t) for valid t; 0 for variance-exploding schedules."""
        t = self._check_t(t)
        if self.family == "vp_linear":
            return -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
        if self.family == "vp_cosine":
            s = self.cosine_shift
            half_pi = math.pi / 2.0
            norm = math.log(math.cos(s / (1.0 + s) * half_pi))
            return np.log(np.cos((t + s) / (1.0 + s) * half_pi)) - norm
        return np.zeros_like(t)

    def alpha(self, t):
        """Signal coefficient alpha_t."""
        return np.exp(self.log_alpha(t))

    def sigma(self, t):
        """Noise coefficient sigma_t."""
        if self.family == "ve_edm":
            return np.asarray(self._check_t(t), dtype=float)
        # sqrt(1 - alpha^2) via expm1 to stay accurate when alpha is near 1
        return np.sqrt(-np.expm1(2.0 * self.log_alpha(t)))

    def kappa(self, t):
        """Reciprocal root-SNR sigma_t / alpha_t, strictly increasing in t."""
        return np.exp(-self.lambda_of_t(t))

    # -- half log-SNR and its inverse -------------------------------------

    def lambda_of_t(self, t):
        """Half log-SNR log(alpha_t / sigma_t); strictly decreasing in t."""
        if self.family == "ve_edm":
            return -np.log(self._check_t(t))
        m = self.log_alpha(t)
        return m - 0.5 * np.log(-np.expm1(2.0 * m))

    def lambda_domain(self) -> tuple[float, float]:
        """Range of attainable half log-SNR values (min at t_max, max at t_min)."""
        lo, hi = self.t_domain
        lam_min = float(self.lambda_of_t(hi))
        if self.family == "ve_edm":
            return (lam_min, float(self.lambda_of_t(lo)))
        return (lam_min, math.inf)

    def t_of_lambda(self, lam):
        """Inverse of :meth:`lambda_of_t`, accurate to 1e-10 relative.

        Values within 1e-5 of the attainable range (e.g. endpoints quoted
        to a few significant digits) are accepted and mapped onto the
        boundary.
        """
        lam = np.asarray(lam, dtype=float)
        lam_min, lam_max = self.lambda_domain()
        slack = 1e-5
        if np.any(lam < lam_min - slack) or np.any(lam > lam_max + slack):
            raise DomainError(
                f"half log-SNR {lam} outside attainable range "
                f"[{lam_min}, {lam_max}] of {self.name}"
            )
        if self.family == "ve_edm":
            t = np.exp(-lam)
        elif self.family == "vp_linear":
            # quadratic in t solved explicitly, written to avoid cancellation
            d = self.beta_max - self.beta_min
            tmp = 2.0 * d * np.logaddexp(0.0, -2.0 * lam)
            t = tmp / (np.sqrt(self.beta_min**2 + tmp) + self.beta_min) / d
        else:
            t = self._invert_lambda_generic(lam)
        lo, hi = self.t_domain
        return np.clip(t, lo if self.family == "ve_edm" else np.nextafter(lo, hi), hi)

    def _dlambda_dt(self, t):
        """Derivative of the half log-SNR with respect to time (negative)."""
        if self.family == "ve_edm":
            return -1.0 / t
        if self.family == "vp_linear":
            dm = -0.5 * (self.beta_min + t * (self.beta_max - self.beta_min))
        else:
            s = self.cosine_shift
            half_pi = math.pi / 2.0
            u = (t + s) / (1.0 + s) * half_pi
            dm = -half_pi / (1.0 + s) * np.tan(u)
        sigma2 = -np.expm1(2.0 * self.log_alpha(t))
        return dm / sigma2

    def _invert_lambda_generic(self, lam):
        """Bracketed bisection to 1e-6 followed by 3 Newton steps."""
        flat = np.atleast_1d(np.asarray(lam, dtype=float))
        _, hi = self.t_domain
        lo = 1e-14
        out = np.empty_like(flat)
        for idx, target in np.ndenumerate(flat):
            a, b = lo, hi
            # lambda is decreasing: lambda(a) >= target >= lambda(b)
            while b - a > 1e-6:
                mid = 0.5 * (a + b)
                if self.lambda_of_t(mid) >= target:
                    a = mid
                else:
                    b = mid
            t = 0.5 * (a + b)
            for _ in range(3):
                t -= (float(self.lambda_of_t(t)) - target) / float(self._dlambda_dt(t))
                t = min(max(t, lo), hi)
            out[idx] = t
        return out.reshape(np.shape(lam))

    # -- coefficients as functions of the half log-SNR --------------------

    def alpha_sigma_of_lambda(self, lam):
        """(alpha, sigma) at the time where the half log-SNR equals ``lam``.

        For VP families both coefficients are determined by the log-SNR
        alone (alpha^2 + sigma^2 = 1); for ve_edm alpha is 1 and sigma is
        exp(-lam).  No time inversion is performed.
        """
        lam = np.asarray(lam, dtype=float)
        if self.family == "ve_edm":
            return np.ones_like(lam), np.exp(-lam)
        log_alpha = -0.5 * np.logaddexp(0.0, -2.0 * lam)
        log_sigma = -0.5 * np.logaddexp(0.0, 2.0 * lam)
        return np.exp(log_alpha), np.exp(log_sigma)


@dataclass(frozen=True)
class LambdaGrid:
    """A discretization of the sampling interval into ``N`` steps.

    ``lam`` holds the half log-SNR values of the nodes in strictly
    increasing order (the first node corresponds to the start time ``T``,
    the last to the end time ``eps``); ``t`` holds the matching times in
    strictly decreasing order.
    """

    lam: np.ndarray
    t: np.ndarray
    T: float
    eps: float

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float, copy=True)
        t = np.array(self.t, dtype=float, copy=True)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "t", t)
        if lam.ndim != 1 or lam.shape != t.shape or lam.size < 2:
            raise ValueError("grid needs matching 1-d arrays with at least 2 nodes")
        if not np.all(np.diff(lam) > 0):
            raise ValueError("half log-SNR nodes must be strictly increasing")
        if not np.all(np.diff(t) < 0):
            raise ValueError("time nodes must be strictly decreasing")
        if t[0] != self.T or t[-1] != self.eps:
            raise ValueError("time endpoints must equal (T, eps) exactly")
        lam.setflags(write=False)
        t.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.lam.size - 1


def _check_range(schedule: NoiseSchedule, N: int, T: float, eps: float):
    if N < 1:
        raise ValueError("need at least one step")
    if not T > eps:
        raise ValueError(f"invalid range: T={T} must exceed eps={eps}")
    schedule._check_t(np.asarray([T, eps]))


def uniform_t_grid(schedule: NoiseSchedule, N: int, T: float, eps: float) -> LambdaGrid:
    """Nodes equally spaced in time between T and eps."""
    _check_range(schedule, N, T, eps)
    n = np.arange(N + 1)
    t = T + n / N * (eps - T)
    t[0], t[-1] = T, eps
    lam = schedule.lambda_of_t(t)
    return LambdaGrid(lam=lam, t=t, T=T, eps=eps)


def uniform_lambda_grid(schedule: NoiseSchedule, N: int, T: float, eps: float) -> LambdaGrid:
    """Nodes equally spaced in the half log-SNR between its values at T and eps."""
    _check_range(schedule, N, T, eps)
    lam_T = float(schedule.lambda_of_t(T))
    lam_eps = float(schedule.lambda_of_t(eps))
    n = np.arange(N + 1)
    lam = lam_T + n / N * (lam_eps - lam_T)
    lam[0], lam[-1] = lam_T, lam_eps
    t = np.empty(N + 1)
    t[0], t[-1] = T, eps
    if N > 1:
        t[1:-1] = schedule.t_of_lambda(lam[1:-1])
    return LambdaGrid(lam=lam, t=t, T=T, eps=eps)


def edm_grid(schedule: NoiseSchedule, N: int, T: float, eps: float, rho: int = 7) -> LambdaGrid:
    """Nodes equally spaced in the rho-th root of the reciprocal root-SNR.

    With ``kappa = sigma/alpha`` the nodes satisfy ``kappa_n^(1/rho)``
    uniform between its values at T and eps; rho = 1 reduces to uniform
    spacing in kappa itself.
    """
    _check_range(schedule, N, T, eps)
    if rho < 1:
        raise ValueError("rho must be a positive integer")
    lam_T = float(schedule.lambda_of_t(T))
    lam_eps = float(schedule.lambda_of_t(eps))
    # kappa^(1/rho) = exp(-lambda/rho)
    root_T = math.exp(-lam_T / rho)
    root_eps = math.exp(-lam_eps / rho)
    n = np.arange(N + 1)
    roots = root_T + n / N * (root_eps - root_T)
    lam = -rho * np.log(roots)
    lam[0], lam[-1] = lam_T, lam_eps
    t = np.empty(N + 1)
    t[0], t[-1] = T, eps
    if N > 1:
        t[1:-1] = schedule.t_of_lambda(lam[1:-1])
    return LambdaGrid(lam=lam, t=t, T=T, eps=eps)
