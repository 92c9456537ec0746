"""Numerical primitives shared by the rest of the package.

Logistic kernel, Beta distribution helpers, a hand-written Adam optimizer,
a second-order Butterworth low-pass filter and seeded random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

LOG_PROB_EPS = 1e-6


class TrainingDivergence(RuntimeError):
    """Raised when a non-finite value shows up in an optimisation step."""


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# logistic kernel


def kernel_eval(x, l: float):
    """Smooth bounded kernel ``2 / (exp(l x) + exp(-l x))``.

    Works on scalars and arrays. Returns values in (0, 1] with K(0) = 1.
    """
    if not l > 0 or not math.isfinite(l):
        raise ValueError(f"kernel sensitivity must be positive, got {l}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("kernel argument must be finite")
    a = np.abs(l * x)
    # sech written to stay finite for large |l x|
    e = np.exp(-a)
    out = 2.0 * e / (1.0 + e * e)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Beta distribution


@dataclass(frozen=True)
class BetaParams:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        if a.shape != b.shape:
            raise ValueError("alpha and beta must have equal shapes")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def beta_params_from_raw(a_raw, b_raw) -> BetaParams:
    """Map unconstrained outputs to (alpha, beta) = 1 + softplus(raw)."""
    return BetaParams(1.0 + softplus(a_raw), 1.0 + softplus(b_raw))


def _clamp_unit(x):
    return np.clip(x, LOG_PROB_EPS, 1.0 - LOG_PROB_EPS)


def beta_log_prob(p: BetaParams, x):
    """Log density of Beta(alpha, beta) at ``x`` (elementwise).

    Inputs are clamped into ``[1e-6, 1 - 1e-6]`` so boundary values that
    come back from action scaling do not produce ``-inf``.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise ValueError("beta_log_prob expects x in [0, 1]")
    x = _clamp_unit(x)
    a, b = p.alpha, p.beta
    log_norm = gammaln(a) + gammaln(b) - gammaln(a + b)
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - log_norm


def beta_log_prob_grad(p: BetaParams, x):
    """Partial derivatives of :func:`beta_log_prob` w.r.t. alpha and beta."""
    x = _clamp_unit(np.asarray(x, dtype=np.float64))
    a, b = p.alpha, p.beta
    common = digamma(a + b)
    return np.log(x) - digamma(a) + common, np.log1p(-x) - digamma(b) + common


def beta_sample(p: BetaParams, rng: "RngStream"):
    return rng.generator.beta(p.alpha, p.beta)


def beta_mode(p: BetaParams):
    a, b = p.alpha, p.beta
    if np.any(a <= 1.0) or np.any(b <= 1.0):
        raise ValueError("beta mode requires alpha > 1 and beta > 1")
    out = (a - 1.0) / (a + b - 2.0)
    return float(out) if np.ndim(out) == 0 else out


def beta_mean(p: BetaParams):
    return p.alpha / (p.alpha + p.beta)


def scale_unit_to_bounds(u, lo, hi):
    lo_a = np.asarray(lo, dtype=np.float64)
    hi_a = np.asarray(hi, dtype=np.float64)
    if np.any(lo_a >= hi_a):
        raise ValueError("scale_unit_to_bounds requires lo < hi")
    out = lo_a + np.asarray(u, dtype=np.float64) * (hi_a - lo_a)
    return float(out) if np.ndim(out) == 0 else out


def scale_bounds_to_unit(x, lo, hi):
    lo_a = np.asarray(lo, dtype=np.float64)
    hi_a = np.asarray(hi, dtype=np.float64)
    return (np.asarray(x, dtype=np.float64) - lo_a) / (hi_a - lo_a)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr,
                         self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Inputs are left untouched.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergence("non-finite gradient passed to adam_step")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Butterworth low-pass


def butterworth2_coefficients(cutoff_hz: float, sample_hz: float):
    """Second-order low-pass via bilinear transform with frequency prewarping.

    Returns ``(b, a)`` with ``a[0] == 1``.
    """
    if not 0.0 < cutoff_hz < 0.5 * sample_hz:
        raise ConfigurationError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {0.5 * sample_hz}) Hz")
    k = math.tan(math.pi * cutoff_hz / sample_hz)
    q = 1.0 / math.sqrt(2.0)
    norm = 1.0 / (1.0 + k / q + k * k)
    b0 = k * k * norm
    b = np.array([b0, 2.0 * b0, b0])
    a = np.array([1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm])
    return b, a


@dataclass
class ButterworthState:
    cutoff_hz: float
    sample_hz: float
    channels: int
    order: int = 2
    x_hist: np.ndarray = field(default=None)  # rows: x[n-1], x[n-2]
    y_hist: np.ndarray = field(default=None)  # rows: y[n-1], y[n-2]

    def __post_init__(self):
        if self.order != 2:
            raise ConfigurationError("only second-order filters are supported")
        self.b, self.a = butterworth2_coefficients(self.cutoff_hz, self.sample_hz)
        if self.x_hist is None:
            self.x_hist = np.zeros((2, self.channels))
        if self.y_hist is None:
            self.y_hist = np.zeros((2, self.channels))

    def reset(self, value=None):
        """Clear memory, optionally priming it with a steady-state value."""
        fill = 0.0 if value is None else np.asarray(value, dtype=np.float64)
        self.x_hist[:] = fill
        self.y_hist[:] = fill


def butterworth_filter(state: ButterworthState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    b, a = state.b, state.a
    xh, yh = state.x_hist, state.y_hist
    y = b[0] * x + b[1] * xh[0] + b[2] * xh[1] - a[1] * yh[0] - a[2] * yh[1]
    xh[1] = xh[0]
    xh[0] = x
    yh[1] = yh[0]
    yh[0] = y
    return y


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Seeded counter-based generator (Philox).

    Child streams made with :meth:`spawn` are statistically independent and
    their output does not depend on how much the parent or siblings consume.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.generator = np.random.Generator(np.random.Philox(self._seq))
        self._spawned = 0

    def spawn(self, n: int) -> list["RngStream"]:
        children = self._seq.spawn(n)
        self._spawned += n
        return [RngStream(c) for c in children]

    def child(self, key: int) -> "RngStream":
        """Deterministic child keyed by an integer, independent of spawn order."""
        seq = np.random.SeedSequence(self._seq.entropy,
                                     spawn_key=tuple(self._seq.spawn_key) + (1_000_003, int(key)))
        return RngStream(seq)

    # thin conveniences
    def uniform(self, lo=0.0, hi=1.0, size=None):
        return self.generator.uniform(lo, hi, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, lo, hi=None, size=None):
        return self.generator.integers(lo, hi, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def get_state(self) -> dict:
        """Generator state as plain JSON-serialisable values."""
        return _jsonable(self.generator.bit_generator.state)

    def set_state(self, state: dict) -> None:
        st = dict(state)
        st["state"] = {k: np.array(v, dtype=np.uint64) for k, v in st["state"].items()}
        st["buffer"] = np.array(st["buffer"], dtype=np.uint64)
        self.generator.bit_generator.state = st


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return [int(v) for v in x.ravel()]
    if isinstance(x, np.integer):
        return int(x)
    return x
