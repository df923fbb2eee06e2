"""Lipschitz / Hessian-norm probes and a quadrature check of the smoothing bounds.

The probes estimate, over a finite set of inputs, the largest input-gradient
norm of a network output, the same quantity after averaging gradients over
input noise, and the Hessian spectral norm (power iteration on
finite-difference Hessian-vector products).

The theorem checks build 1-D functions whose first (or second) derivative is
``c * scale`` everywhere except on a bump of width below ``C`` where it
rises to ``scale``.  Averaging that derivative over a uniform window of
width ``zeta * C`` must bring its maximum below ``(c + eps) * scale`` once
``zeta > 1 / eps``.  The average is computed with adaptive composite
Gauss-Legendre quadrature, independent of any sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad
from .network import Deterministic, DipNet, ForwardMode, forward

GradFn = Callable[[np.ndarray], np.ndarray]


# -- noise distributions -------------------------------------------------------

@dataclass(frozen=True)
class PointMass:
    def sample(self, rng, shape):
        return np.zeros(shape)

    def describe(self) -> str:
        return "point mass at 0"


@dataclass(frozen=True)
class GaussianNoise:
    std: float

    def sample(self, rng, shape):
        return self.std * rng.standard_normal(shape)

    def describe(self) -> str:
        return f"N(0, {self.std}^2 I)"


@dataclass(frozen=True)
class UniformNoise:
    """Uniform on a centered axis-aligned cube of the given volume."""

    volume: float

    def side(self, dim: int) -> float:
        return self.volume ** (1.0 / dim)

    def sample(self, rng, shape):
        half = 0.5 * self.side(shape[-1])
        return rng.uniform(-half, half, size=shape)

    def describe(self) -> str:
        return f"uniform on centered cube of volume {self.volume}"


NoiseDist = Union[PointMass, GaussianNoise, UniformNoise]


# -- gradient probes -------------------------------------------------------------

def output_gradients(model: DipNet, X, output: int = 0, mode: ForwardMode = Deterministic()) -> np.ndarray:
    """Rows of ``d f_output / d x`` at each row of ``X``."""
    xv = ad.Value(np.atleast_2d(np.asarray(X, dtype=np.float64)), requires_grad=True)
    out = forward(model, xv, mode)
    ad.backward(ad.sum(out[:, output]))
    return xv.grad


def _grad_fn(target, output: int) -> GradFn:
    if isinstance(target, DipNet):
        return lambda X: output_gradients(target, X, output)
    return target


def _n_outputs(target) -> int:
    return target.output_dim if isinstance(target, DipNet) else 1


def gradient_norms(target, probes, output: int = 0) -> np.ndarray:
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    return np.linalg.norm(_grad_fn(target, output)(probes), axis=1)


def empirical_lipschitz(target, probes, mode: ForwardMode = Deterministic(), per_output: bool = False):
    """Largest ``||grad_x f_r||_2`` over the probe set.

    ``target`` is a :class:`DipNet` or a callable returning gradient rows.
    Returns the max over outputs, or the per-output maxima if requested.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if len(probes) == 0:
        raise ValueError("empty probe set")
    if isinstance(target, DipNet):
        fns = [lambda X, r=r: output_gradients(target, X, r, mode) for r in range(target.output_dim)]
    else:
        fns = [target]
    per = np.array([np.linalg.norm(fn(probes), axis=1).max() for fn in fns])
    return per if per_output else float(per.max())


@dataclass
class SmoothedEstimate:
    value: float
    stderr: float
    argmax: int


def smoothed_gradient_norm(target, probes, dist: NoiseDist, n_mc: int, rng: np.random.Generator,
                           output: int = 0, chunk: int = 20000) -> SmoothedEstimate:
    """``max_x ||E_eta grad f(x + eta)||`` with a Monte-Carlo inner average.

    The standard error is the delta-method error of the norm at the
    maximizing probe.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    fn = _grad_fn(target, output)
    best = (-1.0, 0.0, 0)
    for i, x in enumerate(probes):
        total = np.zeros(x.shape)
        total_sq = np.zeros(x.shape)
        done = 0
        while done < n_mc:
            size = min(chunk, n_mc - done)
            g = fn(x + dist.sample(rng, (size, x.size)))
            total += g.sum(axis=0)
            total_sq += (g * g).sum(axis=0)
            done += size
        mean = total / n_mc
        var = np.maximum(total_sq / n_mc - mean * mean, 0.0) * n_mc / max(n_mc - 1, 1)
        norm = float(np.linalg.norm(mean))
        if norm > 0:
            u = mean / norm
            se = math.sqrt(float(np.sum(u * u * var)) / n_mc)
        else:
            se = math.sqrt(float(np.sum(var)) / n_mc)
        if norm > best[0]:
            best = (norm, se, i)
    return SmoothedEstimate(*best)


@dataclass
class HessianEstimate:
    value: float
    rayleigh: float
    converged: bool
    iterations: int


def hessian_spectral_norm(target, x, iters: int = 100, h: float = 1e-4, tol: float = 1e-9,
                          output: int = 0, seed: int = 0) -> HessianEstimate:
    """Dominant |eigenvalue| of the input Hessian at ``x``.

    Power iteration where each Hessian-vector product is a central finite
    difference of autodiff gradients with step ``h``.
    """
    fn = _grad_fn(target, output)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    v = np.random.default_rng(seed).standard_normal(x.size)
    v /= np.linalg.norm(v)

    def hvp(v):
        g = fn(np.stack([x + h * v, x - h * v]))
        return (g[0] - g[1]) / (2 * h)

    estimate = rayleigh = 0.0
    for it in range(1, iters + 1):
        w = hvp(v)
        rayleigh = float(v @ w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return HessianEstimate(0.0, 0.0, True, it)
        if it > 1 and abs(norm - estimate) <= tol * max(1.0, norm):
            return HessianEstimate(norm, rayleigh, True, it)
        estimate = norm
        v = w / norm
    return HessianEstimate(estimate, rayleigh, False, iters)


@dataclass
class SmoothnessReport:
    b_hat: float
    smoothed_b_hat: float
    smoothed_stderr: float
    s_hat: Optional[float]
    probe_count: int
    eta_distribution: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def smoothness_report(model: DipNet, probes, dist: NoiseDist, n_mc: int, rng,
                      hessian_iters: int = 50) -> SmoothnessReport:
    """Probe a trained model.  Hessians are only estimated for tanh networks."""
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    b_hat = empirical_lipschitz(model, probes)
    smoothed = max((smoothed_gradient_norm(model, probes, dist, n_mc, rng, output=r)
                    for r in range(model.output_dim)), key=lambda e: e.value)
    s_hat = None
    if model.activation == "tanh":
        s_hat = max(hessian_spectral_norm(model, x, hessian_iters, output=r).value
                    for x in probes for r in range(model.output_dim))
    return SmoothnessReport(b_hat, smoothed.value, smoothed.stderr, s_hat, len(probes), dist.describe())


# -- theorem checks --------------------------------------------------------------

def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SpikeFunction:
    """A derivative profile ``base + (peak - base) * bump(x)``.

    ``bump`` is 1 on ``|x| <= half_width - ramp``, 0 outside ``|x| <
    half_width``, with smooth ramps in between.  ``profile`` is read as the
    first derivative (Lipschitz check) or second derivative (smoothness
    check) of a scalar function.
    """

    base: float
    peak: float
    half_width: float
    ramp: float

    @classmethod
    def for_bound(cls, c: float, C: float, scale: float) -> "SpikeFunction":
        half = 0.49 * C
        return cls(c * scale, scale, half, 0.2 * half)

    def bump(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _smooth_step((x + self.half_width) / self.ramp) * _smooth_step((self.half_width - x) / self.ramp)

    def profile(self, x):
        return self.base + (self.peak - self.base) * self.bump(x)

    def __call__(self, X):
        """Gradient-function interface: rows of ``profile`` for 1-D inputs."""
        X = np.asarray(X, dtype=np.float64)
        return self.profile(X)

    def breakpoints(self) -> list:
        a, r = self.half_width, self.ramp
        return [-a, -a + r, a - r, a]

    def spike_measure(self) -> float:
        return 2 * self.half_width


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def profile(self, x):
        return np.full(np.shape(x), float(self.value))

    def __call__(self, X):
        return self.profile(X)

    def breakpoints(self) -> list:
        return []


class QuadratureError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def composite_gauss_legendre(f, a: float, b: float, panels: int) -> float:
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * f(nodes)))


def adaptive_integral(f, a: float, b: float, breakpoints=(), tol: float = 1e-8, max_panels: int = 1 << 14):
    """Integrate ``f`` on ``[a, b]``, doubling panels per piece until stable.

    Returns ``(value, trace)`` where ``trace`` lists ``(panels, estimate)``.
    """
    cuts = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    total = 0.0
    trace = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        panels = 1
        prev = composite_gauss_legendre(f, lo, hi, panels)
        while True:
            panels *= 2
            cur = composite_gauss_legendre(f, lo, hi, panels)
            trace.append((lo, hi, panels, cur))
            if abs(cur - prev) < tol:
                break
            if panels >= max_panels:
                raise QuadratureError(f"no convergence on [{lo}, {hi}] after {panels} panels", trace)
            prev = cur
        total += cur
    return total, trace


def window_average(fn, x: float, width: float, tol: float = 1e-8):
    """``(1/width) * integral of fn.profile over [x - width/2, x + width/2]``."""
    lo, hi = x - 0.5 * width, x + 0.5 * width
    value, trace = adaptive_integral(fn.profile, lo, hi, fn.breakpoints(), tol * width)
    return value / width, trace


def max_window_average(fn, width: float, reach: float, grid: int = 201):
    """Maximize the window average over ``x`` in ``[-reach, reach]``.

    Grid search followed by a bounded scalar refinement around the best grid
    point.
    """
    xs = np.linspace(-reach, reach, grid)
    vals = [window_average(fn, x, width)[0] for x in xs]
    i = int(np.argmax(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    best_x, best_v = float(xs[i]), float(vals[i])
    if hi > lo:
        res = minimize_scalar(lambda t: -window_average(fn, t, width)[0], bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        if -res.fun > best_v:
            best_x, best_v = float(res.x), float(-res.fun)
    _, trace = window_average(fn, best_x, width)
    return best_x, best_v, trace


@dataclass
class TheoremCheck:
    order: int
    c: float
    epsilon: float
    C: float
    zeta: float
    scale: float
    bound: float
    proof_bound: float
    measured: float
    argmax_x: float
    passed: bool
    trace: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "trace"}
        d["refinements"] = len(self.trace)
        return d


def default_zeta(epsilon: float) -> float:
    """Smallest integer-plus-one choice satisfying ``zeta > 1 / epsilon``."""
    return float(math.ceil(1.0 / epsilon) + 1) if math.isfinite(epsilon) else 1.0


def _check(order, c, epsilon, C, scale, zeta, fn) -> TheoremCheck:
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    if not (epsilon > 0 and C > 0 and scale > 0):
        raise ValueError("epsilon, C and the scale must be positive")
    zeta = default_zeta(epsilon) if zeta is None else float(zeta)
    width = zeta * C
    x, measured, trace = max_window_average(fn, width, reach=0.5 * width + C)
    measured = abs(measured)
    bound = (c + epsilon) * scale
    return TheoremCheck(order, c, epsilon, C, zeta, scale, bound, c * scale + scale / zeta,
                        measured, x, measured < bound, trace)


def verify_theorem_1(c: float, epsilon: float, C: float, b: float, zeta: Optional[float] = None) -> TheoremCheck:
    """Lipschitz bound: derivative ``b`` on a spike shorter than ``C``, ``c*b`` elsewhere."""
    return _check(1, c, epsilon, C, b, zeta, SpikeFunction.for_bound(c, C, b))


def verify_theorem_2(c: float, epsilon: float, C: float, s: float, zeta: Optional[float] = None,
                     construction: str = "bump") -> TheoremCheck:
    """Smoothness bound on the second derivative.

    ``construction="bump"`` uses the spike profile as ``h''`` (``h`` itself is
    then C-infinity); ``"quadratic"`` uses ``h(x) = s x^2 / 2``.
    """
    if construction == "bump":
        fn = SpikeFunction.for_bound(c, C, s)
    elif construction == "quadratic":
        fn = ConstantProfile(s)
    else:
        raise ValueError(f"unknown construction {construction!r}")
    return _check(2, c, epsilon, C, s, zeta, fn)
