"""Empirical verification of the convergence theory.

The federated round-gap recursion

    gap' <= gap * (1 - eta*J*mu/M) + eta^2 * L * J^2 * (sigma^2 + zeta^2) / (2*N*M)

is checked on synthetic quadratic problems where every constant (smoothness
L, strong convexity mu, stochastic-gradient variance sigma^2, AP drift
zeta^2, minimizer and optimal value) is known exactly. The module also
provides estimators for those constants on real model/dataset pairs, and a
numerical check of the gradient decomposition identity underlying the bound
(both the corrected form and the literally printed one, which differ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from . import models

_DOMAIN_QUAD = 0xB21
_DOMAIN_VERIFY = 0xB22
_DOMAIN_ESTIMATE = 0xB23


class BoundInapplicableError(ValueError):
    """Raised when eta*J*mu/M >= 1 and the contraction factor is invalid."""


@dataclass
class AssumptionEstimates:
    """Measured stand-ins for the analysis constants.

    ``smoothness_lb`` is a lower bound on the true Lipschitz constant of the
    gradient (an empirical max over sampled pairs can never exceed it).
    ``strong_convexity`` is exact for quadratics and the l2 coefficient for
    softmax regression.
    """

    smoothness_lb: float
    strong_convexity: float
    sigma2: float
    zeta2: float
    modality_count: int

    def __post_init__(self):
        if min(self.smoothness_lb, self.sigma2, self.zeta2) < 0:
            raise ValueError("estimates must be nonnegative")


@dataclass
class BoundTrace:
    """Per-round empirical mean gap vs. the iterated theoretical bound."""

    rounds: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    violations: np.ndarray  # round indices where empirical > bound + 3*stderr


@dataclass
class QuadRunConfig:
    rounds: int
    local_steps: int
    batch_size: int
    eta: float
    modality_count: int = 1
    seed: int = 0


def grad_decomposition_residuals(
    grad_local_step: np.ndarray,
    grad_local_start: np.ndarray,
    grad_global_start: np.ndarray,
) -> Tuple[float, float]:
    """Residuals of two decompositions of the local step gradient.

    The corrected decomposition writes the local gradient as the global
    gradient plus a local-drift term plus a heterogeneity term
    (local-at-start minus global-at-start); it is an exact telescoping
    identity, so its residual is rounding noise. The literal variant uses
    (local-at-step minus global-at-start) as the third term instead, which
    only collapses when the local gradient has not moved; its residual
    equals ||grad_local_step - grad_local_start||.
    """
    g_step = np.asarray(grad_local_step, dtype=np.float64)
    g_start = np.asarray(grad_local_start, dtype=np.float64)
    g_glob = np.asarray(grad_global_start, dtype=np.float64)
    if not (g_step.shape == g_start.shape == g_glob.shape):
        raise ValueError("gradient layouts differ")
    corrected_rhs = g_glob + (g_step - g_start) + (g_start - g_glob)
    literal_rhs = g_glob + (g_step - g_start) + (g_step - g_glob)
    corrected = float(np.linalg.norm(g_step - corrected_rhs))
    literal = float(np.linalg.norm(g_step - literal_rhs))
    return corrected, literal


def convergence_step_bound(
    gap: float,
    eta: float,
    local_steps: int,
    mu: float,
    modality_count: int,
    smoothness: float,
    sigma2: float,
    zeta2: float,
    num_aps: int,
) -> float:
    """One application of the round-gap recursion."""
    if min(gap, mu, smoothness, sigma2, zeta2) < 0:
        raise ValueError("constants must be nonnegative")
    contraction = eta * local_steps * mu / modality_count
    if contraction >= 1.0:
        raise BoundInapplicableError(
            f"eta*J*mu/M = {contraction:.6g} >= 1: bound inapplicable"
        )
    noise = (
        eta**2
        * smoothness
        * local_steps**2
        * (sigma2 + zeta2)
        / (2.0 * num_aps * modality_count)
    )
    return gap * (1.0 - contraction) + noise


@dataclass
class QuadraticProblem:
    """Federated quadratic objective with exactly known constants.

    AP n minimizes f_n(w) = 0.5 w^T A w - b_n^T w; the curvature matrix is
    shared across APs so the AP-drift gradients (b_mean - b_n) are constant
    in w and the drift variance zeta^2 is a finite exact number. Stochastic
    gradients add the mean of ``batch_size`` fresh per-example Gaussian
    noise vectors, each with total variance noise_scale^2, giving a
    per-step variance of exactly noise_scale^2 / batch_size.
    """

    a_matrices: np.ndarray  # (N, d, d), all equal by construction
    b_vectors: np.ndarray  # (N, d)
    noise_scale: float
    w_init: np.ndarray
    # derived, exact
    b_mean: np.ndarray = field(init=False)
    w_star: np.ndarray = field(init=False)
    f_star: float = field(init=False)
    smoothness: float = field(init=False)
    mu: float = field(init=False)
    zeta2: float = field(init=False)

    def __post_init__(self):
        self.a_matrices = np.asarray(self.a_matrices, dtype=np.float64)
        self.b_vectors = np.asarray(self.b_vectors, dtype=np.float64)
        a = self.a_matrices[0]
        if not np.allclose(a, a.T, atol=1e-12):
            raise ValueError("curvature matrix must be symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs[0] <= 0:
            raise ValueError("curvature matrix must be positive definite")
        self.b_mean = self.b_vectors.mean(axis=0)
        self.w_star = np.linalg.solve(a, self.b_mean)
        self.f_star = self.f_global(self.w_star)
        self.smoothness = float(eigs[-1])
        self.mu = float(eigs[0])
        drift = self.b_vectors - self.b_mean
        self.zeta2 = float(np.mean(np.sum(drift**2, axis=1)))

    @property
    def dim(self) -> int:
        return self.a_matrices.shape[1]

    @property
    def num_aps(self) -> int:
        return self.a_matrices.shape[0]

    def f_global(self, w: np.ndarray) -> float:
        a = self.a_matrices[0]
        return float(0.5 * w @ a @ w - self.b_mean @ w)

    def grad_local(self, ap: int, w: np.ndarray) -> np.ndarray:
        return self.a_matrices[ap] @ w - self.b_vectors[ap]

    def grad_global(self, w: np.ndarray) -> np.ndarray:
        return self.a_matrices[0] @ w - self.b_mean

    def gap(self, w: np.ndarray) -> float:
        return self.f_global(w) - self.f_star

    def sigma2(self, batch_size: int) -> float:
        """Exact per-step stochastic gradient variance at this batch size."""
        return self.noise_scale**2 / batch_size


def make_quadratic_problem(
    seed: int,
    dim: int,
    num_aps: int,
    noise_scale: float,
    mu_target: float = 1.0,
    smoothness_target: float = 10.0,
    drift_scale: float = 1.0,
    init_radius: float = 1.0,
) -> QuadraticProblem:
    """Random problem with spectrum spanning [mu_target, smoothness_target].

    ``drift_scale`` sets the expected squared norm of each AP's gradient
    offset from the global gradient (zero when num_aps == 1).
    """
    if dim < 1 or num_aps < 1:
        raise ValueError("dim and num_aps must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_QUAD, seed)))
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix the QR sign ambiguity
    if dim == 1:
        eigs = np.array([mu_target])
    else:
        eigs = np.linspace(mu_target, smoothness_target, dim)
    a = (q * eigs) @ q.T
    a = 0.5 * (a + a.T)
    b_mean = rng.standard_normal(dim)
    if num_aps > 1 and drift_scale > 0:
        delta = rng.standard_normal((num_aps, dim)) * (drift_scale / np.sqrt(dim))
        delta -= delta.mean(axis=0)
    else:
        delta = np.zeros((num_aps, dim))
    b_vectors = b_mean + delta
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    a_stack = np.repeat(a[None], num_aps, axis=0)
    problem = QuadraticProblem(
        a_matrices=a_stack,
        b_vectors=b_vectors,
        noise_scale=noise_scale,
        w_init=np.zeros(dim),
    )
    problem.w_init = problem.w_star + init_radius * direction
    return problem


def simulate_quadratic_runs(
    problem: QuadraticProblem, cfg: QuadRunConfig, num_runs: int
) -> np.ndarray:
    """Federated local-SGD trajectories on the quadratic, vectorized over runs.

    With M modalities the injected per-example noise and the AP drift are
    both scaled by 1/sqrt(M), matching the assumption that their variances
    shrink proportionally to the modality count. Returns the global gap per
    run and round, shape (num_runs, rounds + 1).
    """
    m = cfg.modality_count
    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_VERIFY, cfg.seed)))
    a = problem.a_matrices[0]
    scale = problem.noise_scale / np.sqrt(m) / np.sqrt(problem.dim)
    drift = (problem.b_vectors - problem.b_mean) / np.sqrt(m)
    b_eff = problem.b_mean + drift

    w = np.repeat(problem.w_init[None], num_runs, axis=0)  # (R, d)
    gaps = np.empty((num_runs, cfg.rounds + 1))
    gaps[:, 0] = _gap_rows(problem, w)
    for t in range(cfg.rounds):
        acc = np.zeros_like(w)
        for n in range(problem.num_aps):
            wn = w.copy()
            for _ in range(cfg.local_steps):
                if problem.noise_scale > 0:
                    eps = rng.standard_normal((num_runs, cfg.batch_size, problem.dim))
                    noise = eps.mean(axis=1) * scale
                else:
                    noise = 0.0
                g = wn @ a - b_eff[n] + noise
                wn = wn - cfg.eta * g
            acc += wn
        w = acc / problem.num_aps
        gaps[:, t + 1] = _gap_rows(problem, w)
    return gaps


def _gap_rows(problem: QuadraticProblem, w: np.ndarray) -> np.ndarray:
    a = problem.a_matrices[0]
    vals = 0.5 * np.einsum("rd,de,re->r", w, a, w) - w @ problem.b_mean
    return vals - problem.f_star


def verify_bound(
    problem: QuadraticProblem, cfg: QuadRunConfig, seeds: int
) -> BoundTrace:
    """Monte Carlo check that the mean gap stays under the iterated bound.

    Runs ``seeds`` independent trajectories, averages the gap per round, and
    iterates the step bound from the measured initial gap using the
    problem's exact constants. A round is a violation when the empirical
    mean exceeds bound + 3 * (standard error).
    """
    contraction = cfg.eta * cfg.local_steps * problem.mu / cfg.modality_count
    if contraction >= 1.0:
        raise BoundInapplicableError(
            f"eta*J*mu/M = {contraction:.6g} >= 1: bound inapplicable"
        )
    gaps = simulate_quadratic_runs(problem, cfg, seeds)
    empirical = gaps.mean(axis=0)
    if seeds > 1:
        stderr = gaps.std(axis=0, ddof=1) / np.sqrt(seeds)
    else:
        stderr = np.zeros_like(empirical)
    bound = np.empty_like(empirical)
    bound[0] = empirical[0]
    for t in range(cfg.rounds):
        bound[t + 1] = convergence_step_bound(
            bound[t],
            cfg.eta,
            cfg.local_steps,
            problem.mu,
            cfg.modality_count,
            problem.smoothness,
            problem.sigma2(cfg.batch_size),
            problem.zeta2,
            problem.num_aps,
        )
    violations = np.flatnonzero(empirical > bound + 3.0 * stderr)
    return BoundTrace(
        rounds=np.arange(cfg.rounds + 1),
        empirical=empirical,
        stderr=stderr,
        bound=bound,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# estimators on real models

def estimate_sigma2(
    spec: models.ModelSpec,
    params: np.ndarray,
    data: models.Batch,
    batch_size: int,
    trials: int,
    seed: int,
) -> float:
    """Mean squared deviation of mini-batch gradients from the full gradient."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    n = len(data)
    if batch_size > n:
        raise ValueError("batch_size exceeds dataset size")
    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_ESTIMATE, seed)))
    _, g_full = models.loss_and_grad(spec, params, data)
    total = 0.0
    for _ in range(trials):
        idx = np.sort(rng.choice(n, size=batch_size, replace=False))
        _, g = models.loss_and_grad(spec, params, data.select(idx))
        diff = g - g_full
        total += float(diff @ diff)
    return total / trials


def estimate_zeta2(
    spec: models.ModelSpec, params: np.ndarray, ap_batches: Sequence[models.Batch]
) -> float:
    """Average squared deviation of AP full gradients from their mean."""
    grads = [models.loss_and_grad(spec, params, b)[1] for b in ap_batches]
    mean = np.mean(grads, axis=0)
    return float(np.mean([np.sum((g - mean) ** 2) for g in grads]))


def smoothness_lower_bound(
    grad_fn, dim: int, pair_trials: int, rng: np.random.Generator, radius: float = 1.0
) -> float:
    """Max gradient-difference ratio over random parameter pairs.

    Always a lower bound on the true Lipschitz constant; approaches it from
    below as the number of sampled pairs grows.
    """
    if pair_trials < 1:
        raise ValueError("pair_trials must be >= 1")
    best = 0.0
    for _ in range(pair_trials):
        w1 = rng.standard_normal(dim) * radius
        w2 = rng.standard_normal(dim) * radius
        denom = np.linalg.norm(w1 - w2)
        if denom == 0.0:
            continue
        num = np.linalg.norm(grad_fn(w1) - grad_fn(w2))
        best = max(best, float(num / denom))
    return best


def estimate_smoothness(
    spec: models.ModelSpec,
    data: models.Batch,
    pair_trials: int,
    seed: int,
    radius: float = 1.0,
) -> float:
    """Smoothness lower bound of the model loss on the given dataset."""
    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_ESTIMATE, seed, 1)))
    dim = models.num_params(spec)
    grad_fn = lambda w: models.loss_and_grad(spec, w, data)[1]
    return smoothness_lower_bound(grad_fn, dim, pair_trials, rng, radius)


def estimate_assumptions(
    spec: models.ModelSpec,
    params: np.ndarray,
    ap_batches: Sequence[models.Batch],
    batch_size: int,
    trials: int,
    seed: int,
    modality_count: int,
) -> AssumptionEstimates:
    """Bundle the measured constants for one model/partition state."""
    pooled = models.Batch(
        np.concatenate([b.inputs for b in ap_batches]),
        np.concatenate([b.labels for b in ap_batches]),
    )
    sigma2 = float(
        np.mean(
            [
                estimate_sigma2(spec, params, b, min(batch_size, len(b)), trials, seed + i)
                for i, b in enumerate(ap_batches)
            ]
        )
    )
    zeta2 = estimate_zeta2(spec, params, ap_batches)
    smooth = estimate_smoothness(spec, pooled, max(trials, 8), seed)
    mu = spec.l2_coeff if spec.kind == models.KIND_SOFTMAX else 0.0
    return AssumptionEstimates(
        smoothness_lb=max(smooth, mu),
        strong_convexity=mu,
        sigma2=sigma2,
        zeta2=zeta2,
        modality_count=modality_count,
    )
