"""Fixed-depth unrolled conjugate gradient with analytic or learned scalars.

Each depth step performs the classic CG update

    v_{k+1} = A p_k
    x_{k+1} = x_k + alpha_k p_k
    r_{k+1} = r_k - alpha_k v_{k+1}
    p_{k+1} = r_{k+1} + beta_k p_k

starting from the warm start x_0 = y, r_0 = y - A y, p_0 = r_0. In analytic
mode alpha_k = r_k.r_k / p_k.v_{k+1} and beta_k = r_{k+1}.r_{k+1} / r_k.r_k
are data-dependent; in learned mode they are fixed per-depth scalars shared
across all inputs, which is what makes the unrolled solver a trainable
feed-forward network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericDivergenceError


@dataclass(eq=False)
class CgConfig:
    """Depth, scalar mode and breakdown guard for the unrolled solver."""

    depth_T: int = 15
    mode: str = "analytic"  # "analytic" | "learned"
    learned_alpha: np.ndarray | None = None
    learned_beta: np.ndarray | None = None
    epsilon_guard: float = 1e-12

    def __post_init__(self):
        if self.depth_T < 0:
            raise InvalidInputError("depth_T must be >= 0")
        if self.mode not in ("analytic", "learned"):
            raise InvalidInputError(f"unknown CG mode {self.mode!r}")
        if self.epsilon_guard <= 0.0:
            raise InvalidInputError("epsilon_guard must be positive")
        if self.mode == "learned":
            self.learned_alpha = np.asarray(self.learned_alpha, dtype=float)
            self.learned_beta = np.asarray(self.learned_beta, dtype=float)
            if self.learned_alpha.shape != (self.depth_T,):
                raise InvalidInputError(f"learned_alpha must have length {self.depth_T}")
            if self.learned_beta.shape != (max(self.depth_T - 1, 0),):
                raise InvalidInputError(f"learned_beta must have length {self.depth_T - 1}")


@dataclass(eq=False)
class CgTrace:
    """Realized iterates and scalars of one unrolled solve."""

    iterates: list[np.ndarray]       # x_0 .. x_T
    residual_norms: list[float]      # ||r_0|| .. ||r_T||
    used_alphas: np.ndarray          # length T
    used_betas: np.ndarray           # length max(T - 1, 0)


def _as_matvec(system):
    # Accepts a TaylorSystemOperator (or anything exposing apply_system) or
    # a bare callable v -> A v, so generic SPD systems can be solved too.
    if hasattr(system, "apply_system"):
        return system.apply_system
    if callable(system):
        return system
    raise InvalidInputError("system must expose apply_system or be callable")


def unrolled_cg(system, y: np.ndarray, cfg: CgConfig, want_trace: bool = False):
    """Run T unrolled CG steps on A x = y; returns (x, trace or None).

    Analytic mode guards against breakdown: once r_k.r_k or |p_k.v_{k+1}|
    falls below epsilon_guard, every remaining step is an identity
    pass-through with alpha = beta = 0 (a converged patch must not abort a
    batch). Learned mode applies the stored scalars unconditionally and
    raises NumericDivergenceError if the state stops being finite.
    """
    matvec = _as_matvec(system)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise InvalidInputError(f"right-hand side must be a vector, got shape {y.shape}")

    T = cfg.depth_T
    analytic = cfg.mode == "analytic"
    x = y.copy()
    r = y - matvec(y)
    if r.shape != y.shape:
        raise InvalidInputError("system output shape does not match the input")
    p = r.copy()

    alphas = np.zeros(T)
    betas = np.zeros(max(T - 1, 0))
    iterates = [x.copy()] if want_trace else None
    res_norms = [float(np.linalg.norm(r))] if want_trace else None
    broken = False

    for k in range(T):
        if analytic and broken:
            if want_trace:
                iterates.append(x.copy())
                res_norms.append(res_norms[-1])
            continue
        if analytic:
            rr_old = float(r @ r)
            if rr_old < cfg.epsilon_guard:
                broken = True
                if want_trace:
                    iterates.append(x.copy())
                    res_norms.append(res_norms[-1])
                continue
            v = matvec(p)
            pv = float(p @ v)
            if abs(pv) < cfg.epsilon_guard:
                broken = True
                if want_trace:
                    iterates.append(x.copy())
                    res_norms.append(res_norms[-1])
                continue
            alpha = rr_old / pv
        else:
            v = matvec(p)
            alpha = float(cfg.learned_alpha[k])
        x = x + alpha * p
        r = r - alpha * v
        rr_new = float(r @ r)
        if not (np.isfinite(alpha) and np.isfinite(rr_new)):
            raise NumericDivergenceError(
                f"non-finite CG state at iteration {k}", iteration=k
            )
        alphas[k] = alpha
        if k < T - 1:
            beta = rr_new / rr_old if analytic else float(cfg.learned_beta[k])
            betas[k] = beta
            p = r + beta * p
        if want_trace:
            iterates.append(x.copy())
            res_norms.append(float(np.sqrt(rr_new)))

    if not np.all(np.isfinite(x)):
        raise NumericDivergenceError(f"non-finite CG output after {T} iterations", iteration=T)
    trace = CgTrace(iterates, res_norms, alphas, betas) if want_trace else None
    return x, trace


def calibrate_cg_params(system_batch, depth_T: int) -> tuple[np.ndarray, np.ndarray]:
    """Seed learned-mode scalars: per-depth means of analytic alpha/beta.

    system_batch is a sequence of (system, y) pairs; every element is solved
    in analytic mode and the realized scalars are averaged elementwise.
    """
    system_batch = list(system_batch)
    if not system_batch:
        raise InvalidInputError("calibration batch must be nonempty")
    cfg = CgConfig(depth_T=depth_T, mode="analytic")
    all_alphas = []
    all_betas = []
    for system, y in system_batch:
        _, trace = unrolled_cg(system, y, cfg, want_trace=True)
        all_alphas.append(trace.used_alphas)
        all_betas.append(trace.used_betas)
    return np.mean(all_alphas, axis=0), np.mean(all_betas, axis=0)
