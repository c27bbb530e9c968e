"""End-to-end pipeline, exact reverse-mode gradients, and Adam training.

The trainable parameter vector theta stacks, in this fixed order:

    [ metric factor C lower triangle (15) |
      Taylor coefficients a_0..a_K (K+1)  |
      CG alphas (T)                       |
      CG betas (T-1) ]

The forward pass rebuilds the filter operator from theta every time (Psi
depends on the metric), runs the truncated-inverse system through the
learned-mode unrolled CG, and returns the depth-T iterate. Reverse-mode
gradients are hand-derived through the whole composition: the CG updates
(alpha/beta as leaves), the polynomial recurrence (cached t_k terms), the
symmetric normalization and the exponential weights into C. Feature
extraction is deliberately treated as a constant of the noisy input
(pseudo-linear convention), so no gradient flows into the features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cg_unroll import CgConfig, calibrate_cg_params, unrolled_cg
from .errors import InvalidInputError, NumericDivergenceError
from .graph_filter import (
    FEATURE_DIM,
    MetricFactor,
    build_filter_matrix,
    extract_features,
    normalize,
)
from .taylor_system import TaylorSystemOperator, default_coefficients

_TRIL = np.tril_indices(FEATURE_DIM)
N_METRIC_PARAMS = _TRIL[0].size  # 15

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    """Structural hyperparameters of the denoising network."""

    window_radius: int = 3
    degree_K: int = 10
    expansion_s: float = 1.0
    depth_T: int = 15
    cg_mode: str = "learned"
    diagonal_load: float = 0.0
    epsilon_guard: float = 1e-12


@dataclass(eq=False)
class ParamVector:
    """Trainable parameters; pack/unpack use the documented fixed layout."""

    metric_factor: np.ndarray  # lower triangle of C, row-major (15)
    tse_coeffs: np.ndarray     # K+1
    cg_alpha: np.ndarray       # T
    cg_beta: np.ndarray        # T-1

    def __post_init__(self):
        self.metric_factor = np.asarray(self.metric_factor, dtype=float)
        self.tse_coeffs = np.asarray(self.tse_coeffs, dtype=float)
        self.cg_alpha = np.asarray(self.cg_alpha, dtype=float)
        self.cg_beta = np.asarray(self.cg_beta, dtype=float)
        if self.metric_factor.shape != (N_METRIC_PARAMS,):
            raise InvalidInputError(f"metric_factor must have length {N_METRIC_PARAMS}")
        if self.cg_beta.shape != (max(self.cg_alpha.size - 1, 0),):
            raise InvalidInputError("cg_beta must be one entry shorter than cg_alpha")

    @property
    def size(self) -> int:
        return (
            self.metric_factor.size
            + self.tse_coeffs.size
            + self.cg_alpha.size
            + self.cg_beta.size
        )

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.metric_factor, self.tse_coeffs, self.cg_alpha, self.cg_beta]
        )

    @classmethod
    def unpack(cls, flat: np.ndarray, degree_K: int, depth_T: int) -> "ParamVector":
        flat = np.asarray(flat, dtype=float)
        sizes = [N_METRIC_PARAMS, degree_K + 1, depth_T, max(depth_T - 1, 0)]
        if flat.shape != (sum(sizes),):
            raise InvalidInputError(
                f"expected a flat vector of length {sum(sizes)}, got {flat.shape}"
            )
        bounds = np.cumsum(sizes)[:-1]
        parts = np.split(flat, bounds)
        return cls(*parts)

    @classmethod
    def initial(cls, hyper: PipelineConfig) -> "ParamVector":
        """Classic-filter metric, alternating-sign coefficients, neutral CG.

        The CG scalars are placeholders (alpha = 1, beta = 0) until
        calibrate_cg_params seeds them from analytic runs.
        """
        metric = MetricFactor.bilateral_default()
        return cls(
            metric_factor=metric.lower_triangle(),
            tse_coeffs=default_coefficients(hyper.degree_K),
            cg_alpha=np.ones(hyper.depth_T),
            cg_beta=np.zeros(max(hyper.depth_T - 1, 0)),
        )

    def metric(self) -> MetricFactor:
        return MetricFactor.from_lower_triangle(self.metric_factor, FEATURE_DIM)


def _build_system(theta: ParamVector, noisy: np.ndarray, patch_side: int, hyper: PipelineConfig):
    field_ = extract_features(noisy, patch_side)
    metric = theta.metric()
    filt = build_filter_matrix(field_, metric, hyper.window_radius)
    op = normalize(filt, diagonal_load=hyper.diagonal_load)
    system = TaylorSystemOperator(
        psi=op,
        degree_K=hyper.degree_K,
        coefficients=theta.tse_coeffs,
        expansion_point_s=hyper.expansion_s,
    )
    return metric, filt, op, system


def _cg_config(theta: ParamVector, hyper: PipelineConfig) -> CgConfig:
    if hyper.cg_mode == "learned":
        return CgConfig(
            depth_T=hyper.depth_T,
            mode="learned",
            learned_alpha=theta.cg_alpha,
            learned_beta=theta.cg_beta,
            epsilon_guard=hyper.epsilon_guard,
        )
    return CgConfig(depth_T=hyper.depth_T, mode="analytic", epsilon_guard=hyper.epsilon_guard)


class _RecordingSystem:
    """Wraps a system so unrolled_cg leaves behind the per-apply caches.

    The solver calls apply_system once for the initial residual (input y)
    and once per depth step (input p_k); recording inputs, outputs and the
    polynomial terms in call order is all the backward pass needs.
    """

    def __init__(self, system: TaylorSystemOperator):
        self.system = system
        self.inputs: list[np.ndarray] = []
        self.outputs: list[np.ndarray] = []
        self.t_caches: list[list[np.ndarray]] = []

    def apply_system(self, v: np.ndarray) -> np.ndarray:
        out, cache = self.system.apply_truncated_inverse_with_cache(v)
        self.inputs.append(v)
        self.outputs.append(out)
        self.t_caches.append(cache)
        return out


def forward(
    theta: ParamVector,
    noisy_patch: np.ndarray,
    patch_side: int,
    hyper: PipelineConfig = PipelineConfig(),
) -> np.ndarray:
    """Denoise one patch: features -> weights -> normalize -> unrolled CG."""
    noisy = np.asarray(noisy_patch, dtype=float)
    _, _, _, system = _build_system(theta, noisy, patch_side, hyper)
    x, _ = unrolled_cg(system, noisy, _cg_config(theta, hyper))
    return x


def loss(theta: ParamVector, batch, patch_side: int, hyper: PipelineConfig = PipelineConfig()) -> float:
    """Summed squared error over (noisy, clean) pairs (sum, not mean)."""
    batch = list(batch)
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    total = 0.0
    for noisy, clean in batch:
        clean = np.asarray(clean, dtype=float)
        x = forward(theta, noisy, patch_side, hyper)
        d = clean - x
        total += float(d @ d)
    return total


def _grad_single(
    theta: ParamVector, noisy: np.ndarray, clean: np.ndarray, patch_side: int, hyper: PipelineConfig
) -> tuple[float, ParamVector]:
    noisy = np.asarray(noisy, dtype=float)
    clean = np.asarray(clean, dtype=float)
    metric, filt, op, system = _build_system(theta, noisy, patch_side, hyper)
    recorder = _RecordingSystem(system)
    x, _ = unrolled_cg(recorder, noisy, _cg_config(theta, hyper))

    T = hyper.depth_T
    K = hyper.degree_K
    s = hyper.expansion_s
    n = op.n
    c = system._scaled
    powers = s ** np.arange(1, K + 2)

    resid = x - clean
    pair_loss = float(resid @ resid)

    ga = np.zeros(K + 1)
    psi_bar = np.zeros(op.values.shape)

    def apply_vjp(idx: int, g_out: np.ndarray) -> np.ndarray:
        # Adjoint of one truncated-inverse apply. Accumulates dL/da_k and
        # dL/dPsi_e; returns the adjoint of the apply's input vector.
        nonlocal ga
        ts = recorder.t_caches[idx]
        ga += np.array([g_out @ t for t in ts]) / powers
        gt = c[K] * g_out
        for k in range(K, 0, -1):
            # forward: t_k = Psi t_{k-1} - s t_{k-1}
            psi_bar[:] += gt[op.rows] * ts[k - 1][op.cols]
            gt = op.apply(gt) - s * gt + c[k - 1] * g_out
        return gt

    # --- reverse through the CG updates (alpha, beta are leaves) ---
    gx = 2.0 * resid
    gr = np.zeros(n)
    gp = np.zeros(n)
    g_alpha = np.zeros(T)
    g_beta = np.zeros(max(T - 1, 0))
    for k in range(T - 1, -1, -1):
        alpha = float(theta.cg_alpha[k])
        p_k = recorder.inputs[k + 1]
        v_k1 = recorder.outputs[k + 1]
        if k < T - 1:
            # p_{k+1} = r_{k+1} + beta_k p_k; gp currently holds d/dp_{k+1}
            g_beta[k] = float(gp @ p_k)
            gr = gr + gp
            gp = float(theta.cg_beta[k]) * gp
        # r_{k+1} = r_k - alpha_k v_{k+1}
        # x_{k+1} = x_k + alpha_k p_k
        g_alpha[k] = float(gx @ p_k) - float(gr @ v_k1)
        gv = -alpha * gr
        gp = gp + alpha * gx
        # v_{k+1} = A p_k
        gp = gp + apply_vjp(k + 1, gv)
    # p_0 = r_0 and r_0 = y - A y (y is a constant input)
    gr = gr + gp
    apply_vjp(0, -gr)

    # --- reverse through Psi = (1-eps) S^{-1/2} B S^{-1/2} + eps I ---
    rows, cols = op.rows, op.cols
    S = op.row_sums
    load = hyper.diagonal_load
    inv_sqrt = 1.0 / np.sqrt(S)
    pair = inv_sqrt[rows] * inv_sqrt[cols]
    norm_part = (1.0 - load) * filt.weights * pair
    tmp = psi_bar * norm_part
    gS = -0.5 / S * (
        np.bincount(rows, weights=tmp, minlength=n)
        + np.bincount(cols, weights=tmp, minlength=n)
    )
    gb = (1.0 - load) * pair * psi_bar + gS[rows]

    # --- reverse through b_e = exp(-||C d_e||^2) into the factor C ---
    gq = -filt.weights * gb
    scatter = filt.diffs.T @ (filt.diffs * gq[:, None])
    gC = 2.0 * metric.entries @ scatter
    g_metric = gC[_TRIL]

    return pair_loss, ParamVector(g_metric, ga, g_alpha, g_beta)


def loss_and_grad(
    theta: ParamVector, batch, patch_side: int, hyper: PipelineConfig = PipelineConfig()
) -> tuple[float, ParamVector]:
    """Batch loss and its exact reverse-mode gradient (learned-mode CG only)."""
    batch = list(batch)
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    if hyper.cg_mode != "learned":
        raise InvalidInputError("reverse-mode gradients require learned-mode CG")
    total_loss = 0.0
    total = np.zeros(
        N_METRIC_PARAMS + hyper.degree_K + 1 + hyper.depth_T + max(hyper.depth_T - 1, 0)
    )
    for noisy, clean in batch:
        pair_loss, g = _grad_single(theta, noisy, clean, patch_side, hyper)
        total_loss += pair_loss
        total += g.pack()
    return total_loss, ParamVector.unpack(total, hyper.degree_K, hyper.depth_T)


def grad_reverse(
    theta: ParamVector, batch, patch_side: int, hyper: PipelineConfig = PipelineConfig()
) -> ParamVector:
    _, g = loss_and_grad(theta, batch, patch_side, hyper)
    return g


def central_difference(fn, theta0: np.ndarray, h_rel: float = 1e-5) -> np.ndarray:
    """Central finite differences with per-coordinate step h*max(|x_i|, 1)."""
    if h_rel <= 0.0:
        raise InvalidInputError("finite-difference step must be positive")
    theta0 = np.asarray(theta0, dtype=float)
    g = np.zeros_like(theta0)
    for i in range(theta0.size):
        h = h_rel * max(abs(theta0[i]), 1.0)
        plus = theta0.copy()
        plus[i] += h
        minus = theta0.copy()
        minus[i] -= h
        f_plus = fn(plus)
        f_minus = fn(minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericDivergenceError(f"non-finite loss while differencing parameter {i}")
        g[i] = (f_plus - f_minus) / (2.0 * h)
    return g


def grad_fd(
    theta: ParamVector,
    batch,
    patch_side: int,
    hyper: PipelineConfig = PipelineConfig(),
    h: float = 1e-5,
) -> ParamVector:
    """Finite-difference gradient oracle (2 * n_params forward passes)."""
    batch = list(batch)
    flat0 = theta.pack()

    def fn(flat):
        return loss(ParamVector.unpack(flat, hyper.degree_K, hyper.depth_T), batch, patch_side, hyper)

    g = central_difference(fn, flat0, h)
    return ParamVector.unpack(g, hyper.degree_K, hyper.depth_T)


@dataclass(eq=False)
class TrainState:
    """Parameters plus Adam first/second moments."""

    params: ParamVector
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.adam_m.shape != (self.params.size,) or self.adam_v.shape != (self.params.size,):
            raise InvalidInputError("moment vectors must match the parameter count")
        if self.step_count < 0:
            raise InvalidInputError("step_count must be >= 0")

    @classmethod
    def fresh(cls, params: ParamVector, learning_rate: float = 0.001) -> "TrainState":
        zeros = np.zeros(params.size)
        return cls(params=params, adam_m=zeros.copy(), adam_v=zeros.copy(), learning_rate=learning_rate)


def adam_step(state: TrainState, gradient) -> TrainState:
    """One bias-corrected Adam update; the gradient is expected to be
    pre-divided by the batch size by the caller."""
    if isinstance(gradient, ParamVector):
        g = gradient.pack()
    else:
        g = np.asarray(gradient, dtype=float)
    if g.shape != (state.params.size,):
        raise InvalidInputError("gradient length does not match parameters")
    if not np.all(np.isfinite(g)):
        raise NumericDivergenceError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    m = state.beta1 * state.adam_m + (1.0 - state.beta1) * g
    v = state.beta2 * state.adam_v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    flat = state.params.pack() - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    degree_K = state.params.tse_coeffs.size - 1
    depth_T = state.params.cg_alpha.size
    params = ParamVector.unpack(flat, degree_K, depth_T)
    return replace(state, params=params, adam_m=m, adam_v=v, step_count=t)


def _patch_psnr(clean: np.ndarray, out: np.ndarray) -> float:
    err = clean - np.clip(out, 0.0, 1.0)
    mse = float(err @ err) / err.size
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def evaluate_psnr(
    theta: ParamVector, pairs, patch_side: int, hyper: PipelineConfig = PipelineConfig()
) -> float:
    """Mean patch PSNR of the denoised outputs against the clean patches."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("evaluation set must be nonempty")
    vals = [
        _patch_psnr(np.asarray(clean, dtype=float), forward(theta, noisy, patch_side, hyper))
        for noisy, clean in pairs
    ]
    return float(np.mean(vals))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float  # mean per-patch summed-square loss over the epoch
    val_psnr: float


def train_loop(
    train_pairs,
    patch_side: int,
    epochs: int,
    batch_size: int,
    seed: int,
    hyper: PipelineConfig = PipelineConfig(),
    val_pairs=None,
    learning_rate: float = 0.001,
) -> tuple[TrainState, list[EpochStats]]:
    """Deterministic Adam training over (noisy, clean) patch pairs.

    Initialization: classic-filter metric, alternating-sign Taylor
    coefficients, and CG scalars calibrated by analytic runs on the first
    batch (in dataset order). Shuffling and batching are driven by a single
    seeded generator, and gradients accumulate in a fixed order, so a fixed
    seed reproduces the run bit for bit. Validation PSNR uses val_pairs when
    given, else the training pairs.
    """
    train_pairs = [(np.asarray(y, dtype=float), np.asarray(x, dtype=float)) for y, x in train_pairs]
    if not train_pairs:
        raise InvalidInputError("training dataset must be nonempty")
    if epochs < 0:
        raise InvalidInputError("epochs must be >= 0")
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    if hyper.cg_mode != "learned":
        raise InvalidInputError("training requires learned-mode CG")

    theta = ParamVector.initial(hyper)
    first = train_pairs[:batch_size]
    systems = []
    for noisy, _ in first:
        _, _, _, system = _build_system(theta, noisy, patch_side, hyper)
        systems.append((system, noisy))
    alpha0, beta0 = calibrate_cg_params(systems, hyper.depth_T)
    theta = ParamVector(theta.metric_factor, theta.tse_coeffs, alpha0, beta0)

    state = TrainState.fresh(theta, learning_rate=learning_rate)
    eval_pairs = list(val_pairs) if val_pairs else train_pairs
    rng = np.random.default_rng(seed)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_pairs[i] for i in order[start : start + batch_size]]
            batch_loss, g = loss_and_grad(state.params, batch, patch_side, hyper)
            epoch_loss += batch_loss
            state = adam_step(state, g.pack() / len(batch))
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=epoch_loss / len(train_pairs),
                val_psnr=evaluate_psnr(state.params, eval_pairs, patch_side, hyper),
            )
        )
    return state, history


def save_checkpoint(path, params: ParamVector, hyper: PipelineConfig) -> None:
    """Versioned JSON checkpoint: parameters plus structural hyperparameters.

    Floats are serialized with repr-exact round-tripping, so identical
    parameters always produce identical bytes.
    """
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "feature_dim": FEATURE_DIM,
        "window_radius": hyper.window_radius,
        "degree_K": hyper.degree_K,
        "expansion_s": hyper.expansion_s,
        "depth_T": hyper.depth_T,
        "metric_factor": [float(v) for v in params.metric_factor],
        "tse_coeffs": [float(v) for v in params.tse_coeffs],
        "cg_alpha": [float(v) for v in params.cg_alpha],
        "cg_beta": [float(v) for v in params.cg_beta],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")


def load_checkpoint(path) -> tuple[ParamVector, PipelineConfig]:
    try:
        payload = json.loads(Path(path).read_text(encoding="ascii"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version!r}")
    if payload.get("feature_dim") != FEATURE_DIM:
        raise InvalidInputError("checkpoint feature_dim does not match this build")
    hyper = PipelineConfig(
        window_radius=int(payload["window_radius"]),
        degree_K=int(payload["degree_K"]),
        expansion_s=float(payload["expansion_s"]),
        depth_T=int(payload["depth_T"]),
        cg_mode="learned",
    )
    params = ParamVector(
        metric_factor=np.asarray(payload["metric_factor"], dtype=float),
        tse_coeffs=np.asarray(payload["tse_coeffs"], dtype=float),
        cg_alpha=np.asarray(payload["cg_alpha"], dtype=float),
        cg_beta=np.asarray(payload["cg_beta"], dtype=float),
    )
    if params.tse_coeffs.size != hyper.degree_K + 1 or params.cg_alpha.size != hyper.depth_T:
        raise InvalidInputError("checkpoint parameter lengths do not match its hyperparameters")
    return params, hyper
