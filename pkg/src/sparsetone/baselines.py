"""Iterative sparse attack baselines: sparse PGD, a 1-D SparseFool variant,
and a one-sample (one-pixel) differential-evolution attack.

All attacks perturb a single waveform at a time against a frozen classifier,
stay inside the elementwise epsilon ball around the input and inside [-1, 1],
and stop early once the prediction flips. An input the model already gets
wrong counts as an immediate success with a zero perturbation.

Perturbations are tracked in float64 delta space and clipped against
min(eps, 1 - x) / max(-eps, -1 - x), which keeps both projections exact per
element; waveforms are cast to the model's dtype only for forward passes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .losses import AttackConfig
from .models import Classifier


@dataclass
class AttackResult:
    """Per-example attack outcome with the sparse perturbation itself."""

    clip_id: str
    original_pred: int
    adversarial_pred: int
    success: bool
    delta: np.ndarray
    iterations_used: int
    wall_clock_s: float
    true_label: int

    def support_size(self, tol: float = 1e-12) -> int:
        return int(np.sum(np.abs(self.delta) > tol))


def _model_dtype(model: Classifier):
    return next(model.net.parameters()).dtype


def _predict(model: Classifier, x64: np.ndarray) -> int:
    xt = torch.as_tensor(x64, dtype=_model_dtype(model))
    with torch.no_grad():
        return int(model.net(xt.unsqueeze(0)).argmax().item())


def _early_exit(clip_id, pred, y, n, t0) -> AttackResult:
    return AttackResult(clip_id, pred, pred, success=(pred != y),
                        delta=np.zeros(n, dtype=np.float64), iterations_used=0,
                        wall_clock_s=time.perf_counter() - t0, true_label=y)


def _delta_bounds(x64: np.ndarray, epsilon: float):
    # exact in float64: 1 - x and -1 - x are representable, eps clips directly
    lo = np.maximum(-epsilon, -1.0 - x64)
    hi = np.minimum(epsilon, 1.0 - x64)
    return lo, hi


def _input_gradient(model: Classifier, x64: np.ndarray, y: int) -> np.ndarray:
    """Gradient of cross-entropy at x with respect to the input, as float64."""
    xg = torch.as_tensor(x64, dtype=_model_dtype(model)).requires_grad_(True)
    loss = torch.nn.functional.cross_entropy(
        model.net(xg.unsqueeze(0)), torch.as_tensor([y]))
    (grad,) = torch.autograd.grad(loss, xg)
    return grad.detach().numpy().astype(np.float64)


def _class_gradient(model: Classifier, x64: np.ndarray, cls: int) -> np.ndarray:
    xg = torch.as_tensor(x64, dtype=_model_dtype(model)).requires_grad_(True)
    (grad,) = torch.autograd.grad(model.net(xg.unsqueeze(0))[0, cls], xg)
    return grad.detach().numpy().astype(np.float64)


def sparse_pgd(model: Classifier, x, y: int, cfg: AttackConfig,
               clip_id: str = "") -> AttackResult:
    """Gradient-sign ascent restricted to a growing sparse support.

    Each iteration ranks the not-yet-perturbed positions by input-gradient
    magnitude (or picks them at random, per cfg.pgd_position_rule), admits
    the top cfg.k into the support, steps by cfg.alpha * sign(gradient) on
    the accumulated support, and projects back into the epsilon ball and
    [-1, 1]. Final support size is at most k * max_iters.
    """
    t0 = time.perf_counter()
    x64 = np.asarray(x, dtype=np.float64)
    n = x64.shape[0]
    pred0 = _predict(model, x64)
    if pred0 != y:
        return _early_exit(clip_id, pred0, y, n, t0)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = _delta_bounds(x64, cfg.epsilon)
    support = np.zeros(n, dtype=bool)
    delta = np.zeros(n, dtype=np.float64)
    iters = 0
    pred = pred0
    for _ in range(cfg.max_iters):
        grad = _input_gradient(model, x64 + delta, y)
        n_new = min(cfg.k, int(np.sum(~support)))
        if n_new > 0:
            if cfg.pgd_position_rule == "gradient":
                scores = np.abs(grad)
                scores[support] = -np.inf
                new_idx = np.argsort(-scores, kind="stable")[:n_new]
            else:
                new_idx = rng.choice(np.flatnonzero(~support), size=n_new,
                                     replace=False)
            support[new_idx] = True
        delta[support] += cfg.alpha * np.sign(grad[support])
        delta = np.clip(delta, lo, hi)
        iters += 1
        pred = _predict(model, x64 + delta)
        if cfg.early_stop and pred != y:
            break
    return AttackResult(clip_id, pred0, pred, success=(pred != y), delta=delta,
                        iterations_used=iters, wall_clock_s=time.perf_counter() - t0,
                        true_label=y)


def _deepfool_boundary(model: Classifier, x64: np.ndarray, y: int,
                       max_steps: int = 50, overshoot: float = 0.02):
    """DeepFool-style search for an approximate decision-boundary point.

    Returns (boundary point, reached class). Works on the unconstrained
    waveform; the sparsification step afterwards enforces validity bounds.
    """
    xb = x64.copy()
    for _ in range(max_steps):
        xt = torch.as_tensor(xb, dtype=_model_dtype(model))
        with torch.no_grad():
            logits = model.net(xt.unsqueeze(0))[0].numpy().astype(np.float64)
        pred = int(np.argmax(logits))
        if pred != y:
            return xb, pred
        grad_y = _class_gradient(model, xb, y)
        best_ratio, best_step = None, None
        for k in range(model.class_count):
            if k == y:
                continue
            wk = _class_gradient(model, xb, k) - grad_y
            fk = float(logits[k] - logits[y])
            norm2 = float(np.dot(wk, wk))
            if norm2 == 0.0:
                continue
            ratio = abs(fk) / np.sqrt(norm2)
            if best_ratio is None or ratio < best_ratio:
                best_ratio = ratio
                best_step = (abs(fk) / norm2) * wk
        if best_step is None:
            break
        xb = xb + (1.0 + overshoot) * best_step
    xt = torch.as_tensor(xb, dtype=_model_dtype(model))
    with torch.no_grad():
        pred = int(model.net(xt.unsqueeze(0)).argmax().item())
    return xb, pred


def sparsefool_1d(model: Classifier, x, y: int, cfg: AttackConfig,
                  clip_id: str = "") -> AttackResult:
    """Geometry-driven sparse attack via iterated boundary linearization.

    Each outer iteration finds an approximate boundary point, linearizes the
    decision boundary there, and moves as few coordinates as possible
    (largest normal component first) to their validity bounds
    [x - eps, x + eps] intersected with [-1, 1] until the linearized boundary
    is crossed.
    """
    t0 = time.perf_counter()
    x64 = np.asarray(x, dtype=np.float64)
    n = x64.shape[0]
    pred0 = _predict(model, x64)
    if pred0 != y:
        return _early_exit(clip_id, pred0, y, n, t0)
    lo, hi = _delta_bounds(x64, cfg.epsilon)
    delta = np.zeros(n, dtype=np.float64)
    iters = 0
    pred = pred0
    for _ in range(cfg.max_iters):
        x_cur = x64 + delta
        x_b, reached = _deepfool_boundary(model, x_cur, y)
        iters += 1
        if reached == y:
            break   # no boundary within the search budget
        w = _class_gradient(model, x_b, reached) - _class_gradient(model, x_b, y)
        xt = torch.as_tensor(x_b, dtype=_model_dtype(model))
        with torch.no_grad():
            logits_b = model.net(xt.unsqueeze(0))[0].numpy().astype(np.float64)
        # cross the hyperplane c + w . (z - x_b) >= 0, cheapest coordinates first
        residual = float(logits_b[reached] - logits_b[y]) + float(np.dot(w, x_cur - x_b))
        for d in np.argsort(-np.abs(w), kind="stable"):
            if residual >= 0.0:
                break
            wd = w[d]
            if wd == 0.0:
                break
            target = hi[d] if wd > 0 else lo[d]   # bounds in delta space
            residual += wd * (target - delta[d])
            delta[d] = target
        pred = _predict(model, x64 + delta)
        if pred != y:
            break
    return AttackResult(clip_id, pred0, pred, success=(pred != y), delta=delta,
                        iterations_used=iters, wall_clock_s=time.perf_counter() - t0,
                        true_label=y)


def one_pixel_1d(model: Classifier, x, y: int, cfg: AttackConfig,
                 clip_id: str = "") -> AttackResult:
    """Single-position attack via differential evolution.

    Candidates are (position, value) pairs with the value bounded by
    epsilon; DE/rand/1 with binomial crossover and greedy selection
    minimizes the true-class softmax confidence. The returned perturbation
    has at most one nonzero entry.
    """
    t0 = time.perf_counter()
    x64 = np.asarray(x, dtype=np.float64)
    n = x64.shape[0]
    pred0 = _predict(model, x64)
    if pred0 != y:
        return _early_exit(clip_id, pred0, y, n, t0)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = _delta_bounds(x64, cfg.epsilon)
    pop_size = cfg.de_population
    pop = np.stack([rng.uniform(0, n, size=pop_size),
                    rng.uniform(-cfg.epsilon, cfg.epsilon, size=pop_size)], axis=1)

    def evaluate(cands: np.ndarray):
        batch = np.repeat(x64[None, :], len(cands), axis=0)
        idx = np.clip(cands[:, 0].astype(np.int64), 0, n - 1)
        for i, (j, v) in enumerate(zip(idx, cands[:, 1])):
            batch[i, j] = x64[j] + np.clip(v, lo[j], hi[j])
        xt = torch.as_tensor(batch, dtype=_model_dtype(model))
        with torch.no_grad():
            logits = model.net(xt)
            probs = torch.softmax(logits, dim=1)
        return probs[:, y].numpy().astype(np.float64), logits.argmax(dim=1).numpy()

    fitness, preds = evaluate(pop)
    iters = 0
    found = bool(np.any(preds != y))
    while iters < cfg.max_iters and not found:
        for i in range(pop_size):
            a, b, c = rng.choice([j for j in range(pop_size) if j != i],
                                 size=3, replace=False)
            mutant = pop[a] + cfg.de_mutation * (pop[b] - pop[c])
            cross = rng.uniform(size=2) < cfg.de_crossover
            cross[rng.integers(2)] = True
            trial = np.where(cross, mutant, pop[i])
            trial[0] = np.clip(trial[0], 0, n - 1e-9)
            trial[1] = np.clip(trial[1], -cfg.epsilon, cfg.epsilon)
            trial_fit, trial_pred = evaluate(trial[None, :])
            if trial_fit[0] <= fitness[i]:
                pop[i], fitness[i], preds[i] = trial, trial_fit[0], trial_pred[0]
        iters += 1
        found = bool(np.any(preds != y))
    best = int(np.argmin(fitness))
    j = int(np.clip(int(pop[best, 0]), 0, n - 1))
    delta = np.zeros(n, dtype=np.float64)
    delta[j] = np.clip(pop[best, 1], lo[j], hi[j])
    pred = _predict(model, x64 + delta)
    return AttackResult(clip_id, pred0, pred, success=(pred != y), delta=delta,
                        iterations_used=iters, wall_clock_s=time.perf_counter() - t0,
                        true_label=y)


ATTACKS = {
    "pgd": sparse_pgd,
    "sparsefool": sparsefool_1d,
    "onepixel": one_pixel_1d,
}


def result_to_dict(result: AttackResult, tol: float = 0.0) -> dict:
    """JSON-serializable view of an AttackResult with a sparse delta encoding."""
    idx = np.flatnonzero(np.abs(result.delta) > tol)
    return {
        "clip_id": result.clip_id,
        "original_pred": int(result.original_pred),
        "adversarial_pred": int(result.adversarial_pred),
        "success": bool(result.success),
        "iterations_used": int(result.iterations_used),
        "wall_clock_s": float(result.wall_clock_s),
        "true_label": int(result.true_label),
        "n": int(result.delta.shape[0]),
        "delta": {"indices": idx.tolist(),
                  "values": [float(result.delta[i]) for i in idx]},
    }


def result_from_dict(d: dict) -> AttackResult:
    delta = np.zeros(d["n"], dtype=np.float64)
    idx = np.asarray(d["delta"]["indices"], dtype=np.int64)
    if idx.size:
        delta[idx] = np.asarray(d["delta"]["values"], dtype=np.float64)
    return AttackResult(d["clip_id"], d["original_pred"], d["adversarial_pred"],
                        d["success"], delta, d["iterations_used"],
                        d["wall_clock_s"], d["true_label"])


def write_results_jsonl(results: list[AttackResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(result_to_dict(r)) + "\n")
    return path


def read_results_jsonl(path) -> list[AttackResult]:
    with open(path, encoding="utf-8") as fh:
        return [result_from_dict(json.loads(line)) for line in fh if line.strip()]
