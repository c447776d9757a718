"""Attack training losses and their weighted combination.

All losses are differentiable torch expressions. They accept 1-D inputs
(single example) or 2-D inputs (a batch, reduced by the mean), and return
0-dim tensors so they compose into the overall training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class AttackConfig:
    """Shared attack hyperparameters.

    epsilon bounds every perturbation coordinate; gamma is the mask
    quantization threshold; confidence floors the misclassification margin.
    alpha/k/max_iters drive the iterative baselines; the de_* fields are the
    differential-evolution settings of the one-sample attack.
    """

    epsilon: float = 0.05
    gamma: float = 0.5
    confidence: float = 0.0
    lambda_m: float = 1e-3
    lambda_s: float = 1e-4
    lambda_q: float = 1e-4
    alpha: float | None = None      # PGD step size; defaults to epsilon / 4
    k: int = 16                     # new positions per PGD iteration
    max_iters: int = 20
    seed: int = 0
    early_stop: bool = True
    pgd_position_rule: str = "gradient"   # or "random"
    de_population: int = 20
    de_mutation: float = 0.5
    de_crossover: float = 0.9

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.confidence < 0:
            raise ValueError("confidence must be nonnegative")
        for name in ("lambda_m", "lambda_s", "lambda_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.pgd_position_rule not in ("gradient", "random"):
            raise ValueError(f"unknown pgd_position_rule {self.pgd_position_rule!r}")
        if self.alpha is None:
            self.alpha = self.epsilon / 4.0

    def scaled(self, factor: float) -> "AttackConfig":
        """Copy with all three loss weights scaled by `factor`."""
        from dataclasses import replace
        return replace(self, lambda_m=self.lambda_m * factor,
                       lambda_s=self.lambda_s * factor,
                       lambda_q=self.lambda_q * factor)


def _as_tensor(x):
    # plain arrays/floats are promoted to float64 so oracle values reproduce
    # exactly; tensors keep their dtype to preserve the training graph
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def adversarial_loss(logits, y, phi: float = 0.0):
    """Margin loss max{f_y - max_{i != y} f_i, -phi} on raw logits.

    Minimizing drives the true-class logit below the runner-up by at least
    phi. 2-D logits are treated as a batch (y per row), reduced by the mean.
    """
    logits = _as_tensor(logits)
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
        y = torch.as_tensor([int(y)])
    else:
        y = torch.as_tensor(y).reshape(-1).long()
    if logits.shape[-1] < 2:
        raise ValueError("adversarial_loss needs at least 2 classes")
    true = logits.gather(1, y.view(-1, 1)).squeeze(1)
    masked = logits.masked_fill(
        torch.nn.functional.one_hot(y, logits.shape[-1]).bool(), float("-inf"))
    runner_up = masked.max(dim=1).values
    margin = true - runner_up
    floor = torch.as_tensor(-float(phi), dtype=margin.dtype)
    return torch.maximum(margin, floor).mean()


def magnitude_loss(v):
    """Euclidean norm of the clipped perturbation magnitudes (batch mean)."""
    v = _as_tensor(v)
    if v.ndim == 1:
        return torch.linalg.vector_norm(v)
    return torch.linalg.vector_norm(v, dim=-1).mean()


def sparsity_loss(m):
    """l1 norm of the mask: the perturbed-position count when m is binary."""
    m = _as_tensor(m)
    if m.ndim == 1:
        return m.abs().sum()
    return m.abs().sum(dim=-1).mean()


def quantization_loss(pre_mask, mask):
    """Euclidean distance between the continuous mask scores and the mask used."""
    pre_mask = _as_tensor(pre_mask)
    mask = _as_tensor(mask)
    if pre_mask.shape != mask.shape:
        raise ValueError(f"shape mismatch: {tuple(pre_mask.shape)} vs {tuple(mask.shape)}")
    diff = pre_mask - mask
    if diff.ndim <= 1:
        return torch.linalg.vector_norm(diff)
    return torch.linalg.vector_norm(diff, dim=-1).mean()


def overall_loss(adv, mag, spa, qua, cfg: AttackConfig):
    """Weighted sum adv + lambda_m*mag + lambda_s*spa + lambda_q*qua."""
    parts = {"adversarial": adv, "magnitude": mag, "sparsity": spa, "quantization": qua}
    for name, part in parts.items():
        val = part.detach() if isinstance(part, torch.Tensor) else torch.as_tensor(float(part))
        if not torch.isfinite(val).all():
            raise ValueError(f"non-finite {name} loss term: {val}")
    adv, mag, spa, qua = (_as_tensor(p) for p in (adv, mag, spa, qua))
    return adv + cfg.lambda_m * mag + cfg.lambda_s * spa + cfg.lambda_q * qua
