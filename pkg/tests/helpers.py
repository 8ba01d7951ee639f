"""Shared oracles: finite-difference gradients and the miniature model setup."""

import numpy as np
import torch

from audiocap import losses
from audiocap.config import ModelConfig
from audiocap.model import CaptionNet


def miniature_setup(seed: int = 0):
    """Tiny float64 model + fixed targets for gradient verification."""
    cfg = ModelConfig(hidden_dim=8, length_embed_dim=4, top_keywords=2,
                      mhsa_heads=2, crop_frames=16, caption_steps=6, max_length=5)
    c_cap, c_key = 12, 6
    torch.manual_seed(seed)
    model = CaptionNet(cfg, c_cap, c_key).double()
    model.eval()  # batch-norm running stats make the loss a pure function
    gen = torch.Generator().manual_seed(seed + 1)
    x = torch.randn(2, 3, 64, 16, generator=gen, dtype=torch.float64)
    ids = torch.randint(0, c_cap, (2, cfg.caption_steps), generator=gen)
    targets = torch.cat([ids[:, 1:], torch.zeros(2, 1, dtype=torch.long)], dim=1)
    z_cap = (torch.rand(2, c_key, generator=gen) < 0.5).double()
    z_meta = (torch.rand(2, c_key, generator=gen) < 0.5).double()
    mask = (torch.rand(2, c_cap, generator=gen) < 0.5).double()
    labels = losses.ItemLabels(targets, z_cap, z_meta,
                               torch.tensor([3, 5]), mask)
    priors = losses.KeywordPriors.from_counts(np.array([1, 2, 3, 1, 2, 3]), 4)
    return model, cfg, x, ids, labels, priors


def miniature_total_loss(model, x, ids, labels, priors, step: int = 10) -> torch.Tensor:
    enc, post = model.forward_teacher_forced(x, ids)
    total, _ = losses.total_loss(enc, post, labels, None, 1.0, step,
                                 priors, priors, pad_id=0, smoothing=0.1)
    return total


def finite_difference_check(n_coords: int = 120, eps: float = 1e-6,
                            seed: int = 0) -> float:
    """Max relative error between autograd and central differences over a
    random sample of parameter coordinates (float64).

    The denominator is floored at 1e-5: below that, central differences
    carry ~|loss| * 2^-52 / eps of rounding noise, so gradients that small
    are effectively compared absolutely (to ~1e-9).
    """
    model, cfg, x, ids, labels, priors = miniature_setup(seed)
    loss = miniature_total_loss(model, x, ids, labels, priors)
    loss.backward()
    params = [p for p in model.parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_coords):
            p = params[rng.integers(len(params))]
            flat = p.view(-1)
            j = int(rng.integers(flat.numel()))
            orig = flat[j].item()
            flat[j] = orig + eps
            up = miniature_total_loss(model, x, ids, labels, priors).item()
            flat[j] = orig - eps
            down = miniature_total_loss(model, x, ids, labels, priors).item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            analytic = p.grad.view(-1)[j].item()
            scale = max(abs(analytic), abs(numeric), 1e-5)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
