"""Training losses: perceptual distance, patch adversary, code prediction."""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .models import CodePredictor
from .vqvae import Codebook, nearest_indices, squared_l2


class PerceptualNet(nn.Module):
    """Feature-matching distance on a fixed randomly-initialized conv net.

    Deterministic stand-in for pretrained perceptual features: weights are
    seeded and frozen, so the loss is reproducible without downloading
    anything. A pretrained backend can be plugged in through
    ``metrics.register_perceptual`` for evaluation.
    """

    def __init__(self, seed: int = 7):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            widths = [3, 16, 32, 64, 64]
            self.convs = nn.ModuleList(
                nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
                for i in range(len(widths) - 1)
            )
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = F.silu(conv(x))
            feats.append(x)
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        total = a.new_zeros(())
        for fa, fb in zip(self.features(a), self.features(b)):
            na = fa / (fa.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-8)
            nb = fb / (fb.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-8)
            total = total + (na - nb).pow(2).mean()
        return total


class PatchDiscriminator(nn.Module):
    """Hinge-loss patch discriminator; video mode sees frame pairs."""

    def __init__(self, in_channels: int = 3, width: int = 32):
        super().__init__()
        w = width
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * w, 1, 4, padding=1),
        )

    def forward(self, x):
        return self.net(x)


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return 0.5 * (
        F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()
    )


def hinge_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return -fake_logits.mean()


def adaptive_adv_weight(
    rec_loss: torch.Tensor, g_loss: torch.Tensor, last_layer: torch.Tensor,
    max_weight: float = 1.0,
) -> torch.Tensor:
    """Balance the adversarial gradient against the reconstruction gradient.

    The cap keeps a vanishing generator gradient from exploding the weight;
    small decoders are prone to that.
    """
    rec_grad = torch.autograd.grad(rec_loss, last_layer, retain_graph=True)[0]
    g_grad = torch.autograd.grad(g_loss, last_layer, retain_graph=True)[0]
    weight = rec_grad.norm() / (g_grad.norm() + 1e-4)
    return weight.clamp(0.0, max_weight).detach()


def code_pred_loss(
    latent: torch.Tensor,
    latent_hat: torch.Tensor,
    codebook: Codebook,
    predictor: CodePredictor,
    alpha: float = 0.5,
    use_ce: bool = True,
) -> tuple[torch.Tensor, dict]:
    """Code-prediction distortion: ``alpha * CE(V_l, CP(l_hat)) + ||l - l_hat||^2``.

    The codebook only provides the target indices; no gradient reaches it.
    """
    l2 = squared_l2(latent, latent_hat)
    if not use_ce:
        return l2, {"ce": 0.0, "l2": float(l2.detach()), "acc": 0.0}
    b, m, h, w = latent.shape
    with torch.no_grad():
        flat = latent.permute(0, 2, 3, 1).reshape(-1, m)
        target = nearest_indices(flat, codebook.entries)
    logits = predictor(latent_hat).reshape(-1, codebook.size)
    ce = F.cross_entropy(logits, target)
    acc = float((logits.argmax(dim=-1) == target).float().mean())
    loss = alpha * ce + l2
    return loss, {"ce": float(ce.detach()), "l2": float(l2.detach()), "acc": acc}


def code_pred_accuracy(
    latent: torch.Tensor, latent_hat: torch.Tensor,
    codebook: Codebook, predictor: CodePredictor,
) -> float:
    """Fraction of positions whose codebook index survives reconstruction."""
    with torch.no_grad():
        m = latent.shape[1]
        flat = latent.permute(0, 2, 3, 1).reshape(-1, m)
        target = nearest_indices(flat, codebook.entries)
        logits = predictor(latent_hat).reshape(-1, codebook.size)
        return float((logits.argmax(dim=-1) == target).float().mean())
