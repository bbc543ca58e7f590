"""Backbone training: smoothed cross-entropy, optional center loss.

The classification objective is cross-entropy with label smoothing 0.1.
An optional center-loss term (weight alpha on half the mean squared
distance to learnable per-class centers over the projected features)
exists for the compactness ablation; the shipped default keeps it off.
Optimisation is Nesterov SGD from lr 0.1 with cosine annealing, early
stopped on validation cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .model import MultiScaleResNet, save_checkpoint


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 40
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    center_loss: bool = False
    center_alpha: float = 0.01
    patience: int = 10
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


class CenterLoss(nn.Module):
    """Half the mean squared distance of features to their class centers."""

    def __init__(self, num_classes: int, dim: int):
        super().__init__()
        self.centers = nn.Parameter(torch.zeros(num_classes, dim))

    def forward(self, features: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        delta = features - self.centers[labels]
        return 0.5 * (delta * delta).sum(dim=1).mean()


def validation_loss(model: MultiScaleResNet, val_loader, device) -> float:
    """Plain (unsmoothed) cross-entropy, the early-stopping monitor."""
    ce = nn.CrossEntropyLoss(reduction="sum")
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for images, labels in val_loader:
            images, labels = images.to(device), labels.to(device)
            _, logits = model(images)
            total += ce(logits, labels).item()
            count += labels.shape[0]
    return total / count


def train_backbone(model: MultiScaleResNet, train_loader, val_loader,
                   settings: TrainSettings, device: str = "cpu",
                   checkpoint_path: str | None = None,
                   log=print) -> list[dict]:
    """Train in place, keeping the checkpoint of the best validation epoch.

    Returns the per-epoch history (train loss, validation loss). When
    checkpoint_path is given, the best state is saved there each time it
    improves, so an interrupted run still leaves a usable file.
    """
    torch.manual_seed(settings.seed)
    model.to(device)

    criterion = nn.CrossEntropyLoss(label_smoothing=settings.label_smoothing)
    params = list(model.parameters())
    center = None
    if settings.center_loss:
        center = CenterLoss(model.num_classes, model.projected_dim).to(device)
        params += list(center.parameters())
    opt = torch.optim.SGD(params, lr=settings.learning_rate,
                          momentum=settings.momentum, nesterov=True,
                          weight_decay=settings.weight_decay)
    schedule = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=settings.epochs)

    history: list[dict] = []
    best_val, best_epoch = float("inf"), -1
    for epoch in range(settings.epochs):
        model.train()
        running, seen = 0.0, 0
        for images, labels in train_loader:
            images, labels = images.to(device), labels.to(device)
            opt.zero_grad()
            z, logits = model(images)
            loss = criterion(logits, labels)
            if center is not None:
                loss = loss + settings.center_alpha * center(z, labels)
            loss.backward()
            opt.step()
            running += loss.item() * labels.shape[0]
            seen += labels.shape[0]
        schedule.step()

        val = validation_loss(model, val_loader, device)
        history.append({"epoch": epoch, "train_loss": running / seen,
                        "val_loss": val})
        log(f"epoch {epoch}: train {running / seen:.4f}  val {val:.4f}")

        if val < best_val:
            best_val, best_epoch = val, epoch
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path, epoch=epoch,
                                val_loss=val,
                                center_loss=settings.center_loss)
        elif epoch - best_epoch >= settings.patience:
            log(f"early stop at epoch {epoch} (best {best_epoch})")
            break
    return history
