"""Multi-scale ResNet-18 backbone for 32x32 images.

The torchvision ResNet-18 graph is reused with two surgical changes for
small inputs: a 3x3 stride-1 stem convolution and no initial max-pool.
Features are tapped at two depths, stage 2 (128 channels, texture) and
stage 4 (512 channels, semantics), global-average-pooled and
concatenated to 640 dimensions. A projection head (linear + batch norm
+ ReLU) maps that to the 512-dimensional vector the classifier and the
exported feature files use by default; the pre-projection concatenation
can be exported instead, in which case each tap is L2-normalised before
concatenation.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision.models import resnet18

CONCAT_DIM = 128 + 512
PROJECTED_DIM = 512


class MultiScaleResNet(nn.Module):
    """ResNet-18 with two feature taps, a projection head, and a classifier."""

    def __init__(self, num_classes: int = 10, projected_dim: int = PROJECTED_DIM):
        super().__init__()
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        net = resnet18(weights=None)
        net.conv1 = nn.Conv2d(3, 64, kernel_size=3, stride=1, padding=1, bias=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.stage1 = net.layer1
        self.stage2 = net.layer2
        self.stage3 = net.layer3
        self.stage4 = net.layer4
        self.project = nn.Sequential(
            nn.Linear(CONCAT_DIM, projected_dim),
            nn.BatchNorm1d(projected_dim),
            nn.ReLU(inplace=True),
        )
        self.classify = nn.Linear(projected_dim, num_classes)
        self.num_classes = num_classes
        self.projected_dim = projected_dim

    def _taps(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.stage1(self.stem(x))
        texture = self.stage2(h)
        semantic = self.stage4(self.stage3(texture))
        return texture.mean(dim=(2, 3)), semantic.mean(dim=(2, 3))

    def all_outputs(self, x: torch.Tensor
                    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """One pass, every exportable output: (concat640, projected, logits).

        concat640 normalises each tap before concatenating; the projection
        (and therefore the classifier) sees the unnormalised concatenation.
        """
        texture, semantic = self._taps(x)
        concat = torch.cat([
            nn.functional.normalize(texture, dim=1),
            nn.functional.normalize(semantic, dim=1)], dim=1)
        z = self.project(torch.cat([texture, semantic], dim=1))
        return concat, z, self.classify(z)

    def concat_features(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-projection representation: per-tap L2 norm, then concat (640-d)."""
        return self.all_outputs(x)[0]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (projected features, logits)."""
        _, z, logits = self.all_outputs(x)
        return z, logits


def save_checkpoint(model: MultiScaleResNet, path: str, **extra) -> None:
    torch.save({"state_dict": model.state_dict(),
                "num_classes": model.num_classes,
                "projected_dim": model.projected_dim,
                **extra}, path)


def load_checkpoint(path: str) -> tuple[MultiScaleResNet, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata)."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = MultiScaleResNet(num_classes=blob["num_classes"],
                             projected_dim=blob["projected_dim"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    meta = {k: v for k, v in blob.items() if k != "state_dict"}
    return model, meta
