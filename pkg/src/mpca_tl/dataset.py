from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor_core import Tensor3

PLATE_DIMS = (200.0, 300.0)


@dataclass(frozen=True)
class DomainDataset:
    """Images of one domain with their damage positions.

    ``images`` has shape (n, rows, cols); ``groups`` holds the damage-site id
    of each image so augmented copies of one acquisition can be kept together.
    """

    images: np.ndarray
    labels: np.ndarray  # (n, 2) in mm
    groups: tuple[str, ...]
    material: str = "unknown"
    network: str = "circular"
    stage: str = "raw"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1, 2)
        if images.ndim != 3:
            raise ValueError(f"images must be (n, rows, cols), got {images.shape}")
        if not (len(images) == len(labels) == len(self.groups)):
            raise ValueError("images, labels and groups must have equal length")
        if len(labels) and (
            np.any(labels < 0) or np.any(labels[:, 0] > PLATE_DIMS[0]) or np.any(labels[:, 1] > PLATE_DIMS[1])
        ):
            raise ValueError("labels must lie within the plate")
        if self.network not in ("circular", "rectangular"):
            raise ValueError(f"unknown network tag {self.network!r}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", tuple(str(g) for g in self.groups))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def site_ids(self) -> list[str]:
        return list(dict.fromkeys(self.groups))

    def tensor(self) -> Tensor3:
        return Tensor3(self.images)

    def subset(self, indices) -> "DomainDataset":
        indices = np.asarray(indices, dtype=np.intp)
        return replace(
            self,
            images=self.images[indices],
            labels=self.labels[indices],
            groups=tuple(self.groups[i] for i in indices),
        )

    def with_images(self, images: np.ndarray, stage: str) -> "DomainDataset":
        return replace(self, images=images, stage=stage)
