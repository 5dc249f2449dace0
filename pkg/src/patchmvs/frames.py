from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraIntrinsics, Pose


def to_gray(image: np.ndarray) -> np.ndarray:
    """Plain channel average of a linear RGB image (2-D input passes through)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image.mean(axis=2)


def to_color(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return np.repeat(image[..., None], 3, axis=2)
    return image


@dataclass
class CameraFrame:
    """One image with its intrinsics and world-from-camera pose."""

    image: np.ndarray
    cam: CameraIntrinsics
    pose: Pose
    frame_id: int = 0

    def __post_init__(self):
        self.image = to_color(self.image)
        if self.image.shape[:2] != (self.cam.height, self.cam.width):
            raise InvalidInputError(
                f"frame {self.frame_id}: image is {self.image.shape[1]}x{self.image.shape[0]}, "
                f"intrinsics say {self.cam.width}x{self.cam.height}"
            )

    @property
    def gray(self) -> np.ndarray:
        return to_gray(self.image)

    @property
    def shape(self):
        return self.image.shape[:2]
