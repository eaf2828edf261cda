"""Multi-contrast image stack shared by the feature, phantom and map modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CHANNELS = ("T1+C", "T2", "MD", "FA", "rCBV")
MASK_NAMES = ("CE", "NE", "necrosis", "contralateral")

WINDOW = 8
# window rows/cols span center-4 .. center+3
HALF_LO = WINDOW // 2
HALF_HI = WINDOW - HALF_LO - 1


class BoundsError(ValueError):
    """An 8x8 window around a center does not fit inside the image."""

    def __init__(self, center, shape):
        r, c = center
        super().__init__(
            f"window at center ({r}, {c}) spans rows {r - HALF_LO}..{r + HALF_HI}, "
            f"cols {c - HALF_LO}..{c + HALF_HI}, outside image of shape {tuple(shape)}"
        )
        self.center = (r, c)


@dataclass
class ContrastStack:
    channels: dict[str, np.ndarray]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    truth: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = {np.shape(p) for p in self.channels.values()}
        shapes |= {np.shape(p) for p in self.masks.values()}
        shapes |= {np.shape(p) for p in self.truth.values()}
        if len(shapes) != 1:
            raise ValueError(f"planes disagree in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 2:
            raise ValueError(f"planes must be 2-D, got shape {shape}")
        self.channels = {k: np.asarray(v, dtype=np.float64) for k, v in self.channels.items()}
        self.masks = {k: np.asarray(v, dtype=bool) for k, v in self.masks.items()}
        self.truth = {k: np.asarray(v, dtype=np.int8) for k, v in self.truth.items()}

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.channels.values())).shape

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)

    def mask(self, name: str) -> np.ndarray:
        if name == "AOI":
            return self.aoi
        return self.masks[name]

    @property
    def aoi(self) -> np.ndarray:
        """Tumoral area of interest, CE union NE."""
        return self.masks["CE"] | self.masks["NE"]

    def window_fits(self, r: int, c: int) -> bool:
        h, w = self.shape
        return HALF_LO <= r < h - HALF_HI and HALF_LO <= c < w - HALF_HI

    def window_fit_mask(self) -> np.ndarray:
        h, w = self.shape
        out = np.zeros((h, w), dtype=bool)
        out[HALF_LO:h - HALF_HI, HALF_LO:w - HALF_HI] = True
        return out
