"""Scene geometry: speaker direction, speaker head orientation, and the
ear-specific angular offsets that arise at conversational distances.

Angle convention: angles are degrees in [-180, 180).  theta_dir > 0 puts the
source toward the listener's right; theta_ori = 0 means the speaker faces the
listener.  The contralateral-ear offset ``alpha`` is the grazing-ray angle
asin((h/2)/r) (independent of theta_dir); the ipsilateral-ear offset ``beta``
is the exact parallax angle atan(((h/2) cos t) / (r - (h/2) sin t)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import InvalidGeometryError


def wrap_deg(angle: float) -> float:
    """Wrap an angle in degrees into [-180, 180)."""
    a = math.fmod(float(angle) + 180.0, 360.0)
    if a < 0.0:
        a += 360.0
    return a - 180.0


def angle_diff_deg(a: float, b: float) -> float:
    """Circular absolute difference |a - b| in degrees, in [0, 180]."""
    d = abs(wrap_deg(a - b))
    return d


@dataclass(frozen=True)
class SceneGeometry:
    """Speaker-listener arrangement on the horizontal plane.

    theta_dir_deg: direction of the speaker seen from the listener.
    theta_ori_deg: speaker head orientation relative to the joining line.
    r_m: mouth-to-head-center distance in meters.
    h_m: listener head width (ear-to-ear) in meters.
    """

    theta_dir_deg: float
    theta_ori_deg: float
    r_m: float
    h_m: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta_dir_deg", wrap_deg(self.theta_dir_deg))
        object.__setattr__(self, "theta_ori_deg", wrap_deg(self.theta_ori_deg))
        if not (0.2 <= self.r_m <= 1e7):
            raise InvalidGeometryError(f"r_m {self.r_m} outside [0.2, 1e7]")
        if not (0.1 < self.h_m < 0.3):
            raise InvalidGeometryError(f"h_m {self.h_m} outside (0.1, 0.3)")
        if not (self.r_m > self.h_m):
            raise InvalidGeometryError("source distance must exceed head width")

    @property
    def alpha_deg(self) -> float:
        """Contralateral-ear angular offset, asin((h/2)/r)."""
        return math.degrees(math.asin((self.h_m / 2.0) / self.r_m))

    def beta_deg(self, theta_dir_deg: float | None = None) -> float:
        """Ipsilateral-ear parallax offset for a given (default: own) direction."""
        t = math.radians(self.theta_dir_deg if theta_dir_deg is None else theta_dir_deg)
        half = self.h_m / 2.0
        return math.degrees(math.atan2(half * math.cos(t), self.r_m - half * math.sin(t)))

    def labels(self) -> tuple[float, float]:
        return (self.theta_dir_deg, self.theta_ori_deg)
