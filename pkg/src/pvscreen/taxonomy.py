"""The nine surface-defect categories and their stable integer codes."""

from enum import IntEnum


class DefectClass(IntEnum):
    PHYSICAL_DAMAGE = 0
    BIRD_DROPPING = 1
    CLEAN = 2
    ELECTRICAL_FAULT = 3
    SNOW_COVER = 4
    SOILING = 5
    CELL_DAMAGE = 6
    BREAKAGE = 7
    DUST = 8

    @property
    def slug(self) -> str:
        """Directory / CSV name, e.g. ``bird_dropping``."""
        return self.name.lower()

    @property
    def label(self) -> str:
        return self.name.replace("_", " ").title()

    @classmethod
    def from_slug(cls, slug: str) -> "DefectClass":
        return cls[slug.strip().upper().replace("-", "_").replace(" ", "_")]


NUM_CLASSES = len(DefectClass)
CLASS_SLUGS = [c.slug for c in DefectClass]
