"""Dataset profiles: shipped class catalogs plus tuned fusion defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

from .core import ClassCatalog, ValidationError


@dataclass(frozen=True)
class Profile:
    name: str
    alpha: float
    stuff_fraction: Fraction
    catalog_file: str

    def catalog(self) -> ClassCatalog:
        text = resources.files("panfuse").joinpath("catalogs", self.catalog_file).read_text()
        return ClassCatalog.from_dict(json.loads(text))


PROFILES = {
    "cityscapes": Profile("cityscapes", 0.25, Fraction(1, 512), "cityscapes.json"),
    "vistas": Profile("vistas", 0.25, Fraction(1, 256), "vistas.json"),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValidationError(
            f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
