"""Geometric information exchange between the semantic and detection outputs.

Connected blobs of thing classes in a semantic label grid become extra
region proposals, and detection boxes are grown to cover the blob they
overlap most.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BoundingBox, ClassCatalog, InstanceSet, ValidationError


class Connectivity(enum.IntEnum):
    FOUR = 4
    EIGHT = 8


_STRUCTURES = {
    Connectivity.FOUR: ndimage.generate_binary_structure(2, 1),
    Connectivity.EIGHT: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class ExchangeConfig:
    connectivity: Connectivity = Connectivity.EIGHT
    min_cluster_area: int = 16

    def __post_init__(self):
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))
        if self.min_cluster_area < 1:
            raise ValidationError("min_cluster_area must be >= 1")


@dataclass(frozen=True, eq=False)
class ThingsCluster:
    class_id: int
    pixels: np.ndarray  # (N, 2) rows of (y, x), raster order
    bbox: BoundingBox

    @property
    def area(self) -> int:
        return len(self.pixels)

    def count_inside(self, box: BoundingBox) -> int:
        ys, xs = self.pixels[:, 0], self.pixels[:, 1]
        return int(np.count_nonzero(
            (ys >= box.y0) & (ys <= box.y1) & (xs >= box.x0) & (xs <= box.x1)))


def extract_things_clusters(labels: np.ndarray, catalog: ClassCatalog,
                            config: ExchangeConfig | None = None) -> list[ThingsCluster]:
    """Connected components of each thing class in a class-id grid.

    Sorted by (class_id, y0, x0) with the first raster pixel as a final
    tie-break, so the output order is fully determined by the input.
    """
    config = config or ExchangeConfig()
    labels = np.asarray(labels)
    structure = _STRUCTURES[config.connectivity]
    found = []
    for cid in catalog.thing_ids:
        mask = labels == cid
        if not mask.any():
            continue
        comp, n = ndimage.label(mask, structure=structure)
        flat = comp.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
        w = labels.shape[1]
        for k in range(n):
            idx = order[bounds[k]:bounds[k + 1]]
            if len(idx) < config.min_cluster_area:
                continue
            ys, xs = np.divmod(idx, w)
            box = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
            found.append((cid, box.y0, box.x0, int(idx[0]),
                          ThingsCluster(cid, np.stack([ys, xs], axis=1), box)))
    found.sort(key=lambda t: t[:4])
    return [t[4] for t in found]


def propose_boxes(clusters: list[ThingsCluster]) -> list[tuple[int, BoundingBox]]:
    return [(c.class_id, c.bbox) for c in clusters]


def expand_boxes(instances: InstanceSet, clusters: list[ThingsCluster]) -> list[BoundingBox]:
    """Grow each detection box to include its best-overlapping same-class cluster.

    The match is the cluster with the most pixels inside the box (at least
    one; earlier clusters win ties). Unmatched boxes come back unchanged.
    """
    by_class: dict[int, list[ThingsCluster]] = {}
    for c in clusters:
        by_class.setdefault(c.class_id, []).append(c)
    out = []
    for det in instances.detections:
        best, best_n = None, 0
        for c in by_class.get(det.class_id, ()):
            n = c.count_inside(det.box)
            if n > best_n:
                best, best_n = c, n
        out.append(det.box if best is None else det.box.union(best.bbox))
    return out
