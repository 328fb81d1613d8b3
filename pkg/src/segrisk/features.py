"""Slide-level features derived from a decoded segmentation map."""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .exceptions import EmptyInputError, InvalidInputError
from .tensor_core import IGNORE, N_TISSUE_CLASSES, TissueClass, check_labels

TUMOR = int(TissueClass.HIGH_GRADE_DYSPLASIA_TUMOR)
BACKGROUND = int(TissueClass.BACKGROUND)
RELABEL_TIE_CLASS = int(TissueClass.STROMA_LAMINA_PROPRIA)
MIN_CLUSTER_AREA = 30.0
MIN_FRAGMENT_PIXELS = 1000
LUMEN_THRESHOLD = 240.0

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class RiskCategory(IntEnum):
    OTHER = 0
    HYPERPLASTIC = 1
    LOW_GRADE_DYSPLASIA = 2
    HIGH_GRADE_DYSPLASIA_TUMOR = 3


RISK_NAMES = ("other", "hyperplastic", "lgd", "hgd_tumor")
RISK_DISPLAY = ("other", "hyperplasia", "low-grade dysplasia", "HGD/tumor")


def parse_risk(value):
    """Accept an ordinal (``"2"``, 2) or a name (``"lgd"``)."""
    if isinstance(value, (int, np.integer)):
        return RiskCategory(int(value))
    text = str(value).strip()
    if text.isdigit():
        return RiskCategory(int(text))
    key = text.lower().replace("-", "_").replace("/", "_").replace(" ", "_")
    aliases = {
        "other": 0, "hyperplastic": 1, "hyperplasia": 1,
        "lgd": 2, "low_grade_dysplasia": 2,
        "hgd_tumor": 3, "hgd": 3, "tumor": 3, "high_grade_dysplasia_tumor": 3,
    }
    if key not in aliases:
        raise InvalidInputError(f"unknown risk category {value!r}")
    return RiskCategory(aliases[key])


@dataclass(frozen=True)
class Cluster:
    tissue_class: int
    pixel_count: int
    area: float
    bbox: tuple  # (row_min, col_min, row_max, col_max), inclusive
    rows: np.ndarray
    cols: np.ndarray


@dataclass(frozen=True)
class SlideFeatureVector:
    histogram: np.ndarray
    tumor_cluster_count: int
    tumor_cluster_mean_area: float
    tumor_cluster_min_area: float
    tumor_cluster_max_area: float

    def to_array(self):
        return np.concatenate([
            self.histogram,
            [self.tumor_cluster_count, self.tumor_cluster_mean_area,
             self.tumor_cluster_min_area, self.tumor_cluster_max_area],
        ])


FEATURE_NAMES = tuple(f"h{i}" for i in range(N_TISSUE_CLASSES)) + (
    "n_clusters", "mean_area", "min_area", "max_area",
)


def _check_connectivity(connectivity):
    if connectivity not in _STRUCTURES:
        raise InvalidInputError(f"connectivity must be 4 or 8, got {connectivity}")
    return _STRUCTURES[connectivity]


def _check_map(seg):
    seg = check_labels(seg, N_TISSUE_CLASSES)
    if seg.ndim != 2:
        raise InvalidInputError(f"segmentation map must be 2-D, got shape {seg.shape}")
    return seg


def connected_components(seg, target=TUMOR, connectivity=4, pixel_area=1.0):
    """Maximal connected sets of ``target`` pixels, ordered by (min row, min col)."""
    seg = _check_map(seg)
    structure = _check_connectivity(connectivity)
    lab, n = ndimage.label(seg == target, structure=structure)
    clusters = []
    for i, sl in enumerate(ndimage.find_objects(lab), start=1):
        rr, cc = np.nonzero(lab[sl] == i)
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        bbox = (int(rr.min()), int(cc.min()), int(rr.max()), int(cc.max()))
        clusters.append(Cluster(int(target), rr.size, rr.size * float(pixel_area), bbox, rr, cc))
    # label order is raster order of the first pixel, which already starts
    # with the min row; resort so min col is taken over the whole cluster
    clusters.sort(key=lambda c: (c.bbox[0], c.bbox[1], int(c.rows[0]), int(c.cols[0])))
    return clusters


def filter_small_clusters(clusters, min_area=MIN_CLUSTER_AREA, pixel_area=1.0):
    """Keep clusters with area >= ``min_area`` µm² (strictly smaller ones go)."""
    if not pixel_area > 0:
        raise InvalidInputError(f"pixel_area must be > 0, got {pixel_area}")
    return [c for c in clusters if c.pixel_count * pixel_area >= min_area]


def _boundary_majority(seg, cluster):
    mask = np.zeros(seg.shape, dtype=bool)
    mask[cluster.rows, cluster.cols] = True
    ring = ndimage.binary_dilation(mask, structure=_STRUCTURES[8]) & ~mask
    vals = seg[ring]
    vals = vals[(vals != IGNORE) & (vals != cluster.tissue_class)]
    if vals.size == 0:
        return RELABEL_TIE_CLASS
    counts = np.bincount(vals.astype(np.intp), minlength=N_TISSUE_CLASSES)
    winners = np.flatnonzero(counts == counts.max())
    return int(winners[0]) if winners.size == 1 else RELABEL_TIE_CLASS


def remove_small_clusters(seg, target=TUMOR, min_area=MIN_CLUSTER_AREA, pixel_area=1.0, connectivity=4):
    """Relabel ``target`` clusters smaller than ``min_area``; returns (new map, kept clusters).

    A removed cluster takes the majority class among its 8-neighbour ring
    (ignored pixels and the target class do not vote); ties, or a ring with
    no voters, fall back to stroma lamina propria.
    """
    seg = _check_map(seg)
    clusters = connected_components(seg, target, connectivity, pixel_area)
    kept = filter_small_clusters(clusters, min_area, pixel_area)
    if len(kept) == len(clusters):
        return seg.copy(), kept
    kept_ids = {id(c) for c in kept}
    out = seg.copy()
    for c in clusters:
        if id(c) not in kept_ids:
            # votes are read from the original map so results do not depend on
            # the order in which small clusters are processed
            out[c.rows, c.cols] = _boundary_majority(seg, c)
    return out, kept


def slide_histogram(seg):
    """Fraction of non-ignored pixels in each of the 14 tissue classes."""
    seg = _check_map(seg)
    vals = seg[seg != IGNORE]
    if vals.size == 0:
        raise EmptyInputError("segmentation map has no non-ignored pixels")
    return np.bincount(vals.astype(np.intp), minlength=N_TISSUE_CLASSES) / vals.size


def extract_feature_vector(seg, pixel_area=1.0, connectivity=4, min_area=MIN_CLUSTER_AREA):
    cleaned, kept = remove_small_clusters(seg, TUMOR, min_area, pixel_area, connectivity)
    hist = slide_histogram(cleaned)
    if kept:
        areas = np.array([c.area for c in kept])
        stats = (len(kept), float(areas.mean()), float(areas.min()), float(areas.max()))
    else:
        stats = (0, 0.0, 0.0, 0.0)
    return SlideFeatureVector(hist, *stats)


def split_fragments(seg, min_pixels=MIN_FRAGMENT_PIXELS, connectivity=8):
    """Boolean masks of tissue fragments (non-background, non-ignored).

    Components below ``min_pixels`` are discarded as debris. Fragments come
    in (min row, min col) order.
    """
    seg = _check_map(seg)
    tissue = (seg != BACKGROUND) & (seg != IGNORE)
    comps = []
    lab, _ = ndimage.label(tissue, structure=_check_connectivity(connectivity))
    for i, sl in enumerate(ndimage.find_objects(lab), start=1):
        mask = lab == i
        n = int(mask.sum())
        if n < min_pixels:
            continue
        rr, cc = np.nonzero(mask)
        comps.append(((int(rr.min()), int(cc.min()), int(rr[0]), int(cc[0])), mask))
    comps.sort(key=lambda t: t[0])
    return [m for _, m in comps]


def fragment_map(seg, mask):
    """Copy of ``seg`` with everything outside ``mask`` set to IGNORE."""
    out = np.full_like(np.asarray(seg), IGNORE)
    out[mask] = np.asarray(seg)[mask]
    return out


def relabel_lumen(rgb, ref, threshold=LUMEN_THRESHOLD):
    """Set reference pixels whose mean RGB value exceeds ``threshold`` to background.

    ``rgb`` is on the 0-255 scale; a float image with max <= 1 is rescaled.
    """
    rgb = np.asarray(rgb)
    unit_range = rgb.dtype.kind == "f" and rgb.size > 0 and rgb.max() <= 1.0
    rgb = rgb.astype(np.float64) * (255.0 if unit_range else 1.0)
    ref = np.asarray(ref)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[:2] != ref.shape:
        raise InvalidInputError(f"rgb shape {rgb.shape} does not match reference shape {ref.shape}")
    out = ref.copy()
    out[rgb.mean(axis=2) > threshold] = BACKGROUND
    return out


def worst_grade(labels):
    labels = [parse_risk(v) for v in labels]
    if not labels:
        raise EmptyInputError("worst_grade of an empty list")
    return max(labels)
