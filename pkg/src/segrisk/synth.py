"""Deterministic synthetic tiles, label noise and planted slide cohorts.

Tiles are Voronoi mosaics: each cell gets a tissue class and is painted in
that class's colour, with a darker rim on epithelial cells so the task is
learnable from local colour and texture. Slides are multi-fragment label
maps whose composition encodes a risk grade.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import InvalidParameterError
from .features import (
    RiskCategory,
    extract_feature_vector,
    split_fragments,
    worst_grade,
)
from .tensor_core import IGNORE, N_TISSUE_CLASSES, TissueClass

T = TissueClass

PALETTE = np.array([
    [0.80, 0.35, 0.55],  # normal glands
    [0.55, 0.25, 0.70],  # low-grade dysplasia
    [0.30, 0.12, 0.40],  # high-grade dysplasia / tumor
    [0.95, 0.72, 0.82],  # submucosal stroma
    [0.88, 0.55, 0.40],  # desmoplastic stroma
    [0.68, 0.55, 0.85],  # stroma lamina propria
    [0.72, 0.82, 0.95],  # mucus
    [0.55, 0.42, 0.30],  # necrosis and debris
    [0.18, 0.22, 0.62],  # lymphocytes
    [0.92, 0.18, 0.20],  # erythrocytes
    [0.98, 0.98, 0.98],  # adipose tissue
    [0.95, 0.42, 0.62],  # muscle
    [0.82, 0.76, 0.52],  # nerve
    [0.93, 0.93, 0.89],  # background
])
EPITHELIUM = (T.NORMAL_GLANDS, T.LOW_GRADE_DYSPLASIA, T.HIGH_GRADE_DYSPLASIA_TUMOR)
RIM_WIDTH = 2.0
RIM_SHADE = 0.7


def _uniform_mix(n_classes=N_TISSUE_CLASSES):
    mix = np.zeros(N_TISSUE_CLASSES)
    mix[:n_classes] = 1.0 / n_classes
    return mix


@dataclass(frozen=True)
class TileSpec:
    size: int = 128
    class_mix: tuple = field(default_factory=lambda: tuple(_uniform_mix()))
    blob_scale: float = 12.0
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        mix = np.asarray(self.class_mix, dtype=np.float64)
        if mix.shape != (N_TISSUE_CLASSES,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise InvalidParameterError("class_mix must be 14 non-negative fractions summing to 1")
        if self.size < 32:
            raise InvalidParameterError(f"tile size must be >= 32, got {self.size}")
        if not self.blob_scale > 0 or self.noise < 0:
            raise InvalidParameterError("blob_scale must be > 0 and noise >= 0")


def _voronoi(shape, n_cells, rng):
    h, w = shape
    seeds = rng.uniform(0, 1, size=(n_cells, 2)) * [h, w]
    rr, cc = np.mgrid[0:h, 0:w]
    pts = np.column_stack([rr.ravel() + 0.5, cc.ravel() + 0.5])
    k = 2 if n_cells > 1 else 1
    dist, idx = cKDTree(seeds).query(pts, k=k)
    if k == 1:
        return idx.reshape(shape), np.full(shape, np.inf)
    # half the gap between the two nearest seeds approximates the distance to the cell border
    return idx[:, 0].reshape(shape), ((dist[:, 1] - dist[:, 0]) / 2).reshape(shape)


def _assign_classes(cell_areas, mix, rng):
    """Give cells classes so realised pixel counts track ``mix``.

    Largest cells first, each to the class with the largest remaining pixel
    deficit; equal cells are visited in random order.
    """
    deficit = mix * cell_areas.sum()
    allowed = np.flatnonzero(mix > 0)
    jitter = rng.permutation(cell_areas.size)
    order = np.lexsort((jitter, -cell_areas))
    out = np.empty(cell_areas.size, dtype=np.int64)
    for cell in order:
        c = allowed[np.argmax(deficit[allowed])]
        out[cell] = c
        deficit[c] -= cell_areas[cell]
    return out


def paint(labels, rim, noise, rng):
    """RGB rendering of a label map in [0, 1]."""
    rgb = PALETTE[np.minimum(labels, N_TISSUE_CLASSES - 1)].copy()
    epi = np.isin(labels, EPITHELIUM) & (rim < RIM_WIDTH)
    rgb[epi] *= RIM_SHADE
    if noise > 0:
        rgb += rng.normal(0.0, noise, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


def gen_tile(spec):
    """Return ``(rgb, labels)``: float64 ``(S, S, 3)`` in [0, 1] and a uint8 ``(S, S)`` map."""
    rng = np.random.default_rng(spec.seed)
    s = spec.size
    n_cells = max(1, int(round(s * s / spec.blob_scale**2)))
    cell, rim = _voronoi((s, s), n_cells, rng)
    areas = np.bincount(cell.ravel(), minlength=n_cells).astype(np.float64)
    classes = _assign_classes(areas, np.asarray(spec.class_mix, dtype=np.float64), rng)
    labels = classes[cell].astype(np.uint8)
    return paint(labels, rim, spec.noise, rng), labels


def gen_tiles(n, seed, **spec_kwargs):
    """``n`` tiles with per-tile seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n) if n else []
    return [gen_tile(TileSpec(seed=int(s), **spec_kwargs)) for s in seeds]


def inject_label_noise(labels, rate, seed, n_classes=N_TISSUE_CLASSES):
    """Flip exactly ``round(rate * n_valid)`` non-ignored pixels to another class."""
    if not 0.0 <= rate <= 0.5:
        raise InvalidParameterError(f"noise rate must lie in [0, 0.5], got {rate}")
    labels = np.asarray(labels)
    out = labels.copy()
    valid = np.flatnonzero(labels.ravel() != IGNORE)
    count = int(round(rate * valid.size))
    if count == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(valid, size=count, replace=False)
    flat = out.reshape(-1)
    shift = rng.integers(1, n_classes, size=count)
    flat[chosen] = (flat[chosen].astype(np.int64) + shift) % n_classes
    return out


# --------------------------------------------------------------------------
# slides
# --------------------------------------------------------------------------

R = RiskCategory

# tissue composition of a fragment by grade; tumor is planted separately
FRAGMENT_MIX = {
    R.OTHER: {T.NORMAL_GLANDS: 0.30, T.STROMA_LAMINA_PROPRIA: 0.35, T.SUBMUCOSAL_STROMA: 0.12,
              T.LYMPHOCYTES: 0.08, T.MUSCLE: 0.07, T.MUCUS: 0.02, T.ERYTHROCYTES: 0.03,
              T.ADIPOSE: 0.03},
    R.HYPERPLASTIC: {T.NORMAL_GLANDS: 0.40, T.MUCUS: 0.30, T.STROMA_LAMINA_PROPRIA: 0.22,
                     T.LYMPHOCYTES: 0.04, T.MUSCLE: 0.04},
    R.LOW_GRADE_DYSPLASIA: {T.LOW_GRADE_DYSPLASIA: 0.45, T.NORMAL_GLANDS: 0.12,
                            T.STROMA_LAMINA_PROPRIA: 0.28, T.MUCUS: 0.04, T.LYMPHOCYTES: 0.06,
                            T.SUBMUCOSAL_STROMA: 0.05},
    R.HIGH_GRADE_DYSPLASIA_TUMOR: {T.LOW_GRADE_DYSPLASIA: 0.25, T.DESMOPLASTIC_STROMA: 0.22,
                                   T.STROMA_LAMINA_PROPRIA: 0.25, T.NECROSIS_DEBRIS: 0.10,
                                   T.NORMAL_GLANDS: 0.12, T.NERVE: 0.06},
}
SLIDE_CELL = 100
MIN_TUMOR_PIXELS = 500
HYPERPLASTIC_MUCUS = 0.08


@dataclass(frozen=True)
class SlideSpec:
    grade: int
    fragments: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.fragments < 1:
            raise InvalidParameterError("a slide needs at least one fragment")
        RiskCategory(int(self.grade))


def _mix_vector(grade, rng):
    base = np.zeros(N_TISSUE_CLASSES)
    for c, v in FRAGMENT_MIX[grade].items():
        base[int(c)] = v
    support = base > 0
    jitter = np.zeros(N_TISSUE_CLASSES)
    jitter[support] = rng.dirichlet(np.full(support.sum(), 4.0))
    mix = 0.85 * base + 0.15 * jitter
    return mix / mix.sum()


def _draw_fragment(seg, top, left, radii, grade, rng):
    """Paint one elliptical fragment into ``seg`` inside a SLIDE_CELL square."""
    cy = top + SLIDE_CELL / 2 + rng.uniform(-2, 2)
    cx = left + SLIDE_CELL / 2 + rng.uniform(-2, 2)
    ry, rx = radii
    rr, cc = np.mgrid[top:top + SLIDE_CELL, left:left + SLIDE_CELL]
    inside = ((rr + 0.5 - cy) / ry) ** 2 + ((cc + 0.5 - cx) / rx) ** 2 <= 1.0
    n_cells = max(4, int(inside.sum() / 100))
    cell, _ = _voronoi((SLIDE_CELL, SLIDE_CELL), n_cells, rng)
    cell = np.where(inside, cell, -1)
    areas = np.bincount(cell[inside], minlength=n_cells).astype(np.float64)
    classes = _assign_classes(areas, _mix_vector(grade, rng), rng)
    block = seg[top:top + SLIDE_CELL, left:left + SLIDE_CELL]
    block[inside] = classes[cell[inside]]

    if grade == R.HIGH_GRADE_DYSPLASIA_TUMOR:
        radius = rng.uniform(14.0, 19.0)
        ty = cy + rng.uniform(-0.3, 0.3) * (ry - radius)
        tx = cx + rng.uniform(-0.3, 0.3) * (rx - radius)
        disk = (rr + 0.5 - ty) ** 2 + (cc + 0.5 - tx) ** 2 <= radius**2
        block[disk & inside] = T.HIGH_GRADE_DYSPLASIA_TUMOR
    else:
        # a few isolated tumour specks well below the cluster-size cut-off
        ys, xs = np.nonzero(inside)
        for _ in range(rng.integers(0, 3)):
            i = rng.integers(ys.size)
            h, w = rng.integers(1, 4, size=2)
            y0, x0 = ys[i], xs[i]
            patch = block[y0:y0 + h, x0:x0 + w]
            patch[inside[y0:y0 + h, x0:x0 + w]] = T.HIGH_GRADE_DYSPLASIA_TUMOR


def _audit(seg, grade, pixel_area=1.0):
    fv = extract_feature_vector(seg, pixel_area=pixel_area)
    tissue = 1.0 - fv.histogram[T.BACKGROUND]
    lgd = fv.histogram[T.LOW_GRADE_DYSPLASIA] / tissue
    mucus = fv.histogram[T.MUCUS] / tissue
    if grade == R.HIGH_GRADE_DYSPLASIA_TUMOR:
        return fv.tumor_cluster_count >= 1 and fv.tumor_cluster_max_area >= MIN_TUMOR_PIXELS * pixel_area
    if fv.tumor_cluster_count:
        return False
    if grade == R.LOW_GRADE_DYSPLASIA:
        return lgd >= 0.10
    if grade == R.HYPERPLASTIC:
        return lgd == 0 and mucus >= HYPERPLASTIC_MUCUS
    return lgd == 0 and mucus < HYPERPLASTIC_MUCUS


def gen_slide(spec, max_tries=50):
    """Return ``(label_map, grade, fragment_grades)`` for a planted slide.

    One fragment carries the slide grade, the others draw grades at or below
    it, so the slide grade is the worst fragment grade. Candidates failing
    the grade's defining check are redrawn from the same seed stream.
    """
    grade = RiskCategory(int(spec.grade))
    rng = np.random.default_rng(spec.seed)
    for _ in range(max_tries):
        n = spec.fragments
        seg = np.full((SLIDE_CELL, SLIDE_CELL * n), T.BACKGROUND, dtype=np.uint8)
        radii = np.sort(rng.uniform(28.0, 44.0, size=(n, 2)).prod(axis=1) ** 0.5)[::-1]
        main = int(rng.integers(n))
        frag_grades = [RiskCategory(int(rng.integers(0, grade + 1))) for _ in range(n)]
        frag_grades[main] = grade
        # the grade-defining fragment is the largest one
        sizes = np.empty(n)
        others = [i for i in range(n) if i != main]
        sizes[main] = radii[0]
        sizes[others] = radii[1:]
        for i in range(n):
            aspect = rng.uniform(0.8, 1.25)
            r = min(sizes[i] * np.sqrt(aspect), 44.0), min(sizes[i] / np.sqrt(aspect), 44.0)
            _draw_fragment(seg, 0, i * SLIDE_CELL, r, frag_grades[i], rng)
        if worst_grade(frag_grades) == grade and _audit(seg, grade) and len(split_fragments(seg)) == n:
            return seg, grade, frag_grades
    raise RuntimeError(f"could not plant grade {grade.name} in {max_tries} attempts")


def gen_cohort(n, seed, max_fragments=3):
    """``n`` slides with grades balanced across the four categories."""
    rng = np.random.default_rng(seed)
    grades = rng.permutation(np.arange(n) % 4)
    n_frags = rng.integers(1, max_fragments + 1, size=n)
    seeds = np.random.SeedSequence(seed).generate_state(n) if n else []
    return [gen_slide(SlideSpec(int(g), int(f), int(s))) for g, f, s in zip(grades, n_frags, seeds)]
