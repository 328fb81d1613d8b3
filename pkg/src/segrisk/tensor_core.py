"""Per-pixel class maps and the primitives every other module builds on.

Maps are plain numpy arrays:

* logit / probability maps: ``(..., C)`` float arrays, class axis last
* label maps: integer arrays of class indices, ``IGNORE`` (255) for
  unannotated pixels
"""

from enum import IntEnum

import numpy as np

from .exceptions import InvalidInputError, InvalidLabelError

IGNORE = 255
N_TISSUE_CLASSES = 14


class TissueClass(IntEnum):
    NORMAL_GLANDS = 0
    LOW_GRADE_DYSPLASIA = 1
    HIGH_GRADE_DYSPLASIA_TUMOR = 2
    SUBMUCOSAL_STROMA = 3
    DESMOPLASTIC_STROMA = 4
    STROMA_LAMINA_PROPRIA = 5
    MUCUS = 6
    NECROSIS_DEBRIS = 7
    LYMPHOCYTES = 8
    ERYTHROCYTES = 9
    ADIPOSE = 10
    MUSCLE = 11
    NERVE = 12
    BACKGROUND = 13


TISSUE_CLASS_NAMES = (
    "normal glands",
    "low-grade dysplasia",
    "high-grade dysplasia/tumor",
    "submucosal stroma",
    "desmoplastic stroma",
    "stroma lamina propria",
    "mucus",
    "necrosis and debris",
    "lymphocytes",
    "erythrocytes",
    "adipose tissue",
    "muscle",
    "nerve",
    "background",
)


def check_scores(scores, name="logits"):
    """Return ``scores`` as a float64 array with a class axis of size >= 2."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] < 2:
        raise InvalidInputError(f"{name} need a trailing class axis of size >= 2, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} are empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contain non-finite values")
    return arr


def check_labels(labels, n_classes=None, shape=None):
    """Validate a label map; values must be < ``n_classes`` or IGNORE."""
    arr = np.asarray(labels)
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(np.isfinite(arr)) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise InvalidLabelError(f"labels must be integer class indices, got dtype {arr.dtype}")
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidInputError(f"label shape {arr.shape} does not match scores shape {tuple(shape)}")
    if arr.size and arr.min() < 0:
        raise InvalidLabelError("negative label value")
    if n_classes is not None:
        bad = (arr != IGNORE) & (arr >= n_classes)
        if np.any(bad):
            raise InvalidLabelError(
                f"label {int(arr[bad].flat[0])} out of range for {n_classes} classes"
            )
    return arr


def softmax(logits):
    """Softmax over the last axis, max-subtracted so large logits do not overflow."""
    z = check_scores(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, n_classes):
    """Unit vectors for each label; IGNORE pixels become all-zero rows."""
    labels = check_labels(labels, n_classes)
    out = np.zeros(labels.shape + (n_classes,), dtype=np.float64)
    valid = labels != IGNORE
    idx = np.nonzero(valid)
    out[idx + (labels[valid].astype(np.intp),)] = 1.0
    return out


def argmax_decode(probs):
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    arr = check_scores(probs, "probabilities")
    return np.argmax(arr, axis=-1).astype(np.uint8 if arr.shape[-1] <= 255 else np.int64)
