"""Synthetic bloodstain sheets and the geometric stain classifier.

The pipeline is: pick red pixels, group them into contours, fit an ellipse
from second central moments, then split passive / active / transfer on area
and eccentricity thresholds. Sheets are synthesized with ground truth so the
whole chain can be scored.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import rgb_to_hsv
from scipy import ndimage

from .rng import substream

STAIN_PASSIVE = "passive_drip"
STAIN_ACTIVE = "active_spatter"
STAIN_TRANSFER = "transfer_smear"
STAIN_NOT_BLOOD = "not_blood"
STAIN_CLASSES = (STAIN_PASSIVE, STAIN_ACTIVE, STAIN_TRANSFER, STAIN_NOT_BLOOD)

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


class StainGenerationError(Exception):
    """A requested stain cannot be placed on the sheet."""


@dataclass
class ClassifierConfig:
    red_hue_window: tuple[float, float] = (0.93, 0.07)  # wraps through 0
    min_saturation: float = 0.35
    min_area_px: int = 30
    transfer_area_px: float = 5000.0
    eccentricity_threshold: float = 0.85

    def __post_init__(self):
        if self.min_area_px <= 0 or self.transfer_area_px <= 0:
            raise ValueError("area thresholds must be positive")
        if not 0.0 < self.eccentricity_threshold < 1.0:
            raise ValueError("eccentricity threshold must be in (0, 1)")


@dataclass
class StainGroundTruth:
    id: str
    stain_class: str
    center_px: tuple[float, float]  # (x, y)
    semi_axes_px: tuple[float, float]  # a >= b
    orientation_rad: float
    color: tuple[int, int, int]

    def __post_init__(self):
        a, b = self.semi_axes_px
        if not a >= b > 0:
            raise ValueError("semi-axes must satisfy a >= b > 0")


@dataclass
class StainRaster:
    pixels: np.ndarray  # [h, w, 3] uint8
    truths: list[StainGroundTruth]
    seed: int = 0

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]


@dataclass
class Contour:
    pixels: np.ndarray  # filled pixels as [N, 2] (row, col)
    boundary: list[tuple[int, int]]  # ordered (row, col) boundary trace

    @property
    def area_px(self) -> int:
        return len(self.pixels)


@dataclass
class EllipseFit:
    centroid_px: tuple[float, float]  # (x, y)
    semi_axes_px: tuple[float, float]  # a >= b
    orientation_rad: float
    area_px: int
    eccentricity: float
    degenerate: bool = False


@dataclass
class StainPrediction:
    stain_class: str
    fit: EllipseFit
    contour: Contour | None = None


@dataclass
class ClassificationReport:
    confusion: np.ndarray  # 4x4, rows = truth, cols = prediction, STAIN_CLASSES order
    accuracy_on_true_blood: float
    accuracy_including_false_positives: float
    matched_blood: int
    correct: int
    false_positives: int
    missed_truths: int
    assignments: list[tuple[int, int | None]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "classes": list(STAIN_CLASSES),
            "accuracy_on_true_blood": self.accuracy_on_true_blood,
            "accuracy_including_false_positives": self.accuracy_including_false_positives,
            "matched_blood": self.matched_blood,
            "correct": self.correct,
            "false_positives": self.false_positives,
            "missed_truths": self.missed_truths,
        }


# ---------------------------------------------------------------------------
# Sheet synthesis
# ---------------------------------------------------------------------------


@dataclass
class StainSheetParams:
    width_px: int = 600
    height_px: int = 450
    passive_count: int = 0
    active_count: int = 0
    transfer_count: int = 0
    distractor_count: int = 0
    passive_axis_px: tuple[float, float] = (5.0, 12.0)
    passive_ecc: tuple[float, float] = (0.0, 0.4)
    active_axis_px: tuple[float, float] = (12.0, 28.0)
    active_ecc: tuple[float, float] = (0.9, 0.97)
    transfer_area_px: tuple[float, float] = (10000.0, 15000.0)
    allow_overlap: bool = False


def margin_params(
    counts: tuple[int, int, int],
    margin: float,
    cfg: ClassifierConfig | None = None,
    distractors: int = 0,
    width_px: int = 600,
    height_px: int = 450,
) -> StainSheetParams:
    """Sheet parameters whose class margins shrink toward the classifier
    thresholds as `margin` goes from 1 (well separated) to 0 (touching)."""
    cfg = cfg or ClassifierConfig()
    if not 0.0 <= margin <= 1.0:
        raise ValueError("margin must be in [0, 1]")
    thr = cfg.eccentricity_threshold
    passive_hi = thr - margin * (thr - 0.4)
    active_lo = thr + margin * (0.9 - thr)
    transfer_lo = cfg.transfer_area_px * (1.0 + margin)
    # Sample tightly against the shrinking class edge, so small margins put
    # every stain where only rasterization noise decides the class.
    return StainSheetParams(
        width_px=width_px,
        height_px=height_px,
        passive_count=counts[0],
        active_count=counts[1],
        transfer_count=counts[2],
        distractor_count=distractors,
        passive_ecc=(max(0.0, passive_hi - 0.02), passive_hi),
        active_ecc=(active_lo, min(active_lo + 0.02, 0.99)),
        transfer_area_px=(transfer_lo, transfer_lo * 1.05),
    )


def _blood_color(rng) -> tuple[int, int, int]:
    hue = rng.uniform(-0.02, 0.02) % 1.0
    sat = rng.uniform(0.65, 0.95)
    val = rng.uniform(0.45, 0.8)
    r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
    return int(r * 255), int(g * 255), int(b * 255)


def _fill_ellipse(img: np.ndarray, cx: float, cy: float, a: float, b: float,
                  theta: float, color: tuple[int, int, int]) -> int:
    """Rasterize a filled ellipse; returns the painted pixel count."""
    h, w = img.shape[:2]
    reach = a + 2
    x0, x1 = max(0, int(cx - reach)), min(w, int(cx + reach) + 1)
    y0, y1 = max(0, int(cy - reach)), min(h, int(cy + reach) + 1)
    if x0 >= x1 or y0 >= y1:
        return 0
    xs, ys = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(theta), math.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    img[y0:y1, x0:x1][mask] = color
    return int(mask.sum())


def _ellipse_aabb(cx, cy, a, b, theta) -> tuple[float, float, float, float]:
    c, s = math.cos(theta), math.sin(theta)
    hx = math.sqrt((a * c) ** 2 + (b * s) ** 2)
    hy = math.sqrt((a * s) ** 2 + (b * c) ** 2)
    return cx - hx, cy - hy, cx + hx, cy + hy


def _boxes_overlap(p, q, pad: float = 3.0) -> bool:
    return not (p[2] + pad < q[0] or q[2] + pad < p[0] or p[3] + pad < q[1] or q[3] + pad < p[1])


def synthesize_stain_sheet(params: StainSheetParams, seed: int) -> StainRaster:
    """Draw a sheet of elliptical stains plus optional non-blood distractors."""
    rng = substream(seed, "stain_sheet")
    img = np.full((params.height_px, params.width_px, 3), 255, dtype=np.uint8)
    truths: list[StainGroundTruth] = []
    boxes: list[tuple[float, float, float, float]] = []
    serial = 0

    def place(stain_class: str, a: float, b: float) -> None:
        nonlocal serial
        theta = rng.uniform(0.0, math.pi)
        color = _blood_color(rng) if stain_class != STAIN_NOT_BLOOD else (230, 40, 45)
        for _ in range(300):
            cx = rng.uniform(a + 3, params.width_px - a - 3)
            cy = rng.uniform(a + 3, params.height_px - a - 3)
            bb = _ellipse_aabb(cx, cy, a, b, theta)
            if not params.allow_overlap and any(_boxes_overlap(bb, q) for q in boxes):
                continue
            _fill_ellipse(img, cx, cy, a, b, theta, color)
            boxes.append(bb)
            truths.append(
                StainGroundTruth(f"t{serial:03d}", stain_class, (cx, cy), (a, b), theta, color)
            )
            serial += 1
            return
        raise StainGenerationError(f"could not place a {stain_class} stain of semi-axis {a:.0f} px")

    # Largest shapes first, or a crowded sheet cannot seat the transfer blobs.
    for _ in range(params.transfer_count):
        area = rng.uniform(*params.transfer_area_px)
        aspect = rng.uniform(1.3, 2.4)
        a = math.sqrt(area * aspect / math.pi)
        place(STAIN_TRANSFER, a, a / aspect)
    for _ in range(params.active_count):
        a = rng.uniform(*params.active_axis_px)
        e = rng.uniform(*params.active_ecc)
        place(STAIN_ACTIVE, a, max(a * math.sqrt(1.0 - e * e), 1.5))
    for _ in range(params.passive_count):
        a = rng.uniform(*params.passive_axis_px)
        e = rng.uniform(*params.passive_ecc)
        place(STAIN_PASSIVE, a, max(a * math.sqrt(1.0 - e * e), 1.5))
    for _ in range(params.distractor_count):
        # Round red tags, the classic color-picking false positive.
        a = rng.uniform(6.0, 10.0)
        place(STAIN_NOT_BLOOD, a, a * rng.uniform(0.85, 1.0))
    return StainRaster(img, truths, seed)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def red_mask(pixels: np.ndarray, cfg: ClassifierConfig) -> np.ndarray:
    """Boolean mask of pixels inside the red hue/saturation window."""
    hsv = rgb_to_hsv(pixels.astype(float) / 255.0)
    hue, sat = hsv[..., 0], hsv[..., 1]
    lo, hi = cfg.red_hue_window
    if lo <= hi:
        in_hue = (hue >= lo) & (hue <= hi)
    else:
        in_hue = (hue >= lo) | (hue <= hi)
    return in_hue & (sat >= cfg.min_saturation)


def _trace_boundary(mask: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbor boundary trace from the top-left-most pixel, clockwise."""
    # Clockwise neighborhood starting north.
    neighbors = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    rows, cols = mask.shape

    def filled(r, c):
        return 0 <= r < rows and 0 <= c < cols and mask[r, c]

    boundary = [start]
    prev_dir = 2  # treat the start as entered moving east (from its west side)
    cur = start
    for _ in range(8 * mask.size):
        found = False
        for k in range(8):
            # Resume the sweep just past the backtrack point (opposite of the
            # arrival direction), clockwise.
            d = (prev_dir + 5 + k) % 8
            nr, nc = cur[0] + neighbors[d][0], cur[1] + neighbors[d][1]
            if filled(nr, nc):
                cur = (nr, nc)
                prev_dir = d
                found = True
                break
        if not found:
            break  # isolated pixel
        if cur == start:
            break
        boundary.append(cur)
    return boundary


def extract_red_clusters(raster: StainRaster, cfg: ClassifierConfig | None = None) -> list[Contour]:
    """Connected red components of at least `min_area_px` pixels."""
    cfg = cfg or ClassifierConfig()
    mask = red_mask(raster.pixels, cfg)
    labels, count = ndimage.label(mask, structure=_FOUR_CONNECTED)
    contours = []
    slices = ndimage.find_objects(labels)
    for idx in range(count):
        sl = slices[idx]
        if sl is None:
            continue
        local = labels[sl] == idx + 1
        n = int(local.sum())
        if n < cfg.min_area_px:
            continue
        rr, cc = np.nonzero(local)
        r_off, c_off = sl[0].start, sl[1].start
        pixels = np.stack([rr + r_off, cc + c_off], axis=1)
        top_left = min(zip(rr.tolist(), cc.tolist()))
        trace = [(r + r_off, c + c_off) for r, c in _trace_boundary(local, top_left)]
        contours.append(Contour(pixels=pixels, boundary=trace))
    contours.sort(key=lambda ct: (int(ct.pixels[:, 0].min()), int(ct.pixels[:, 1].min())))
    return contours


# ---------------------------------------------------------------------------
# Ellipse fitting and classification
# ---------------------------------------------------------------------------

DEGENERATE_MIN_AXIS_PX = 0.5


def fit_ellipse(contour: Contour) -> EllipseFit:
    """Moment-equivalent ellipse of the filled pixel set.

    Semi-axes are scaled so the uniform ellipse has the same second central
    moments as the pixels (axis = 2 * sqrt of the principal variance).
    """
    pts = np.asarray(contour.pixels, dtype=float)
    n = len(pts)
    if n == 0:
        raise ValueError("empty contour")
    cy, cx = pts.mean(axis=0)
    dy = pts[:, 0] - cy
    dx = pts[:, 1] - cx
    mu20 = float(np.mean(dx * dx))
    mu02 = float(np.mean(dy * dy))
    mu11 = float(np.mean(dx * dy))

    common = (mu20 + mu02) / 2.0
    diff = math.sqrt(((mu20 - mu02) / 2.0) ** 2 + mu11**2)
    lam1 = max(common + diff, 0.0)
    lam2 = max(common - diff, 0.0)
    a = 2.0 * math.sqrt(lam1)
    b = 2.0 * math.sqrt(lam2)
    theta = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)

    degenerate = b < DEGENERATE_MIN_AXIS_PX
    if degenerate:
        b = DEGENERATE_MIN_AXIS_PX
        a = max(a, b)
    ecc = math.sqrt(max(1.0 - (b / a) ** 2, 0.0)) if a > 0 else 0.0
    return EllipseFit(
        centroid_px=(cx, cy),
        semi_axes_px=(a, b),
        orientation_rad=theta,
        area_px=n,
        eccentricity=ecc,
        degenerate=degenerate,
    )


def classify_stain(fit: EllipseFit, cfg: ClassifierConfig | None = None) -> str:
    """Large -> transfer, elongated -> active, else passive."""
    cfg = cfg or ClassifierConfig()
    if fit.area_px > cfg.transfer_area_px:
        return STAIN_TRANSFER
    if fit.eccentricity > cfg.eccentricity_threshold:
        return STAIN_ACTIVE
    return STAIN_PASSIVE


def classify_raster(raster: StainRaster, cfg: ClassifierConfig | None = None) -> list[StainPrediction]:
    """Full extract -> fit -> classify pass over one sheet."""
    cfg = cfg or ClassifierConfig()
    predictions = []
    for contour in extract_red_clusters(raster, cfg):
        fit = fit_ellipse(contour)
        predictions.append(StainPrediction(classify_stain(fit, cfg), fit, contour))
    return predictions


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_classification(
    predictions: list[StainPrediction],
    truths: list[StainGroundTruth],
    match_radius_px: float = 25.0,
) -> ClassificationReport:
    """Greedy nearest one-to-one matching, then accuracy bookkeeping.

    Predictions left unmatched count as false positives, as do predictions
    matched to a non-blood distractor truth.
    """
    if match_radius_px <= 0:
        raise ValueError("match radius must be positive")
    pairs = []
    for i, pred in enumerate(predictions):
        px, py = pred.fit.centroid_px
        for j, truth in enumerate(truths):
            d = math.hypot(px - truth.center_px[0], py - truth.center_px[1])
            if d <= match_radius_px:
                pairs.append((d, i, j))
    pairs.sort()
    pred_match: dict[int, int] = {}
    truth_used: set[int] = set()
    for _, i, j in pairs:
        if i in pred_match or j in truth_used:
            continue
        pred_match[i] = j
        truth_used.add(j)

    idx = {name: k for k, name in enumerate(STAIN_CLASSES)}
    confusion = np.zeros((4, 4), dtype=int)
    matched_blood = correct = false_positives = 0
    assignments: list[tuple[int, int | None]] = []
    for i, pred in enumerate(predictions):
        j = pred_match.get(i)
        assignments.append((i, j))
        truth_class = truths[j].stain_class if j is not None else STAIN_NOT_BLOOD
        confusion[idx[truth_class], idx[pred.stain_class]] += 1
        if truth_class == STAIN_NOT_BLOOD:
            false_positives += 1
        else:
            matched_blood += 1
            if pred.stain_class == truth_class:
                correct += 1
    missed = 0
    for j, truth in enumerate(truths):
        if j not in truth_used:
            missed += 1
            confusion[idx[truth.stain_class], idx[STAIN_NOT_BLOOD]] += 1

    acc_blood = correct / matched_blood if matched_blood else 0.0
    denom = matched_blood + false_positives
    acc_all = correct / denom if denom else 0.0
    return ClassificationReport(
        confusion=confusion,
        accuracy_on_true_blood=acc_blood,
        accuracy_including_false_positives=acc_all,
        matched_blood=matched_blood,
        correct=correct,
        false_positives=false_positives,
        missed_truths=missed,
        assignments=assignments,
    )


def pipeline_accuracy(params: StainSheetParams, seed: int,
                      cfg: ClassifierConfig | None = None) -> ClassificationReport:
    """Synthesize, classify, and score one sheet."""
    cfg = cfg or ClassifierConfig()
    raster = synthesize_stain_sheet(params, seed)
    predictions = classify_raster(raster, cfg)
    return evaluate_classification(predictions, raster.truths)
