"""Evaluation harness: splits, attack suites, ROC/AUC and light sensitivity.

The verification protocol: split every identity's images into a reference
half and a target half, attack the targets, embed both sides, and score
every (reference, attacked) pair with cosine similarity. A robust verifier
keeps the resulting nk x nk matrix block-diagonal; the ROC/AUC of the
scores against same-identity ground truth quantifies how far an attack
degrades it. Lower AUC means a stronger attack.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attack_ap, attack_aq
from .corpus import IdentityGroup, Sample
from .errors import AdvRelightError, DegenerateLabelsError, EvaluationError, ManifestError
from .relight import estimate_light, load_face_image, random_relight
from .shading import SHLight, lighting_map, load_normal_map

ATTACK_METHODS = ("none", "random", "aq", "ap")


# ---------------------------------------------------------------------------
# Manifests and splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    identity: str
    images: tuple[str, ...]
    normals: tuple[str, ...]


@dataclass(frozen=True)
class DatasetManifest:
    identities: tuple[ManifestEntry, ...]
    k: int = 8


def load_manifest(path) -> DatasetManifest:
    """Read a JSON manifest mapping identities to image/normal paths."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        k = int(data.get("k", 8))
        entries = tuple(
            ManifestEntry(str(e["identity"]), tuple(e["images"]), tuple(e["normals"]))
            for e in data["identities"]
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    manifest = DatasetManifest(entries, k)
    _validate_manifest(manifest)
    return manifest


def _validate_manifest(manifest: DatasetManifest) -> None:
    if manifest.k < 1:
        raise ManifestError("k must be >= 1")
    for entry in manifest.identities:
        if len(entry.images) != 2 * manifest.k:
            raise ManifestError(
                f"identity {entry.identity} supplies {len(entry.images)} images, "
                f"expected {2 * manifest.k}"
            )
        if len(entry.normals) != len(entry.images):
            raise ManifestError(
                f"identity {entry.identity}: normals do not align 1:1 with images"
            )


def load_groups(manifest: DatasetManifest, base_dir=".") -> list[IdentityGroup]:
    base = Path(base_dir)
    groups = []
    for entry in manifest.identities:
        samples = tuple(
            Sample(load_face_image(base / img), load_normal_map(base / nrm))
            for img, nrm in zip(entry.images, entry.normals)
        )
        groups.append(IdentityGroup(entry.identity, samples))
    return groups


@dataclass(frozen=True)
class TaggedSample:
    identity: str
    index: int
    sample: Sample


@dataclass(frozen=True)
class Split:
    reference: tuple[TaggedSample, ...]
    target: tuple[TaggedSample, ...]


def build_split(groups, k: int = 8, seed: int = 0) -> Split:
    """Deterministic per-identity k + k partition into reference and target."""
    reference, target = [], []
    for gi, group in enumerate(groups):
        if len(group.samples) != 2 * k:
            raise ManifestError(
                f"identity {group.identity} has {len(group.samples)} samples, "
                f"expected {2 * k}"
            )
        order = np.random.default_rng([seed, gi]).permutation(2 * k)
        for pos in order[:k]:
            reference.append(TaggedSample(group.identity, int(pos), group.samples[pos]))
        for pos in order[k:]:
            target.append(TaggedSample(group.identity, int(pos), group.samples[pos]))
    return Split(tuple(reference), tuple(target))


# ---------------------------------------------------------------------------
# Attack suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackedSample:
    identity: str
    source_index: int
    image: object  # FaceImage
    original_light: SHLight | None
    adversarial_light: SHLight | None
    mean_abs_change: float
    error: str | None = None


@dataclass(frozen=True)
class SuiteResult:
    method: str
    epsilon: float
    attacked: tuple[AttackedSample, ...]
    failures: tuple[tuple[int, str], ...] = field(default_factory=tuple)


def run_attack_suite(targets, method: str, embedder, *, epsilon: float = 0.0,
                     iterations: int = 10, seed: int = 0,
                     params: attack_ap.AdvLNetParams | None = None) -> SuiteResult:
    """Attack every target image; per-image failures are collected, not fatal."""
    if method not in ATTACK_METHODS:
        raise ValueError(f"method must be one of {ATTACK_METHODS}")
    if method == "ap" and params is None:
        raise ValueError("method 'ap' needs trained predictor parameters")
    attacked: list[AttackedSample] = []
    failures: list[tuple[int, str]] = []
    gradient_mode = "analytic" if embedder.descriptor.differentiable else "fd"
    for idx, tagged in enumerate(targets):
        image, normals = tagged.sample.image, tagged.sample.normals
        try:
            light = estimate_light(image, normals)
            if method == "none":
                new_image, adv = image, light
            elif method == "random":
                result = random_relight(image, normals, light, epsilon,
                                        seed=_per_image_seed(seed, idx))
                new_image, adv = result.image, result.new_light
            elif method == "aq":
                cfg = attack_aq.AttackConfig(epsilon=epsilon, iterations=iterations,
                                             gradient_mode=gradient_mode)
                trace = attack_aq.attack(image, normals, light, embedder, cfg)
                new_image, adv = trace.relit, trace.adversarial_light
            else:  # ap
                new_image, adv = attack_ap.predict(image, normals, params, embedder)
            change = float(np.abs(new_image.luminance - image.luminance).mean())
            attacked.append(AttackedSample(tagged.identity, tagged.index, new_image,
                                           light, adv, change))
        except AdvRelightError as exc:
            failures.append((idx, str(exc)))
            attacked.append(AttackedSample(tagged.identity, tagged.index, image,
                                           None, None, 0.0, error=str(exc)))
    return SuiteResult(method, epsilon, tuple(attacked), tuple(failures))


def _per_image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Similarity matrix, ROC and AUC
# ---------------------------------------------------------------------------

def similarity_matrix(reference, attacked, embedder) -> np.ndarray:
    """S[i, j] = cosine similarity of reference i against attacked j.

    Embedding failures are collected per sample and raised together as one
    :class:`EvaluationError` so a flaky external endpoint reports every
    affected row/column at once.
    """
    if len(reference) == 0 or len(attacked) == 0:
        raise ValueError("reference and attacked sets must be nonempty")
    failures: list[tuple[str, int, str]] = []

    def embed_all(side, images):
        vectors = []
        for idx, image in enumerate(images):
            try:
                vectors.append(embedder.embed(image))
            except AdvRelightError as exc:
                failures.append((side, idx, str(exc)))
        return vectors

    ref_vecs = embed_all("reference", [t.sample.image for t in reference])
    att_vecs = embed_all("attacked", [a.image for a in attacked])
    if failures:
        raise EvaluationError(failures)
    return np.clip(np.stack(ref_vecs) @ np.stack(att_vecs).T, -1.0, 1.0)


def ground_truth(reference, attacked) -> np.ndarray:
    ref_ids = [t.identity for t in reference]
    att_ids = [a.identity for a in attacked]
    return np.array([[r == a for a in att_ids] for r in ref_ids], dtype=bool)


@dataclass(frozen=True)
class ROCResult:
    points: np.ndarray  # (n, 3): fpr, tpr, threshold
    auc: float


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> ROCResult:
    """ROC points at every distinct threshold plus the exact rank-based AUC.

    The AUC is the Mann-Whitney statistic: the fraction of
    (positive, negative) score pairs ranked correctly, ties counting half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("score and label shapes differ")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ground truth must contain both classes")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos_rank_sum = float(ranks[labels].sum())
    auc = (pos_rank_sum - 0.5 * n_pos * (n_pos + 1)) / (n_pos * n_neg)

    thresholds = np.unique(scores)[::-1]
    pos_sorted = np.sort(scores[labels])
    neg_sorted = np.sort(scores[~labels])
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = n_neg - np.searchsorted(neg_sorted, thresholds, side="left")
    points = np.column_stack([fp / n_neg, tp / n_pos, thresholds])
    return ROCResult(points=points, auc=float(auc))


# ---------------------------------------------------------------------------
# Sensitivity histogram on a hexagonal grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityHistogram:
    centers: np.ndarray  # (n, 2) cell centers, map-pixel units (x, y)
    counts: np.ndarray  # (n,)
    cell_size: float
    resolution: int
    total: int
    skipped: int


def sensitivity_analysis(pairs, resolution: int = 128, cell_size: float = 8.0) -> SensitivityHistogram:
    """Histogram of maximal lighting-map-change positions on a hex grid.

    For each (original, adversarial) light pair, both lighting maps are
    rendered, the pixel where |map' - map| peaks (ties: lowest row-major
    index) becomes that pair's sensitive point, and points are counted on
    a hexagonal grid of the given cell size. Pairs with an identically
    zero difference map are skipped and tallied.
    """
    if len(pairs) == 0:
        raise ValueError("sensitivity analysis needs at least one light pair")
    if cell_size <= 0:
        raise ValueError("cell size must be positive")
    cells: dict[tuple[int, int], int] = {}
    skipped = 0
    for old, new in pairs:
        diff = np.abs(lighting_map(new, resolution).values
                      - lighting_map(old, resolution).values)
        if diff.max() == 0.0:
            skipped += 1
            continue
        row, col = divmod(int(np.argmax(diff)), resolution)
        cell = _hex_cell(float(col), float(row), cell_size)
        cells[cell] = cells.get(cell, 0) + 1
    ordered = sorted(cells.items())
    centers = np.array([_hex_center(q, r, cell_size) for (q, r), _ in ordered]
                       ).reshape(-1, 2)
    counts = np.array([c for _, c in ordered], dtype=int)
    return SensitivityHistogram(centers, counts, cell_size, resolution,
                                total=int(counts.sum()), skipped=skipped)


_SQRT3 = math.sqrt(3.0)


def _hex_cell(x: float, y: float, size: float) -> tuple[int, int]:
    """Axial coordinates of the pointy-top hexagon containing (x, y)."""
    q = (_SQRT3 / 3.0 * x - y / 3.0) / size
    r = (2.0 / 3.0 * y) / size
    return _hex_round(q, r)


def _hex_round(q: float, r: float) -> tuple[int, int]:
    s = -q - r
    rq, rr, rs = round(q), round(r), round(s)
    dq, dr, ds = abs(rq - q), abs(rr - r), abs(rs - s)
    if dq > dr and dq > ds:
        rq = -rr - rs
    elif dr > ds:
        rr = -rq - rs
    return int(rq), int(rr)


def _hex_center(q: int, r: int, size: float) -> tuple[float, float]:
    return (size * _SQRT3 * (q + r / 2.0), size * 1.5 * r)


# ---------------------------------------------------------------------------
# End-to-end evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    method: str
    epsilon: float
    auc: float
    roc: ROCResult
    mean_abs_change: float
    suite: SuiteResult
    light_pairs: tuple[tuple[SHLight, SHLight], ...]


def evaluate(groups, method: str, embedder, *, epsilon: float = 0.0, k: int = 8,
             seed: int = 0, iterations: int = 10, eval_embedder=None,
             params: attack_ap.AdvLNetParams | None = None) -> EvalReport:
    """split -> attack -> similarity matrix -> ROC/AUC, one method at a time.

    ``eval_embedder`` may differ from the attack embedder to measure
    transferability; it defaults to the attack embedder.
    """
    split = build_split(groups, k=k, seed=seed)
    suite = run_attack_suite(split.target, method, embedder, epsilon=epsilon,
                             iterations=iterations, seed=seed, params=params)
    scorer = eval_embedder if eval_embedder is not None else embedder
    matrix = similarity_matrix(split.reference, suite.attacked, scorer)
    truth = ground_truth(split.reference, suite.attacked)
    roc = roc_auc(matrix, truth)
    changes = [a.mean_abs_change for a in suite.attacked if a.error is None]
    pairs = tuple(
        (a.original_light, a.adversarial_light)
        for a in suite.attacked if a.error is None
    )
    return EvalReport(
        method=method,
        epsilon=epsilon,
        auc=roc.auc,
        roc=roc,
        mean_abs_change=float(np.mean(changes)) if changes else 0.0,
        suite=suite,
        light_pairs=pairs,
    )


# ---------------------------------------------------------------------------
# CSV output (6 significant digits everywhere)
# ---------------------------------------------------------------------------

def write_roc_csv(path, roc: ROCResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, threshold in roc.points:
            writer.writerow([f"{fpr:.6g}", f"{tpr:.6g}", f"{threshold:.6g}"])


def write_summary_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "epsilon", "auc", "mean_abs_change"])
        for report in reports:
            writer.writerow([report.method, f"{report.epsilon:.6g}",
                             f"{report.auc:.6g}", f"{report.mean_abs_change:.6g}"])


def write_lights_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index"] + [f"L{j}" for j in range(9)]
                        + [f"Lhat{j}" for j in range(9)])
        for idx, (old, new) in enumerate(report.light_pairs):
            writer.writerow([idx] + [f"{c:.6g}" for c in old.coeffs]
                            + [f"{c:.6g}" for c in new.coeffs])


def read_lights_csv(path) -> list[tuple[SHLight, SHLight]]:
    pairs = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 19:
            raise ValueError(f"{path}: expected 19 columns, got {len(header)}")
        for row in reader:
            values = [float(v) for v in row[1:]]
            pairs.append((SHLight(values[:9]), SHLight(values[9:])))
    return pairs


def write_hexhist_csv(path, hist: SensitivityHistogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center_x", "center_y", "count"])
        for (x, y), count in zip(hist.centers, hist.counts):
            writer.writerow([f"{x:.6g}", f"{y:.6g}", str(int(count))])
