"""Metrics, perturbation harnesses and the information-gap demonstration.

The information-gap demo works on exact discrete joints: optimal
cross-entropy losses are conditional entropies, so the gap bound is
checked in closed form without training any predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .errors import MetricUndefinedError, ValidationError
from .genomic_io import LoopAnnotation, LoopCall
from .preprocessing import ContactMapWindow, SamplePair, TrackWindow

MAX_JOINT_ALPHABET = 8


@dataclass(frozen=True)
class MetricReport:
    """One scalar metric with its evaluation context."""

    name: str
    value: float
    sample_count: int
    task: str = ""
    split: str = ""


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape or pred.size < 2:
        raise ValidationError("r_squared requires two equal-length arrays of size >= 2")
    ss_tot = float(((target - target.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise MetricUndefinedError("target variance is zero; R^2 undefined")
    ss_res = float(((target - pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic with tie midranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC undefined with a single class")
    ranks = rankdata(scores)  # midranks for ties
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def prf(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> tuple[float, float, float]:
    """Precision, recall and F1 at the given probability threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels must have equal length")
    predicted = scores > threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def proportion_metric(
    predicted: list[LoopCall], validated: list[LoopAnnotation], slack_bins: int = 1
) -> float:
    """Fraction of predicted loops matching a validated loop within the slack.

    Anchors match when both start coordinates differ by at most
    ``slack_bins`` bins (bin width taken from the anchor interval length).
    """
    if not predicted:
        raise MetricUndefinedError("proportion metric undefined with no predictions")
    matched = 0
    for call in predicted:
        bin_bp = call.anchor1.length
        slack = slack_bins * bin_bp
        for loop in validated:
            if (
                loop.anchor1.chromosome == call.anchor1.chromosome
                and abs(loop.anchor1.start - call.anchor1.start) <= slack
                and abs(loop.anchor2.start - call.anchor2.start) <= slack
            ):
                matched += 1
                break
    return matched / len(predicted)


def _scale_pre_log(values: np.ndarray, mask: np.ndarray, factor: float) -> np.ndarray:
    """Scale the raw (pre-log) signal under the mask; values stay log-space."""
    out = values.copy()
    out[mask] = np.log1p(factor * np.expm1(values[mask]))
    return out


def perturb_anchors(
    sample: SamplePair,
    attenuation_ratio: float,
    anchors: tuple,
) -> SamplePair:
    """Attenuate the raw track signal within the anchor intervals.

    The stored values are log(x+1)-transformed, so the multiplication by
    (1 - ratio) happens on the pre-log accumulator. Contact maps are left
    untouched.
    """
    if not 0.0 <= attenuation_ratio <= 1.0:
        raise ValidationError(f"attenuation ratio must be in [0, 1], got {attenuation_ratio}")
    if attenuation_ratio == 0.0:
        return sample
    track = sample.track
    length = track.values.shape[0]
    half = length // 2
    bin_bp = track.bin_bp
    mask = np.zeros(length, dtype=bool)
    for segment, interval in ((0, track.origin_x), (half, track.origin_y)):
        for anchor in anchors:
            if anchor.chromosome != interval.chromosome:
                continue
            lo = max(anchor.start, interval.start)
            hi = min(anchor.end, interval.end)
            if lo >= hi:
                continue
            first = segment + (lo - interval.start) // bin_bp
            last = segment + (hi - 1 - interval.start) // bin_bp
            mask[first : last + 1] = True
    mask2d = np.broadcast_to(mask[:, None], track.values.shape)
    new_values = _scale_pre_log(track.values, mask2d, 1.0 - attenuation_ratio)
    new_track = TrackWindow(new_values, track.origin_x, track.origin_y, bin_bp)
    return replace(sample, track=new_track)


def perturbation_experiment(
    checkpoint,
    annotated_samples: list[tuple[SamplePair, LoopAnnotation]],
    ratios: tuple[float, ...] = (0.0, 0.5, 0.7, 0.9),
    threshold: float = 0.5,
    input_mode: str | None = None,
) -> dict[float, float]:
    """Loop recall per track-attenuation ratio on positive samples."""
    from .training import WindowDataset, predict

    if not annotated_samples:
        raise ValidationError("perturbation experiment needs at least one sample")
    recalls: dict[float, float] = {}
    for ratio in ratios:
        perturbed = [
            perturb_anchors(sample, ratio, (loop.anchor1, loop.anchor2))
            for sample, loop in annotated_samples
        ]
        dataset = WindowDataset.from_samples(perturbed)
        probs = predict(checkpoint, dataset, input_mode=input_mode)
        recalls[ratio] = float(np.mean(probs > threshold))
    return recalls


def corrupt_contacts(
    sample: SamplePair, ratio: float, mode: str, seed: int = 0
) -> SamplePair:
    """Perturb a fraction of the window's non-zero contacts.

    ``sparsify`` zeroes the chosen entries; ``gaussian`` adds noise with a
    standard deviation equal to each entry's own raw value, clipped at 0.
    The corruption acts on the pre-log values; symmetric entries of
    on-diagonal windows are perturbed identically.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    if mode not in ("sparsify", "gaussian"):
        raise ValidationError(f"unknown corruption mode {mode!r}")
    if ratio == 0.0:
        return sample
    rng = np.random.default_rng(seed)
    values = sample.contact.values
    raw = np.expm1(values)
    symmetric = sample.contact.origin_x == sample.contact.origin_y
    if symmetric:
        sel_i, sel_j = np.nonzero(np.triu(raw))
    else:
        sel_i, sel_j = np.nonzero(raw)
    n_chosen = int(round(ratio * sel_i.size))
    if n_chosen:
        chosen = rng.choice(sel_i.size, size=n_chosen, replace=False)
        ci, cj = sel_i[chosen], sel_j[chosen]
        if mode == "sparsify":
            raw[ci, cj] = 0.0
        else:
            noise = rng.normal(0.0, 1.0, n_chosen) * raw[ci, cj]
            raw[ci, cj] = np.clip(raw[ci, cj] + noise, 0.0, None)
        if symmetric:
            raw[cj, ci] = raw[ci, cj]
    contact = ContactMapWindow(
        np.log1p(raw), sample.contact.origin_x, sample.contact.origin_y, sample.contact.resolution_bp
    )
    return replace(sample, contact=contact)


@dataclass(frozen=True)
class DiscreteJoint:
    """An exact joint distribution over (z1, z2, t) with small alphabets."""

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", table)
        if table.ndim != 3:
            raise ValidationError(f"joint table must be 3-D, got {table.ndim}-D")
        if max(table.shape) > MAX_JOINT_ALPHABET:
            raise ValidationError(
                f"alphabet sizes must be <= {MAX_JOINT_ALPHABET}, got {table.shape}"
            )
        if np.any(table < 0):
            raise ValidationError("joint probabilities must be >= 0")
        if abs(table.sum() - 1.0) > 1e-12:
            raise ValidationError(f"joint table sums to {table.sum()!r}, expected 1")


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mutual_information(joint: DiscreteJoint, which: str) -> float:
    """Plug-in mutual information (nats) between a source and the target.

    ``which`` selects the source: ``z1;t``, ``z2;t`` or ``z12;t`` (the
    pair as one variable).
    """
    table = joint.table
    if which == "z1;t":
        pair = table.sum(axis=1)
    elif which == "z2;t":
        pair = table.sum(axis=0)
    elif which == "z12;t":
        pair = table.reshape(-1, table.shape[2])
    else:
        raise ValidationError(f"unknown mutual-information selector {which!r}")
    return _entropy(pair.sum(axis=1)) + _entropy(pair.sum(axis=0)) - _entropy(pair.ravel())


def target_entropy(joint: DiscreteJoint) -> float:
    """H(t) in nats."""
    return _entropy(joint.table.sum(axis=(0, 1)))


def conditional_target_entropy(joint: DiscreteJoint) -> float:
    """H(t | z1, z2) in nats: the optimal raw-input cross entropy."""
    table = joint.table
    return _entropy(table.ravel()) - _entropy(table.sum(axis=2).ravel())


@dataclass(frozen=True)
class InfoGapReport:
    """Closed-form quantities of the alignment information-gap bound."""

    gamma_q: float
    raw_ce: float
    aligned_ce: float
    bound_holds: bool


def info_gap_demo(joint: DiscreteJoint, tolerance: float = 1e-9) -> InfoGapReport:
    """Evaluate the perfectly-aligned-features penalty bound on one joint.

    The optimal raw cross entropy is H(t | z1, z2); perfect alignment caps
    the usable information at the smaller of the two modality/target
    mutual informations, so its optimum is H(t) - min(U1, U2). The bound
    asserts that the alignment penalty is at least the information gap
    between the modalities.
    """
    u1 = mutual_information(joint, "z1;t")
    u2 = mutual_information(joint, "z2;t")
    gamma_q = max(u1, u2) - min(u1, u2)
    raw_ce = conditional_target_entropy(joint)
    aligned_ce = target_entropy(joint) - min(u1, u2)
    return InfoGapReport(
        gamma_q=gamma_q,
        raw_ce=raw_ce,
        aligned_ce=aligned_ce,
        bound_holds=bool(aligned_ce - raw_ce >= gamma_q - tolerance),
    )


def random_joint(
    rng: np.random.Generator, shape: tuple[int, int, int] = (4, 4, 4)
) -> DiscreteJoint:
    """A seeded random joint distribution with the given alphabet sizes."""
    table = rng.random(shape) ** 2 + 1e-12
    return DiscreteJoint(table / table.sum())
