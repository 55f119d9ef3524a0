"""A-line and frame-level evaluation of predicted artifact classes.

A prediction set is a sequence of ``(predicted, reference)`` label-vector pairs,
one pair per frame. A-line metrics pool every A-line of every frame; frame-wise
metrics reduce each frame to per-class presence first.
"""

import json
from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = ("none", "mild", "severe")
N_CLASSES = len(CLASS_NAMES)


def predicted_labels(logits):
    """Argmax over the class axis; ties go to the lower class index."""
    return np.asarray(logits).argmax(axis=-1)


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.int64)
    ref = np.asarray(ref, dtype=np.int64)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction length {pred.shape} != reference length {ref.shape}")
    return pred, ref


def frame_dice(pred, ref, c):
    """1-D Dice for class ``c``, or None unless ``c`` occurs in both vectors."""
    pred, ref = _pair(pred, ref)
    in_pred = pred == c
    in_ref = ref == c
    if not in_pred.any() or not in_ref.any():
        return None
    return 2.0 * np.count_nonzero(in_pred & in_ref) / (in_pred.sum() + in_ref.sum())


def confusion_counts(pairs):
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for pred, ref in pairs:
        pred, ref = _pair(pred, ref)
        counts += np.bincount(
            ref.ravel() * N_CLASSES + pred.ravel(), minlength=N_CLASSES**2
        ).reshape(N_CLASSES, N_CLASSES)
    return counts


def confusion_matrix(pairs):
    """Row-normalised percentages (rows = reference) and a per-row empty flag."""
    counts = confusion_counts(pairs)
    totals = counts.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    percent = np.where(totals > 0, 100.0 * counts / np.maximum(totals, 1), 0.0)
    return percent, empty


def balanced_accuracy(pairs):
    """Mean recall over the classes that occur in the reference."""
    counts = confusion_counts(pairs)
    totals = counts.sum(axis=1)
    present = totals > 0
    if not present.any():
        raise ValueError("empty prediction set")
    recalls = np.diag(counts)[present] / totals[present]
    return float(recalls.mean())


def _fscore(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0, True
    return 2.0 * tp / (2.0 * tp + fp + fn), False


def aline_fscore(pairs, c, return_flag=False):
    counts = confusion_counts(pairs)
    tp = counts[c, c]
    fp = counts[:, c].sum() - tp
    fn = counts[c, :].sum() - tp
    score, degenerate = _fscore(tp, fp, fn)
    return (score, degenerate) if return_flag else score


def _longest_circular_run(mask):
    if mask.all():
        return mask.size
    if not mask.any():
        return 0
    # rotate so the vector starts right after a gap, then scan linearly
    start = int(np.argmin(mask))
    rolled = np.roll(mask, -start)
    best = run = 0
    for v in rolled:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def frame_present(labels, c, min_run=1):
    mask = np.asarray(labels) == c
    if min_run <= 1:
        return bool(mask.any())
    return _longest_circular_run(mask) >= min_run


def framewise_fscore(pairs, c, min_run=1, return_flag=False):
    tp = fp = fn = 0
    for pred, ref in pairs:
        pred, ref = _pair(pred, ref)
        p = frame_present(pred, c, min_run)
        r = frame_present(ref, c, 1)
        tp += p and r
        fp += p and not r
        fn += r and not p
    score, degenerate = _fscore(tp, fp, fn)
    return (score, degenerate) if return_flag else score


@dataclass
class MetricsReport:
    dice: dict
    balanced_accuracy: float
    aline_fscore: dict
    framewise_fscore: dict
    confusion_percent: list
    confusion_empty_rows: list
    n_frames: int
    n_alines: int
    warnings: list = field(default_factory=list)

    def table_row(self):
        """Headline scores: balanced accuracy, Dice, A-line and frame-wise F for the artifact classes."""
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "dice_mild_mean": self.dice["mild"]["mean"],
            "dice_mild_sd": self.dice["mild"]["sd"],
            "dice_severe_mean": self.dice["severe"]["mean"],
            "dice_severe_sd": self.dice["severe"]["sd"],
            "fscore_mild": self.aline_fscore["mild"],
            "fscore_severe": self.aline_fscore["severe"],
            "framewise_fscore_mild": self.framewise_fscore["mild"],
            "framewise_fscore_severe": self.framewise_fscore["severe"],
        }

    def to_dict(self):
        return {
            "format": "arcnet-metrics/1",
            "summary": self.table_row(),
            "dice": self.dice,
            "balanced_accuracy": self.balanced_accuracy,
            "aline_fscore": self.aline_fscore,
            "framewise_fscore": self.framewise_fscore,
            "confusion_matrix_percent": {
                "rows_reference": list(CLASS_NAMES),
                "cols_predicted": list(CLASS_NAMES),
                "values": self.confusion_percent,
                "empty_rows": self.confusion_empty_rows,
            },
            "n_frames": self.n_frames,
            "n_alines": self.n_alines,
            "warnings": self.warnings,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")


def evaluate(pairs, min_run=1):
    """Compute the full metric suite over ``(predicted, reference)`` pairs."""
    pairs = [_pair(p, r) for p, r in pairs]
    if not pairs:
        raise ValueError("empty prediction set")
    warnings = []
    dice = {}
    for c, name in enumerate(CLASS_NAMES):
        scores = [s for s in (frame_dice(p, r, c) for p, r in pairs) if s is not None]
        dice[name] = {
            "mean": float(np.mean(scores)) if scores else None,
            "sd": float(np.std(scores)) if scores else None,
            "frames": len(scores),
        }
    aline, framewise = {}, {}
    for c, name in enumerate(CLASS_NAMES):
        aline[name], flag = aline_fscore(pairs, c, return_flag=True)
        if flag:
            warnings.append(f"A-line F-score for '{name}' undefined (no positives); reported as 1.0")
        framewise[name], flag = framewise_fscore(pairs, c, min_run, return_flag=True)
        if flag:
            warnings.append(f"frame-wise F-score for '{name}' undefined (no positives); reported as 1.0")
    percent, empty = confusion_matrix(pairs)
    for c in np.flatnonzero(empty):
        warnings.append(f"no reference A-lines of class '{CLASS_NAMES[c]}'; confusion row left at 0")
    return MetricsReport(
        dice=dice,
        balanced_accuracy=balanced_accuracy(pairs),
        aline_fscore=aline,
        framewise_fscore=framewise,
        confusion_percent=percent.tolist(),
        confusion_empty_rows=[bool(e) for e in empty],
        n_frames=len(pairs),
        n_alines=int(sum(r.size for _, r in pairs)),
        warnings=warnings,
    )
