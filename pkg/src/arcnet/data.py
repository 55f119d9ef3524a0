"""Pullback datasets on disk, 3-frame input stacks and training augmentation.

On-disk layout: a JSON manifest listing pullbacks. Each pullback has a patient
id, an ordered list of PNG frames and one CSV of A-line labels (one row per
frame, values 0/1/2). Paths in the manifest are relative to the manifest.
"""

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from arcnet import geometry
from arcnet.phantom import PullbackDataset

MANIFEST_FORMAT = "arcnet-manifest/1"


class DataError(ValueError):
    """Raised for malformed manifests, frames or label files."""


def _read_labels(path, n_alines):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != n_alines:
                raise DataError(f"{path}: frame {i} has {len(row)} labels, expected {n_alines}")
            try:
                values = [int(v) for v in row]
            except ValueError as exc:
                raise DataError(f"{path}: frame {i}: {exc}") from None
            if any(v not in (0, 1, 2) for v in values):
                raise DataError(f"{path}: frame {i} has labels outside {{0, 1, 2}}")
            rows.append(values)
    return np.array(rows, dtype=np.int64).reshape(len(rows), n_alines)


def _read_frame(path, size):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    if arr.shape != (size, size):
        arr = geometry.resize(arr, size, size)
    return arr.astype(np.float32)


def load_dataset(manifest, size=352):
    """Read every pullback in ``manifest``; frames are resized to ``size`` bilinearly."""
    manifest = Path(manifest)
    try:
        spec = json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from None
    if spec.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{manifest}: unsupported format {spec.get('format')!r}")
    n_alines = int(spec["n_alines"])
    root = manifest.parent
    out = []
    for entry in spec["pullbacks"]:
        labels = _read_labels(root / entry["labels"], n_alines)
        paths = entry["frames"]
        if len(paths) != len(labels):
            raise DataError(
                f"pullback {entry['id']}: {len(paths)} frames but {len(labels)} label rows"
            )
        frames = np.empty((len(paths), size, size), dtype=np.float32)
        for i, p in enumerate(paths):
            try:
                frames[i] = _read_frame(root / p, size)
            except OSError as exc:
                raise DataError(f"pullback {entry['id']}: frame {i}: {exc}") from None
        out.append(PullbackDataset(entry["id"], entry["patient_id"], frames, labels))
    return out


def save_dataset(datasets, directory):
    """Write pullbacks as PNG frames plus label CSVs and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    n_alines = None
    for ds in datasets:
        if n_alines is None:
            n_alines = ds.n_alines
        elif ds.n_alines != n_alines:
            raise DataError("all pullbacks must share the A-line count")
        sub = directory / ds.pullback_id
        sub.mkdir(exist_ok=True)
        names = []
        for i, frame in enumerate(ds.frames):
            name = f"{ds.pullback_id}/frame_{i:04d}.png"
            pixels = np.clip(np.rint(np.asarray(frame) * 255), 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(directory / name)
            names.append(name)
        label_name = f"{ds.pullback_id}/labels.csv"
        with open(directory / label_name, "w", newline="") as fh:
            csv.writer(fh).writerows(ds.labels.tolist())
        entries.append({
            "id": ds.pullback_id, "patient_id": ds.patient_id,
            "frames": names, "labels": label_name,
        })
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(
        {"format": MANIFEST_FORMAT, "n_alines": n_alines, "pullbacks": entries}, indent=1
    ))
    return manifest


def split_by_patient(datasets, fractions=(0.70, 0.15, 0.15), seed=0):
    """Partition pullbacks into train/val/test so no patient spans two sets."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    patients = sorted({ds.patient_id for ds in datasets})
    order = np.random.default_rng(seed).permutation(len(patients))
    bounds = np.rint(np.cumsum(fractions) * len(patients)).astype(int)
    groups = np.split(order, bounds[:-1])
    split = []
    for idx in groups:
        chosen = {patients[i] for i in idx}
        split.append([ds for ds in datasets if ds.patient_id in chosen])
    return tuple(split)


class StackSource:
    """Per-pullback access to (Cartesian, polar) 3-frame stacks.

    Polar transforms of every frame are computed once and cached, so building
    a stack is two slices.
    """

    def __init__(self, dataset, rho, theta, size=None):
        frames = np.asarray(dataset.frames, dtype=np.float64)
        if size is not None and frames.shape[1:] != (size, size):
            frames = geometry.resize(frames, size, size)
        if dataset.n_alines != theta:
            raise DataError(
                f"pullback {dataset.pullback_id} has {dataset.n_alines} A-lines, model expects {theta}"
            )
        self.dataset = dataset
        self.cart = frames.astype(np.float32)
        self.polar = geometry.to_polar(frames, rho, theta).astype(np.float32) if len(frames) else (
            np.zeros((0, rho, theta), np.float32)
        )

    def __len__(self):
        return len(self.cart)

    def stack(self, t):
        n = len(self.cart)
        if not 0 <= t < n:
            raise IndexError(f"frame {t} outside pullback of {n}")
        # edge replication at the first and last frame
        idx = [max(t - 1, 0), t, min(t + 1, n - 1)]
        return self.cart[idx], self.polar[idx]

    def labels(self, t):
        return self.dataset.labels[t]


def make_input_stack(dataset, t, rho, theta):
    """(Cartesian (3,H,W), polar (3,rho,theta)) stack for frame ``t``, scaled to [0, 1]."""
    frames = np.asarray(dataset.frames, dtype=np.float64)
    n = len(frames)
    if not 0 <= t < n:
        raise IndexError(f"frame {t} outside pullback of {n}")
    cart = frames[[max(t - 1, 0), t, min(t + 1, n - 1)]]
    return cart.astype(np.float32), geometry.to_polar(cart, rho, theta).astype(np.float32)


def augment(cart, polar, labels, rng, flip_p=0.5, brightness=(0.8, 1.2)):
    """Random A-line rotation, optional mirror and global brightness change.

    A rotation by ``k`` columns rotates the Cartesian frame by ``2*pi*k/theta``,
    rolls polar columns by ``k`` and rolls labels by ``k``. Mirroring flips
    Cartesian rows and maps column ``j`` to ``(theta - j) % theta``.
    """
    theta = polar.shape[-1]
    k = int(rng.integers(0, theta))
    if k:
        cart = geometry.rotate(cart, 2 * np.pi * k / theta).astype(np.float32)
        polar = np.roll(polar, k, axis=-1)
        labels = np.roll(labels, k)
    if rng.random() < flip_p:
        cart = cart[..., ::-1, :]
        mirror = (-np.arange(theta)) % theta
        polar = polar[..., mirror]
        labels = labels[mirror]
    scale = rng.uniform(*brightness)
    cart = np.clip(cart * scale, 0.0, 1.0).astype(np.float32)
    polar = np.clip(polar * scale, 0.0, 1.0).astype(np.float32)
    return np.ascontiguousarray(cart), np.ascontiguousarray(polar), np.ascontiguousarray(labels)


def sample_rng(seed, *keys):
    """Independent generator for one (seed, epoch, batch, slot) coordinate."""
    return np.random.default_rng([seed, *[int(k) for k in keys]])

