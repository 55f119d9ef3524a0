import json

import numpy as np
import pytest
from PIL import Image

from arcnet import data, geometry
from arcnet.phantom import (
    MILD, NONE, SEVERE, PhantomConfig, PullbackDataset, Sector, generate_cohort, generate_phantom,
)


def quiet(**kw):
    """Phantom config with no random artifacts or thrombi."""
    base = dict(n_frames=3, frame_size=96, n_alines=32, artifact_rate=0.0, thrombus_probability=0.0)
    base.update(kw)
    return PhantomConfig(**base)


# ---------------------------------------------------------------- phantom


def test_zero_sectors_gives_all_none():
    ds = generate_phantom(quiet())
    assert ds.labels.shape == (3, 32)
    assert (ds.labels == NONE).all()


def test_severe_sector_labels_exact():
    cfg = quiet(n_frames=2, frame_size=128, n_alines=224, sectors=[Sector("severe", 50, 80, (0, 2))])
    ds = generate_phantom(cfg)
    expected = np.zeros(224, int)
    expected[50:80] = SEVERE
    assert (ds.labels == expected).all()


def test_overlap_resolves_to_more_severe():
    cfg = quiet(n_frames=1, sectors=[Sector("mild", 0, 10), Sector("severe", 5, 15)])
    y = generate_phantom(cfg).labels[0]
    assert y[:5].tolist() == [MILD] * 5
    assert y[5:15].tolist() == [SEVERE] * 10
    assert (y[15:] == NONE).all()


def test_wrapping_sector():
    y = generate_phantom(quiet(n_frames=1, sectors=[Sector("mild", 30, 35)])).labels[0]
    assert sorted(np.flatnonzero(y)) == [0, 1, 2, 30, 31]


def test_deterministic_given_seed():
    cfg = PhantomConfig(n_frames=6, frame_size=64, n_alines=32, artifact_rate=0.5, seed=11)
    a, b = generate_phantom(cfg), generate_phantom(cfg)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.labels, b.labels)
    other = generate_phantom(PhantomConfig(**{**cfg.to_dict(), "seed": 12}))
    assert not np.array_equal(a.frames, other.frames)


@pytest.mark.parametrize("sector", [
    Sector("mild", 5, 5), Sector("severe", -1, 4), Sector("mild", 0, 40),
    Sector("mild", 0, 4, (0, 9)), Sector("severe", 0, 4, attenuation=0.5), Sector(0, 0, 4),
])
def test_invalid_sectors_rejected(sector):
    with pytest.raises(ValueError):
        generate_phantom(quiet(sectors=[sector]))


def test_unknown_config_key_rejected():
    with pytest.raises(ValueError):
        PhantomConfig.from_dict({"n_frames": 3, "bogus": 1})


def wall_means(frame, boundary, n_alines, depth=0.08, rho=160):
    polar = geometry.to_polar(frame.astype(np.float64), rho, n_alines)
    radii = np.arange(rho) / (rho - 1)
    out = np.empty(n_alines)
    for j in range(n_alines):
        band = (radii >= boundary[j] + 0.01) & (radii < boundary[j] + depth)
        out[j] = polar[band, j].mean()
    return out


@pytest.mark.parametrize("seed", range(4))
def test_attenuation_ordering_on_wall(seed):
    n = 224
    cfg = PhantomConfig(
        n_frames=3, frame_size=352, n_alines=n, seed=seed, artifact_rate=0.0,
        thrombus_probability=0.0, blood_mixing=(0.1, 0.2),
        sectors=[Sector("severe", 20, 60, (0, 3), 0.4), Sector("mild", 120, 160, (0, 3), 0.2, 0.7),
                 Sector("mild", 180, 200, (1, 3), 0.0, 0.3, "bubble")],
    )
    ds, meta = generate_phantom(cfg, return_meta=True)
    for t in range(3):
        means = wall_means(ds.frames[t], meta["boundary"][t], n)
        y = ds.labels[t]
        # keep away from sector edges where one cell straddles two classes
        inner = np.convolve(np.r_[y[-1], y, y[0]], [1, 1, 1], "valid") == 3 * y
        severe = means[(y == SEVERE) & inner].mean()
        mild = means[(y == MILD) & inner].mean()
        clean = means[(y == NONE) & inner].mean()
        assert severe < mild < clean


def test_cohort_patients_and_independence():
    base = PhantomConfig(n_frames=2, frame_size=48, n_alines=16)
    cohort = generate_cohort(base, n_patients=3, pullbacks_per_patient=2, seed=5)
    assert [ds.patient_id for ds in cohort] == [f"patient{p:03d}" for p in (0, 0, 1, 1, 2, 2)]
    assert len({ds.pullback_id for ds in cohort}) == 6
    assert not np.array_equal(cohort[0].frames, cohort[1].frames)


# ---------------------------------------------------------------- files


def write_manifest(tmp_path, n_frames=(3, 2), n_alines=224, size=704):
    rng = np.random.default_rng(0)
    sets = []
    for i, n in enumerate(n_frames):
        frames = rng.random((n, size, size)).astype(np.float32)
        labels = rng.integers(0, 3, (n, n_alines))
        sets.append(PullbackDataset(f"pb{i}", f"pat{i}", frames, labels))
    return data.save_dataset(sets, tmp_path), sets


def test_round_trip_two_pullbacks(tmp_path):
    manifest, sets = write_manifest(tmp_path, size=352)
    loaded = data.load_dataset(manifest)
    assert [len(d) for d in loaded] == [3, 2]
    for a, b in zip(loaded, sets):
        assert np.array_equal(a.labels, b.labels)
        assert a.patient_id == b.patient_id
        assert np.abs(a.frames - b.frames).max() <= 0.5 / 255 + 1e-6


def test_native_frames_are_halved(tmp_path):
    manifest, _ = write_manifest(tmp_path, n_frames=(1,), size=704)
    (ds,) = data.load_dataset(manifest)
    assert ds.frames.shape == (1, 352, 352)


def test_bilinear_downsize_of_a_ramp(tmp_path):
    ramp = np.tile(np.linspace(0, 1, 704), (704, 1)).astype(np.float32)
    ds = PullbackDataset("pb", "p", ramp[None], np.zeros((1, 8), int))
    (loaded,) = data.load_dataset(data.save_dataset([ds], tmp_path))
    expected = np.linspace(0, 1, 352)
    assert np.abs(loaded.frames[0] - expected).max() <= 2 / 255


def test_short_label_row_names_frame(tmp_path):
    manifest, _ = write_manifest(tmp_path, n_frames=(3,), size=32)
    path = tmp_path / "pb0" / "labels.csv"
    rows = path.read_text().splitlines()
    rows[2] = ",".join(rows[2].split(",")[:223])
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(data.DataError, match="frame 2 has 223 labels"):
        data.load_dataset(manifest, size=32)


def test_bad_label_value_rejected(tmp_path):
    manifest, _ = write_manifest(tmp_path, n_frames=(2,), size=32)
    path = tmp_path / "pb0" / "labels.csv"
    rows = path.read_text().splitlines()
    rows[1] = "3," + rows[1].split(",", 1)[1]
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(data.DataError, match="frame 1"):
        data.load_dataset(manifest, size=32)


def test_missing_frame_rejected(tmp_path):
    manifest, _ = write_manifest(tmp_path, n_frames=(2,), size=32)
    (tmp_path / "pb0" / "frame_0001.png").unlink()
    with pytest.raises(data.DataError, match="frame 1"):
        data.load_dataset(manifest, size=32)


def test_frame_count_mismatch_rejected(tmp_path):
    manifest, _ = write_manifest(tmp_path, n_frames=(2,), size=32)
    spec = json.loads(manifest.read_text())
    spec["pullbacks"][0]["frames"].pop()
    manifest.write_text(json.dumps(spec))
    with pytest.raises(data.DataError, match="1 frames but 2 label rows"):
        data.load_dataset(manifest, size=32)


def test_missing_manifest(tmp_path):
    with pytest.raises(data.DataError):
        data.load_dataset(tmp_path / "nope.json")


def test_frames_are_8bit_png(tmp_path):
    write_manifest(tmp_path, n_frames=(1,), size=32)
    with Image.open(tmp_path / "pb0" / "frame_0000.png") as im:
        assert im.mode == "L"


# ---------------------------------------------------------------- splits


def test_split_keeps_patients_together():
    sets = [PullbackDataset(f"pb{i}", f"pat{i // 3}", np.zeros((1, 4, 4)), np.zeros((1, 8), int))
            for i in range(60)]
    train, val, test = data.split_by_patient(sets, seed=3)
    ids = [{d.patient_id for d in part} for part in (train, val, test)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert [len(i) for i in ids] == [14, 3, 3]
    assert len(train) + len(val) + len(test) == 60


# ---------------------------------------------------------------- stacks


def indexed_pullback(n=4, size=16, theta=8):
    frames = np.stack([np.full((size, size), (t + 1) / 10, np.float32) for t in range(n)])
    return PullbackDataset("pb", "p", frames, np.zeros((n, theta), int))


def test_stack_edge_replication():
    ds = indexed_pullback()
    cart, _ = data.make_input_stack(ds, 0, 8, 8)
    assert cart[:, 0, 0].tolist() == pytest.approx([0.1, 0.1, 0.2])
    cart, _ = data.make_input_stack(ds, 2, 8, 8)
    assert cart[:, 0, 0].tolist() == pytest.approx([0.2, 0.3, 0.4])
    cart, _ = data.make_input_stack(ds, 3, 8, 8)
    assert cart[:, 0, 0].tolist() == pytest.approx([0.3, 0.4, 0.4])
    with pytest.raises(IndexError):
        data.make_input_stack(ds, 4, 8, 8)


def test_full_size_stack_shapes():
    frames = np.random.default_rng(0).random((2, 352, 352)).astype(np.float32)
    ds = PullbackDataset("pb", "p", frames, np.zeros((2, 224), int))
    cart, polar = data.make_input_stack(ds, 1, 176, 224)
    assert cart.shape == (3, 352, 352) and polar.shape == (3, 176, 224)
    assert np.allclose(polar, geometry.to_polar(cart.astype(np.float64), 176, 224), atol=1e-6)


def test_stack_source_matches_make_input_stack():
    ds = generate_phantom(quiet(n_frames=4))
    src = data.StackSource(ds, 24, 32)
    for t in range(4):
        c1, p1 = src.stack(t)
        c2, p2 = data.make_input_stack(ds, t, 24, 32)
        assert np.array_equal(c1, c2)
        assert np.allclose(p1, p2, atol=1e-6)


def test_stack_source_theta_mismatch():
    with pytest.raises(data.DataError):
        data.StackSource(generate_phantom(quiet()), 24, 64)


# ---------------------------------------------------------------- augmentation


class FixedRng:
    """Stand-in generator returning scripted values for augment()."""

    def __init__(self, k, flip, scale):
        self.k, self.flip, self.scale = k, flip, scale

    def integers(self, lo, hi):
        return self.k

    def random(self):
        return 0.0 if self.flip else 1.0

    def uniform(self, lo, hi):
        return self.scale


def sample_pair(theta=32):
    ds = generate_phantom(quiet(n_frames=3, sectors=[Sector("severe", 3, 9, (0, 3))]))
    cart, polar = data.make_input_stack(ds, 1, 24, theta)
    return cart, polar, ds.labels[1]


def test_identity_augmentation():
    cart, polar, y = sample_pair()
    c, p, yy = data.augment(cart, polar, y, FixedRng(0, False, 1.0))
    assert np.array_equal(c, cart) and np.array_equal(p, polar) and np.array_equal(yy, y)


def test_rotation_shifts_polar_and_labels():
    cart, polar, y = sample_pair()
    c, p, yy = data.augment(cart, polar, y, FixedRng(5, False, 1.0))
    assert np.array_equal(yy, np.roll(y, 5))
    assert np.array_equal(p, np.roll(polar, 5, axis=-1))
    # the rotated Cartesian frame agrees with the rolled polar one up to interpolation
    again = geometry.to_polar(c.astype(np.float64), 24, 32)
    assert np.abs(again - p)[:, 1:-2].mean() < 0.05


def test_rotation_inverse_and_flip_involution():
    cart, polar, y = sample_pair()
    _, p1, y1 = data.augment(cart, polar, y, FixedRng(7, False, 1.0))
    _, p2, y2 = data.augment(cart, p1, y1, FixedRng(32 - 7, False, 1.0))
    assert np.array_equal(y2, y) and np.array_equal(p2, polar)
    c1, p1, y1 = data.augment(cart, polar, y, FixedRng(0, True, 1.0))
    c2, p2, y2 = data.augment(c1, p1, y1, FixedRng(0, True, 1.0))
    assert np.array_equal(y2, y) and np.array_equal(p2, polar) and np.array_equal(c2, cart)


def test_flip_matches_mirrored_polar():
    cart, polar, y = sample_pair()
    c, p, yy = data.augment(cart, polar, y, FixedRng(0, True, 1.0))
    assert yy.tolist() == [y[(-j) % 32] for j in range(32)]
    mirrored = geometry.to_polar(c.astype(np.float64), 24, 32)
    assert np.allclose(mirrored, p, atol=1e-5)


def test_brightness_clamps():
    cart, polar, y = sample_pair()
    c, p, _ = data.augment(cart, polar, y, FixedRng(0, False, 1.2))
    assert c.max() <= 1.0 and p.max() <= 1.0
    assert np.allclose(c, np.clip(cart * 1.2, 0, 1))


@pytest.mark.parametrize("seed", range(10))
def test_label_multiset_preserved(seed):
    cart, polar, y = sample_pair()
    _, _, yy = data.augment(cart, polar, y, np.random.default_rng(seed))
    assert np.array_equal(np.bincount(yy, minlength=3), np.bincount(y, minlength=3))


def test_sample_rng_is_keyed():
    a = data.sample_rng(1, 2, 3).random()
    assert a == data.sample_rng(1, 2, 3).random()
    assert a != data.sample_rng(1, 2, 4).random()
