import numpy as np
import pytest
from scipy import ndimage

from ddnet.data import (CUP, RIM, Sample, SynthParams, crop_od_window, cup_region, disc_region,
                        generate, generate_one, hflip, load_dataset, load_mask, load_pgm,
                        load_ppm, read_manifest, region_centroid, save_mask, save_pgm, save_ppm,
                        scale_about_center, stack_batch, write_dataset)
from ddnet.errors import ContractError, DataError
from ddnet.metrics import vertical_cdr


@pytest.fixture(scope="module")
def batch():
    return generate(SynthParams(), 100)


def test_generation_is_deterministic():
    a, b = generate_one(SynthParams(), 17), generate_one(SynthParams(), 17)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.true_cdr == b.true_cdr and a.name == "synth_000017"


def test_different_seeds_differ():
    assert not np.array_equal(generate_one(SynthParams(), 1).mask,
                              generate_one(SynthParams(), 2).mask)


def test_image_range_and_dtypes(batch):
    for s in batch[:10]:
        assert s.image.shape == (3, 128, 128) and s.image.dtype == np.float64
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert set(np.unique(s.mask)) == {0, RIM, CUP}


def test_cup_inside_disc_and_away_from_border(batch):
    for s in batch:
        assert np.all(disc_region(s.mask)[cup_region(s.mask)])
        # a background ring survives all around the image
        assert not disc_region(s.mask)[[0, -1]].any()
        assert not disc_region(s.mask)[:, [0, -1]].any()


def test_regions_are_connected(batch):
    four = ndimage.generate_binary_structure(2, 1)
    for s in batch[:30]:
        for region in (disc_region(s.mask), cup_region(s.mask), s.mask == 0):
            assert ndimage.label(region, four)[1] == 1


def test_true_cdr_matches_rasterised_mask(batch):
    errs = [abs(vertical_cdr(s.mask) - s.true_cdr) for s in batch]
    assert max(errs) <= 0.05


def test_generate_count_must_be_positive():
    with pytest.raises(ContractError):
        generate(SynthParams(), 0)


def test_train_and_test_seed_ranges_disjoint():
    train = {s.seed for s in generate(SynthParams(size=32, seed=0), 5)}
    test = {s.seed for s in generate(SynthParams(size=32, seed=100000), 5)}
    assert not train & test


# -- augmentation ---------------------------------------------------------------------

def test_scale_grows_area(batch):
    s = batch[0]
    before = disc_region(s.mask).sum()
    after = disc_region(scale_about_center(s, 1.1).mask).sum()
    assert after / before == pytest.approx(1.21, abs=0.03)


def test_unit_scale_is_identity(batch):
    s = batch[1]
    t = scale_about_center(s, 1.0)
    np.testing.assert_array_equal(t.mask, s.mask)
    np.testing.assert_allclose(t.image, s.image, atol=1e-12)


def test_flip_twice_is_identity(batch):
    s = batch[2]
    t = hflip(hflip(s))
    np.testing.assert_array_equal(t.image, s.image)
    np.testing.assert_array_equal(t.mask, s.mask)
    np.testing.assert_array_equal(hflip(s).mask, s.mask[:, ::-1])


# -- OD window ------------------------------------------------------------------------

def test_region_centroid():
    r = np.zeros((5, 5), bool)
    r[1, 1] = r[3, 3] = True
    assert region_centroid(r) == (2.0, 2.0)
    with pytest.raises(DataError):
        region_centroid(np.zeros((3, 3), bool))


def test_crop_full_window_is_identity(batch):
    s = batch[3]
    c = crop_od_window(s, 128)
    np.testing.assert_array_equal(c.mask, s.mask)


def test_crop_centres_off_centre_disc():
    mask = np.zeros((64, 64), np.uint8)
    mask[40:50, 10:20] = RIM
    mask[44:46, 14:16] = CUP
    s = Sample(np.zeros((3, 64, 64)), mask, 0.2)
    c = crop_od_window(s, 32)
    assert c.mask.shape == (32, 32) and c.image.shape == (3, 32, 32)
    # disc fully inside, labels preserved, centroid near the middle
    assert (c.mask == RIM).sum() == (mask == RIM).sum()
    assert (c.mask == CUP).sum() == 4
    cy, cx = region_centroid(disc_region(c.mask))
    assert abs(cy - 15.5) <= 1 and abs(cx - 15.5) <= 1


def test_crop_window_too_large():
    s = Sample(np.zeros((3, 8, 8)), np.ones((8, 8), np.uint8), 0.0)
    with pytest.raises(ContractError):
        crop_od_window(s, 9)


# -- netpbm I/O -----------------------------------------------------------------------

def test_pgm_layout(tmp_path):
    p = tmp_path / "x.pgm"
    save_pgm(p, np.array([[0, 127], [255, 3]]))
    assert p.read_bytes() == b"P5\n2 2\n255\n\x00\x7f\xff\x03"


def test_mask_round_trip(tmp_path, batch):
    p = tmp_path / "m.pgm"
    save_mask(p, batch[0].mask)
    np.testing.assert_array_equal(load_mask(p), batch[0].mask)
    assert set(np.unique(load_pgm(p))) == {0, 127, 255}


def test_mask_rejects_foreign_level(tmp_path):
    p = tmp_path / "bad.pgm"
    save_pgm(p, np.array([[0, 130], [255, 0]]))
    with pytest.raises(DataError, match="130.*byte 12"):
        load_mask(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n2 x\n255\n\x00\x00\x00\x00")
    with pytest.raises(DataError, match="byte 5"):
        load_pgm(p)
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(DataError, match="magic"):
        load_pgm(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(DataError, match="byte 11"):
        load_ppm(p)


def test_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n1 2\n255\n\x05\x06")
    np.testing.assert_array_equal(load_pgm(p), [[5], [6]])


def test_ppm_quantisation_round_trip(tmp_path, batch):
    p = tmp_path / "i.ppm"
    save_ppm(p, batch[0].image)
    assert np.abs(load_ppm(p) - batch[0].image).max() <= 0.5 / 255 + 1e-12


def test_dataset_round_trip(tmp_path):
    samples = generate(SynthParams(size=32, disc_radius=(0.3, 0.35)), 3)
    write_dataset(tmp_path / "d", samples)
    rows = read_manifest(tmp_path / "d")
    assert [r["filename"] for r in rows] == [s.name for s in samples]
    back = load_dataset(tmp_path / "d")
    for a, b in zip(samples, back):
        np.testing.assert_array_equal(a.mask, b.mask)
        assert abs(a.true_cdr - b.true_cdr) < 1e-9 and a.seed == b.seed
    images, masks = stack_batch(back)
    assert images.shape == (3, 3, 32, 32) and masks.shape == (3, 32, 32)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_dataset(tmp_path)
