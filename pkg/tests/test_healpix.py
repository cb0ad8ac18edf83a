import numpy as np
import pytest

from sdfabs import healpix


@pytest.mark.parametrize("nside", [1, 2, 4, 8, 16])
def test_pixel_centers_round_trip(nside):
    pix = np.arange(healpix.npix(nside))
    z, phi = healpix.pix2ang_nest(nside, pix)
    again = healpix.ang2pix_nest(nside, z, phi)
    np.testing.assert_array_equal(again, pix)


@pytest.mark.parametrize("nside", [1, 2, 4])
def test_every_direction_maps_to_valid_pixel(nside):
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 1, size=20000)
    phi = rng.uniform(0, 2 * np.pi, size=20000)
    pix = healpix.ang2pix_nest(nside, z, phi)
    assert pix.min() >= 0
    assert pix.max() < healpix.npix(nside)


def test_nested_hierarchy_prefix_property():
    rng = np.random.default_rng(1)
    z = rng.uniform(-1, 1, size=50000)
    phi = rng.uniform(0, 2 * np.pi, size=50000)
    coarse = healpix.ang2pix_nest(2, z, phi)
    fine = healpix.ang2pix_nest(4, z, phi)
    np.testing.assert_array_equal(fine >> 2, coarse)


@pytest.mark.parametrize("nside", [1, 2, 4])
def test_equal_area_occupancy(nside):
    rng = np.random.default_rng(2)
    n = 400 * healpix.npix(nside)
    z = rng.uniform(-1, 1, size=n)
    phi = rng.uniform(0, 2 * np.pi, size=n)
    counts = np.bincount(healpix.ang2pix_nest(nside, z, phi), minlength=healpix.npix(nside))
    expected = n / healpix.npix(nside)
    # ~5 sigma band per pixel would be ~0.35; equal-area pixels stay well inside
    assert counts.min() > 0.7 * expected
    assert counts.max() < 1.3 * expected


def test_centers_lie_on_expected_rings():
    z, _ = healpix.pix2ang_nest(1, np.arange(12))
    np.testing.assert_allclose(np.sort(z), np.sort([2 / 3] * 4 + [0.0] * 4 + [-2 / 3] * 4))


def test_rejects_bad_nside_and_pixels():
    with pytest.raises(ValueError):
        healpix.ang2pix_nest(3, 0.0, 0.0)
    with pytest.raises(ValueError):
        healpix.pix2ang_nest(2, np.array([healpix.npix(2)]))
