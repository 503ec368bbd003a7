import numpy as np
import pytest
from scipy import stats

from illumdesign.errors import DomainError, ShapeError
from illumdesign.imaging import (
    CameraSensitivity, FilePatternBank, GaussianPattern, NoiseModel, ZeroPattern, add_noise,
    band_scale_factors, counter_normal, counter_uniform, default_camera, derive_key,
    poisson_counter, read_camera, read_f32, read_png16, render, split_vis, write_camera,
    write_f32, write_png16,
)
from illumdesign.spectra import N_BANDS, VIS_MASK


def naive_render(cube, spectrum, rows):
    _, w, h = cube.shape
    out = np.zeros((3, w, h))
    for c in range(3):
        for x in range(w):
            for y in range(h):
                out[c, x, y] = sum(cube[n, x, y] * spectrum[n] * rows[c, n] for n in range(N_BANDS))
    return out


def test_render_matches_loops(rng, camera):
    cube = rng.uniform(size=(N_BANDS, 4, 3))
    spec = rng.uniform(size=N_BANDS)
    np.testing.assert_allclose(render(cube, spec, camera), naive_render(cube, spec, camera.rows),
                               rtol=1e-12)


def test_render_shapes(camera):
    with pytest.raises(ShapeError):
        render(np.ones((47, 2, 2)), np.ones(N_BANDS), camera)
    with pytest.raises(ShapeError):
        render(np.ones((N_BANDS, 2, 2)), np.ones(5), camera)


def test_split_vis_and_scale_factors():
    s = np.arange(N_BANDS, dtype=float) + 1
    v = split_vis(s)
    assert np.all(v[~VIS_MASK] == 0) and np.array_equal(v[VIS_MASK], s[VIS_MASK])
    assert s[0] == 1  # input untouched
    hat = s.copy()
    hat[VIS_MASK] *= 0.5
    xv, xn = band_scale_factors(s, hat, 0.0 + 1e-300)
    assert xv == pytest.approx(0.5)
    assert xn == pytest.approx(hat.sum() / s.sum())


def test_default_camera_shape(camera):
    assert camera.rows.shape == (3, N_BANDS)
    peaks = [np.argmax(r[VIS_MASK]) for r in camera.rows]
    assert peaks == [18, 12, 4]  # 600, 540, 460 nm
    np.testing.assert_allclose(camera.rows[0, -5:], camera.rows[2, -5:], atol=1e-8)
    with pytest.raises(DomainError):
        CameraSensitivity(-np.ones((3, N_BANDS)))


def test_camera_csv_round_trip(tmp_path, camera):
    write_camera(tmp_path / "cam.csv", camera)
    assert np.array_equal(read_camera(tmp_path / "cam.csv").rows, camera.rows)


def test_counter_rng_properties():
    key = derive_key(7, 1, 2)
    assert key == derive_key(7, 1, 2) and key != derive_key(7, 2, 1) and key != derive_key(8, 1, 2)
    c = np.arange(200_000, dtype=np.uint64)
    u = counter_uniform(key, c, 0)
    assert 0 < u.min() and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    z = counter_normal(key, c)
    assert stats.kstest(z, "norm").pvalue > 1e-3
    # element i does not depend on how many elements are drawn
    np.testing.assert_array_equal(counter_uniform(key, c[100:110], 0), u[100:110])


@pytest.mark.parametrize("lam", [0.0, 0.3, 4.0, 9.9, 10.5, 80.0, 1e4])
def test_poisson_moments(lam):
    n = 100_000
    k = poisson_counter(np.full(n, lam), derive_key(3, int(lam * 10)), np.arange(n, dtype=np.uint64))
    assert np.all(k == np.round(k)) and np.all(k >= 0)
    if lam == 0:
        assert np.all(k == 0)
        return
    se_mean = np.sqrt(lam / n)
    assert abs(k.mean() - lam) < 4 * se_mean
    se_var = lam * np.sqrt(2.0 / n) * np.sqrt(1 + 1 / (2 * lam))
    assert abs(k.var() - lam) < 4 * se_var


def test_poisson_distribution_small_mean():
    n = 50_000
    k = poisson_counter(np.full(n, 3.0), 99, np.arange(n, dtype=np.uint64)).astype(int)
    obs = np.bincount(k, minlength=12)[:12]
    exp = stats.poisson.pmf(np.arange(12), 3.0) * n
    assert stats.chisquare(obs[:10], exp[:10] * obs[:10].sum() / exp[:10].sum()).pvalue > 1e-3


def test_add_noise_deterministic_and_parallel(rng):
    img = rng.uniform(0, 2, size=(3, 17, 9))
    m = NoiseModel(1 / 64, GaussianPattern(0.01), seed=5)
    a = add_noise(img, 0.7, m, (1, 2))
    assert np.array_equal(a, add_noise(img, 0.7, m, (1, 2)))
    assert np.array_equal(a, add_noise(img, 0.7, m, (1, 2), workers=4))
    assert not np.array_equal(a, add_noise(img, 0.7, m, (1, 3)))
    assert not np.array_equal(a, add_noise(img, 0.7, NoiseModel(1 / 64, GaussianPattern(0.01), 6), (1, 2)))


def test_add_noise_exact_without_noise_at_zero():
    m = NoiseModel(1 / 255, ZeroPattern())
    assert np.all(add_noise(np.zeros((3, 4, 4)), 1.0, m) == 0)
    assert np.all(add_noise(np.ones((3, 4, 4)), 0.0, m) == 0)


def test_add_noise_domain():
    m = NoiseModel()
    with pytest.raises(DomainError):
        add_noise(np.ones((3, 2, 2)), 1.5, m)
    with pytest.raises(DomainError):
        add_noise(-np.ones((3, 2, 2)), 1.0, m)
    with pytest.raises(ShapeError):
        add_noise(np.ones((2, 2)), 1.0, m)
    with pytest.raises(DomainError):
        NoiseModel(kappa=0.0)


def test_file_pattern_bank(tmp_path):
    pats = np.arange(2 * 3 * 6 * 5, dtype="<f4").reshape(2, 3, 6, 5) / 100
    pats.tofile(tmp_path / "p.f32")
    bank = FilePatternBank(tmp_path / "p.f32", 6, 5)
    s = bank.sample((3, 4, 4), 12345)
    assert s.shape == (3, 4, 4)
    assert np.array_equal(s, bank.sample((3, 4, 4), 12345))
    assert bank.variance == pytest.approx(pats.astype(float).var())
    with pytest.raises(ShapeError):
        bank.sample((3, 7, 4), 1)
    with pytest.raises(ShapeError):
        FilePatternBank(tmp_path / "p.f32", 7, 5)


def test_export_round_trip(tmp_path, rng):
    img = rng.uniform(-0.1, 1.1, size=(3, 7, 5))
    write_f32(tmp_path / "a.f32", img)
    np.testing.assert_array_equal(read_f32(tmp_path / "a.f32", 7, 5), img.astype(np.float32))
    write_png16(tmp_path / "a.png", img)
    back = read_png16(tmp_path / "a.png")
    np.testing.assert_allclose(back, np.clip(img, 0, 1), atol=0.5 / 65535 + 1e-12)
