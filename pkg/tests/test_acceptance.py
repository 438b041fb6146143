"""Acceptance suite: one or more tests per numbered criterion.

The terminal summary prints a PASS/FAIL line per criterion. Full-scale runs
carry the ``slow`` marker and can be skipped with ``-m "not slow"``.
"""

import time

import numpy as np
import pytest

from cishmap import cli, fcm, masking, model, nn, synthetic, tiling
from cishmap.fcm import FcmConfig
from cishmap.model import ArchSpec, TrainConfig
from cishmap.tiling import TileSpec

from gradcheck import STEP, TOL, check_layer, fill_small, numeric_grad, rel_error
from oracles import naive_fit, triangle_oracle

DTYPES = [np.float32, np.float64]


# -- 1: gradients ------------------------------------------------------------------

def _signed(rng, shape, dtype, margin=0.05):
    v = rng.standard_normal(shape)
    return (np.sign(v) * (np.abs(v) + margin)).astype(dtype)


def _layer_case(kind, rng, dtype):
    if kind == "linear":
        layer = nn.Linear(int(rng.integers(1, 7)), int(rng.integers(1, 7)), dtype)
        fill_small(layer, rng, dtype)
        return layer, rng.standard_normal((3, layer.n_in)).astype(dtype)
    if kind == "conv":
        layer = nn.Conv2d(int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                          pad=int(rng.integers(0, 2)), stride=int(rng.integers(1, 3)), dtype=dtype)
        fill_small(layer, rng, dtype)
        return layer, rng.standard_normal((2, layer.in_ch, 5, 6)).astype(dtype)
    if kind == "tconv":
        layer = nn.ConvTranspose2d(int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                                   pad=0, stride=int(rng.integers(1, 4)), dtype=dtype)
        fill_small(layer, rng, dtype)
        return layer, rng.standard_normal((2, layer.in_ch, 3, 4)).astype(dtype)
    if kind == "maxpool":
        w = int(rng.integers(1, 4))
        shape = (2, 2, 2 * w, 3 * w)
        # distinct values far apart relative to the step, so no max flips
        return nn.MaxPool2d(w), (rng.permutation(int(np.prod(shape))).reshape(shape) * 0.05).astype(dtype)
    make = {"relu": nn.ReLU, "leaky_relu": lambda: nn.LeakyReLU(0.01), "sigmoid": nn.Sigmoid}[kind]
    return make(), _signed(rng, (3, 7), dtype)


@pytest.mark.criterion(1)
def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    for dtype in DTYPES:
        for seed in range(20):
            for kind in ("linear", "conv", "maxpool", "tconv", "relu", "leaky_relu", "sigmoid"):
                rng = np.random.default_rng(seed)
                layer, x = _layer_case(kind, rng, dtype)
                check_layer(layer, x, rng, dtype)
            for name in ("mse", "mae"):
                rng = np.random.default_rng(seed)
                fn, grad = nn.LOSSES[name]
                target = rng.standard_normal((2, 3, 4)).astype(dtype)
                pred = target + _signed(rng, target.shape, dtype)
                err = rel_error(grad(pred, target), numeric_grad(lambda: fn(pred, target), pred, STEP[dtype]))
                assert err < TOL[dtype], (name, seed, dtype, err)
    assert time.perf_counter() - t0 < 60


# -- 2: architecture ---------------------------------------------------------------

@pytest.mark.criterion(2)
def test_shape_chain_and_block_count():
    net = model.build_model()
    enc = net.layer_shape_trace("encoder")
    dec = net.layer_shape_trace("decoder")
    assert net.input_shape == (1, 300, 300)
    assert (32, 5, 5) in enc
    assert enc[enc.index((32, 5, 5)):] == [(32, 5, 5), (800,), (100,), (25,), (2,)]
    assert dec[:3] == [(25,), (100,), (800,)]
    assert dec[-1] == (1, 300, 300)
    assert len(net.counted_blocks) == 14


# -- 3: learning -------------------------------------------------------------------

def _learn(side, seed=0):
    x, labels = synthetic.two_class_tiles(200, side, seed=seed)
    arch = ArchSpec() if side == 300 else ArchSpec.reduced(side)
    net = model.build_model(arch, seed=seed)
    t0 = time.perf_counter()
    history = model.train(net, x, TrainConfig(seed=seed))
    elapsed = time.perf_counter() - t0
    z = model.encode_tiles(net, x)
    centers = np.array([z[labels == k].mean(axis=0) for k in (0, 1)])
    pred = np.argmin(((z[:, None] - centers[None]) ** 2).sum(axis=-1), axis=1)
    return history, float((pred == labels).mean()), elapsed


@pytest.mark.criterion(3)
def test_learning_reduced_tiles(record_property):
    history, acc, elapsed = _learn(64)
    record_property("loss_ratio", history[0] / history[-1])
    record_property("accuracy", acc)
    assert len(history) == 70
    assert history[-1] < history[0] / 5
    assert acc >= 0.9
    assert elapsed < 120


@pytest.mark.slow
@pytest.mark.criterion(3)
def test_learning_full_tiles(record_property):
    history, acc, elapsed = _learn(300)
    record_property("loss_ratio", history[0] / history[-1])
    record_property("accuracy", acc)
    assert history[-1] < history[0] / 5
    assert acc >= 0.9
    assert elapsed < 1800


# -- 4, 5: fuzzy c-means -------------------------------------------------------------

@pytest.mark.criterion(4)
@pytest.mark.parametrize("m", [1.25, 1.8, 1.99])
@pytest.mark.parametrize("c", [2, 3, 7])
def test_fcm_matches_naive(c, m):
    rng = np.random.default_rng(100 * c + int(100 * m))
    x = rng.standard_normal((50, 2))
    u0 = fcm.initial_partition(50, c, seed=c)
    iters = 20
    res = fcm.fcm_fit(x, FcmConfig(c=c, m=m, tol=1e-300, max_iter=iters), u0=u0)
    assert res.iterations == iters
    centroids, u = naive_fit(x, u0, m, iters)
    np.testing.assert_allclose(res.u, u, rtol=0, atol=1e-6)
    np.testing.assert_allclose(res.centroids, centroids, rtol=0, atol=1e-6)


@pytest.mark.criterion(5)
@pytest.mark.parametrize("c", [2, 3, 7, 10])
def test_fpc_bounds(c):
    rng = np.random.default_rng(c)
    hard = np.eye(c)[rng.integers(0, c, 40)]
    assert abs(fcm.fpc(hard) - 1.0) <= 1e-12
    assert abs(fcm.fpc(np.full((40, c), 1.0 / c)) - 1.0 / c) <= 1e-12


@pytest.mark.criterion(5)
def test_fpc_falls_with_cluster_count():
    x = synthetic.gradient_cloud(300, seed=0)
    (_, f2), (_, f7) = fcm.sweep(x, [2, 7])
    assert f2 > f7


# -- 6: mask -----------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_mask_keeps_ellipse_and_drops_speck():
    slide = synthetic.make_slide(seed=0)
    mask, _ = masking.build_mask(masking.GrayImage(slide.pixels))
    assert mask.bits[slide.ellipse].mean() >= 0.99
    assert mask.bits[slide.speck].mean() == 0.0


# -- 7: tiling ---------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_tiling_counts():
    assert len(tiling.enumerate_positions(600, 600, TileSpec(300, 150))) == 9
    mask = np.zeros((600, 600), bool)
    mask[:, :300] = True
    tiles = tiling.extract_tiles(np.zeros((600, 600)), mask, TileSpec(300, 150, min_tissue_fraction=0.5))
    assert len(tiles) == 6


# -- 8, 11: pipeline ---------------------------------------------------------------

SMALL = ["--set", "tile.side=60", "--set", "tile.stride=30", "--set", "mask.erosion_radius=5",
         "--epochs", "3"]
OUTPUTS = ("latents.csv", "memberships.csv", "model.cae")


def _slide(tmp_path_factory, width, height):
    out = tmp_path_factory.mktemp("slide")
    assert cli.main(["gen-synthetic", "--out", str(out), "--width", str(width),
                     "--height", str(height), "--seed", "0"]) == 0
    return out / "slide.png"


def _two_runs(tmp_path_factory, slide, extra):
    runs = []
    for _ in range(2):
        work = tmp_path_factory.mktemp("run")
        assert cli.main(["pipeline", "--slide", str(slide), "--workdir", str(work)] + extra) == 0
        runs.append(work)
    return runs


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    return _two_runs(tmp_path_factory, _slide(tmp_path_factory, 640, 520), SMALL)


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    return _two_runs(tmp_path_factory, _slide(tmp_path_factory, 2400, 2000), [])


@pytest.mark.criterion(8)
def test_pipeline_is_byte_identical_small(small_runs):
    a, b = small_runs
    for name in OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_pipeline_is_byte_identical_full(full_runs):
    a, b = full_runs
    assert model.load_model(a / "model.cae").input_shape == (1, 300, 300)
    for name in OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def _check_ablation(work, extra):
    assert cli.main(["ablate-noconv", "--workdir", str(work)] + extra) == 0
    rows = (work / "noconv_loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss"
    history = [float(r.split(",")[1]) for r in rows[1:]]
    assert history and all(np.isfinite(history))
    svg = (work / "noconv_loss.svg").read_text()
    assert svg.count("<polyline") == 2


@pytest.mark.criterion(11)
def test_ablation_emits_loss_curve_small(small_runs):
    _check_ablation(small_runs[0], SMALL)


@pytest.mark.slow
@pytest.mark.criterion(11)
def test_ablation_emits_loss_curve_full(full_runs):
    _check_ablation(full_runs[0], [])


# -- 9: triangle threshold -----------------------------------------------------------

def _histogram(rng):
    bins = np.arange(256)
    h = np.zeros(256)
    for _ in range(int(rng.integers(1, 5))):
        h += rng.uniform(5, 3000) * np.exp(-0.5 * ((bins - rng.uniform(0, 255)) / rng.uniform(1, 50)) ** 2)
    h = np.floor(h + rng.uniform(0, 20, 256)).astype(int)
    lo, hi = sorted(int(v) for v in rng.integers(0, 256, 2))
    h[:lo] = 0
    h[hi + 1:] = 0
    if not h.any():
        h[lo] = 1
    return h


@pytest.mark.criterion(9)
def test_triangle_threshold_matches_exhaustive_search():
    for seed in range(100):
        h = _histogram(np.random.default_rng(seed))
        assert masking.triangle_threshold(h) == triangle_oracle(h), seed


# -- 10: persistence -----------------------------------------------------------------

@pytest.mark.criterion(10)
def test_save_load_encode_is_bit_identical(tmp_path):
    rng = np.random.default_rng(10)
    for i in range(10):
        slope = round(float(rng.uniform(0.01, 0.5)), 2)
        arch = ArchSpec(leaky_slope=slope) if i % 3 == 0 else ArchSpec.reduced(30, leaky_slope=slope)
        net = model.build_model(arch, seed=int(rng.integers(0, 2 ** 31)))
        tiles = rng.random((3,) + net.input_shape).astype(np.float32)
        before = model.encode_tiles(net, tiles)
        model.save_model(net, tmp_path / f"m{i}.cae")
        after = model.encode_tiles(model.load_model(tmp_path / f"m{i}.cae"), tiles)
        assert before.tobytes() == after.tobytes(), i
