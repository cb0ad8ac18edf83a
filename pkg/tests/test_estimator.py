import numpy as np
import pytest

from sdfabs import bake, sphere
from sdfabs.errors import EmptyPointSet
from sdfabs.estimator import (
    Estimate,
    EstimateConfig,
    InitConfig,
    RefineConfig,
    View,
    backproject,
    estimate,
    init_grid_scoring,
    loss_depth,
    loss_sdf,
    loss_total,
    refine,
)
from sdfabs.geometry import PinholeCamera, Pose
from sdfabs.render import render
from sdfabs.rotation import (
    from_axis_angle,
    geodesic_angle,
    multiply,
    normalize,
    sample_uniform,
    tangent_project,
)
from sdfabs.shapespace import decode
from sdfabs.so3grid import OrientationGrid
from sdfabs.synth import multiview_scene, sample_scene
from sdfabs.volume import extract_surface_points

from conftest import TEST_CAMERA


def perturbed(gt, rng, d_pos=0.0, d_angle=0.0, d_scale=0.0):
    axis = rng.normal(size=3)
    offset = rng.normal(size=3)
    offset *= d_pos / np.linalg.norm(offset)
    q = multiply(gt.orientation, from_axis_angle(axis, d_angle))
    return Estimate(
        position=gt.position + offset,
        orientation=normalize(q),
        scale=gt.scale * (1.0 + d_scale),
        shape=gt.shape,
    )


def test_backproject_principal_point():
    cam = PinholeCamera(fx=100.0, fy=100.0, cx=9.5, cy=9.5, width=20, height=20)
    depth = np.zeros((20, 20))
    mask = np.zeros((20, 20), dtype=bool)
    depth[9, 9] = 1.0
    mask[9, 9] = True
    view = View(depth=depth, mask=mask, cam=cam, cam_pose=Pose.identity())
    np.testing.assert_allclose(backproject(view), [[0.0, 0.0, 1.0]], atol=1e-12)


def test_backproject_rendered_sphere_lies_on_surface():
    vol = bake(sphere(0.3), 64)
    cam = TEST_CAMERA
    pose = Pose(np.array([0.0, 0.0, 0.5]), np.array([1.0, 0, 0, 0]))
    scale = 0.2
    depth, _ = render(vol, pose, scale, cam)
    view = View(depth=depth, mask=depth > 0, cam=cam, cam_pose=Pose.identity())
    pts = backproject(view)
    radii = np.linalg.norm(pts - pose.position, axis=1)
    assert np.abs(radii - 0.3 * scale).max() <= 2.0 * scale / 64


def test_backproject_empty_raises():
    cam = PinholeCamera(fx=100.0, fy=100.0, cx=9.5, cy=9.5, width=20, height=20)
    view = View(np.zeros((20, 20)), np.zeros((20, 20), dtype=bool), cam, Pose.identity())
    with pytest.raises(EmptyPointSet):
        backproject(view)


@pytest.fixture(scope="module")
def cup_scene(cups_category):
    cfg, space = cups_category
    rng = np.random.default_rng(5)
    return space, multiview_scene(cfg, space, 3, rng)


def _loss_from_points(est, space, world_pts, vol):
    from sdfabs.rotation import rotate_inv
    from sdfabs.volume import sample

    p = rotate_inv(est.orientation, world_pts - est.position) / est.scale
    return float(np.abs(sample(vol, p).value).mean())


def test_loss_sdf_on_surface_and_rendered_points(cup_scene):
    space, rec = cup_scene
    r = space.resolution
    # production path: back-projected depth pixels of the ground-truth render
    # sit on the renderer's hit level (half a voxel), well inside 1.5 voxels
    per_view = [loss_sdf(rec.gt, space, [v]).value for v in rec.views]
    assert max(per_view) <= 1.5 / r
    # analytic path: exact zero-level points through the same transform chain
    vol = decode(space, rec.gt.shape)
    pts = extract_surface_points(vol)
    world = Pose(rec.gt.position, rec.gt.orientation).transform(pts * rec.gt.scale)
    assert _loss_from_points(rec.gt, space, world, vol) <= 1.5 / r


def test_loss_sdf_increases_when_translated(cup_scene):
    space, rec = cup_scene
    base = loss_sdf(rec.gt, space, rec.views).value
    moved = Estimate(
        position=rec.gt.position + np.array([0.01, 0.0, 0.0]),
        orientation=rec.gt.orientation,
        scale=rec.gt.scale,
        shape=rec.gt.shape,
    )
    assert loss_sdf(moved, space, rec.views).value > base


def test_loss_sdf_gradients_match_fd(cup_scene):
    space, rec = cup_scene
    rng = np.random.default_rng(6)
    est = perturbed(rec.gt, rng, d_pos=0.008, d_angle=np.deg2rad(6), d_scale=0.05)
    res = loss_sdf(est, space, rec.views)
    h = 1e-5

    def value_at(e):
        return loss_sdf(e, space, rec.views).value

    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd = (
            value_at(Estimate(est.position + e, est.orientation, est.scale, est.shape))
            - value_at(Estimate(est.position - e, est.orientation, est.scale, est.shape))
        ) / (2 * h)
        assert res.gradients.position[axis] == pytest.approx(fd, rel=1e-2, abs=1e-8)
    fd = (
        value_at(Estimate(est.position, est.orientation, est.scale * np.exp(h), est.shape))
        - value_at(Estimate(est.position, est.orientation, est.scale * np.exp(-h), est.shape))
    ) / (2 * h)
    assert res.gradients.log_scale == pytest.approx(fd, rel=1e-2, abs=1e-8)
    for k in range(space.latent_dim):
        e = np.zeros(space.latent_dim)
        e[k] = h
        fd = (
            value_at(Estimate(est.position, est.orientation, est.scale, est.shape + e))
            - value_at(Estimate(est.position, est.orientation, est.scale, est.shape - e))
        ) / (2 * h)
        assert res.gradients.shape[k] == pytest.approx(fd, rel=1e-2, abs=1e-7)


def test_loss_depth_self_consistency(cup_scene):
    space, rec = cup_scene
    res = loss_depth(rec.gt, space, rec.views)
    eps_hit = rec.gt.scale * 0.5 / space.resolution
    assert res.value <= 2 * eps_hit * len(rec.views)
    assert not res.degenerate


def test_loss_depth_degenerate_when_object_elsewhere(cup_scene):
    space, rec = cup_scene
    away = Estimate(
        position=rec.gt.position + np.array([0.0, 0.0, -0.25]),
        orientation=rec.gt.orientation,
        scale=rec.gt.scale,
        shape=rec.gt.shape,
    )
    res = loss_depth(away, space, [rec.views[0]])
    assert res.degenerate
    assert res.value == 0.0
    assert not res.gradients.position.any()
    assert not res.gradients.shape.any()


def test_loss_depth_position_gradient_fd(cup_scene):
    # The valid set (observed AND rendered) churns at the silhouette under
    # finite-difference probes, which adds jump noise on top of the smooth
    # per-pixel gradient; the comparison is therefore statistical.  The
    # combined loss meets the tight 5e-2 budget in the acceptance suite
    # because the point-to-surface term dominates with exact gradients.
    space, rec = cup_scene
    rng = np.random.default_rng(7)
    h = 1e-4
    rels = []
    signs = []
    for _ in range(8):
        est = perturbed(
            rec.gt,
            rng,
            d_pos=rng.uniform(0.002, 0.006),
            d_angle=np.deg2rad(rng.uniform(2, 6)),
            d_scale=rng.uniform(-0.04, 0.04),
        )
        res = loss_depth(est, space, rec.views)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            fd = (
                loss_depth(
                    Estimate(est.position + e, est.orientation, est.scale, est.shape),
                    space,
                    rec.views,
                ).value
                - loss_depth(
                    Estimate(est.position - e, est.orientation, est.scale, est.shape),
                    space,
                    rec.views,
                ).value
            ) / (2 * h)
            a = res.gradients.position[axis]
            m = max(abs(a), abs(fd))
            if m < 1e-7:
                signs.append(True)
                continue
            rels.append(abs(a - fd) / m)
            signs.append(np.sign(a) == np.sign(fd))
    assert np.median(rels) <= 0.35
    assert np.mean(signs) >= 0.9


def test_loss_total_reductions_and_additivity(cup_scene):
    space, rec = cup_scene
    est = rec.gt
    sdf_only = loss_total(est, space, rec.views, RefineConfig(lambda_depth=0.0))
    assert sdf_only.value == pytest.approx(loss_sdf(est, space, rec.views).value)
    depth_only = loss_total(est, space, rec.views, RefineConfig(lambda_sdf=0.0))
    assert depth_only.value == pytest.approx(loss_depth(est, space, rec.views).value)

    cfg = RefineConfig()
    v12 = loss_total(est, space, rec.views[:2], cfg)
    v1 = loss_total(est, space, [rec.views[0]], cfg)
    v2 = loss_total(est, space, [rec.views[1]], cfg)
    assert v12.value == pytest.approx(v1.value + v2.value, abs=1e-12)
    np.testing.assert_allclose(
        v12.gradients.position, v1.gradients.position + v2.gradients.position, atol=1e-12
    )
    np.testing.assert_allclose(
        v12.gradients.shape, v1.gradients.shape + v2.gradients.shape, atol=1e-12
    )

    two_same = loss_total(est, space, [rec.views[0], rec.views[0]], cfg)
    assert two_same.value == pytest.approx(2 * v1.value, rel=1e-12)


def test_init_distribution_is_normalized(cup_scene, cups_category):
    cfg, space = cups_category
    _, rec = cup_scene
    grid = OrientationGrid(1)
    init = init_grid_scoring(rec.views, space, grid, InitConfig(scale_bounds=cfg.scale_range))
    o = init.orientation_distribution
    assert o.sum() == pytest.approx(1.0, abs=1e-6)
    assert (o >= 0).all()
    assert init.best_cell == int(o.argmax())
    assert 0 < init.estimate.scale


def test_init_argmax_invariant_under_beta(cup_scene, cups_category):
    cfg, space = cups_category
    _, rec = cup_scene
    grid = OrientationGrid(1)
    a = init_grid_scoring(rec.views, space, grid, InitConfig(beta=50.0, scale_bounds=cfg.scale_range))
    b = init_grid_scoring(rec.views, space, grid, InitConfig(beta=150.0, scale_bounds=cfg.scale_range))
    assert a.best_cell == b.best_cell
    assert not np.allclose(a.orientation_distribution, b.orientation_distribution)


def test_init_orientation_accuracy_on_asymmetric_category(clubs_category):
    # With confidence-based view selection over 3 views, the initializer
    # identifies the orientation of this unambiguous category to within the
    # level-1 cell circumradius (~30 degrees) in >= 80% of scenes.  A single
    # arbitrary view is markedly weaker; the distribution's confidence is
    # what makes selection work.
    cfg, space = clubs_category
    grid = OrientationGrid(1)
    rng = np.random.default_rng(31)
    scenes = 50
    best_hits = 0
    first_hits = 0
    for _ in range(scenes):
        rec = multiview_scene(cfg, space, 3, rng)
        best = init_grid_scoring(
            rec.views, space, grid,
            InitConfig(scale_bounds=cfg.scale_range, view_selection="best"),
        )
        first = init_grid_scoring(
            rec.views, space, grid, InitConfig(scale_bounds=cfg.scale_range)
        )
        if geodesic_angle(best.estimate.orientation, rec.gt.orientation) <= np.deg2rad(30):
            best_hits += 1
        if geodesic_angle(first.estimate.orientation, rec.gt.orientation) <= np.deg2rad(30):
            first_hits += 1
    assert best_hits >= 0.8 * scenes
    assert first_hits >= 0.4 * scenes


def test_init_symmetric_category_has_higher_entropy(cups_category, bumpbox_category):
    cup_cfg, cup_space = cups_category
    box_cfg, box_space = bumpbox_category
    grid = OrientationGrid(1)

    def mean_entropy(cfg, space, seed):
        rng = np.random.default_rng(seed)
        ent = []
        for _ in range(5):
            rec = multiview_scene(cfg, space, 1, rng)
            o = init_grid_scoring(
                rec.views, space, grid, InitConfig(scale_bounds=cfg.scale_range)
            ).orientation_distribution
            ent.append(-(o * np.log(np.maximum(o, 1e-300))).sum())
        return np.mean(ent)

    assert mean_entropy(cup_cfg, cup_space, 8) > mean_entropy(box_cfg, box_space, 9)


def test_refine_stationary_at_ground_truth(cup_scene):
    space, rec = cup_scene
    final, trace = refine(rec.views, rec.gt, space, RefineConfig(iterations=20))
    assert np.linalg.norm(final.position - rec.gt.position) <= 1e-3
    assert geodesic_angle(final.orientation, rec.gt.orientation) <= np.deg2rad(1.0)
    assert abs(final.scale / rec.gt.scale - 1.0) <= 0.01
    assert trace.min() <= trace[0]


def test_refine_rejects_zero_iterations(cup_scene):
    space, rec = cup_scene
    with pytest.raises(ValueError):
        refine(rec.views, rec.gt, space, RefineConfig(iterations=0))


def test_refine_single_iteration_updates_once(cup_scene):
    space, rec = cup_scene
    rng = np.random.default_rng(10)
    start = perturbed(rec.gt, rng, d_pos=0.01, d_angle=np.deg2rad(8))
    final, trace = refine(rec.views, start, space, RefineConfig(iterations=1))
    assert len(trace) == 2
    moved = np.linalg.norm(final.position - start.position)
    assert (moved > 0) or (final is start)  # keep-best may return the start


def test_refine_recovers_from_perturbation(clubs_category):
    cfg, space = clubs_category
    rng = np.random.default_rng(12)
    ok = 0
    runs = 10
    for _ in range(runs):
        rec = multiview_scene(cfg, space, 3, rng)
        start = perturbed(rec.gt, rng, d_pos=0.02, d_angle=np.deg2rad(10), d_scale=0.10)
        final, _ = refine(rec.views, start, space, RefineConfig(iterations=50))
        pos_err = np.linalg.norm(final.position - rec.gt.position)
        ang_err = geodesic_angle(final.orientation, rec.gt.orientation)
        if pos_err < 5e-3 and ang_err < np.deg2rad(5.0):
            ok += 1
    assert ok >= 0.8 * runs


def test_estimate_composes_exactly(cup_scene, cups_category):
    cfg, space = cups_category
    _, rec = cup_scene
    grid = OrientationGrid(1)
    ecfg = EstimateConfig(
        init=InitConfig(scale_bounds=cfg.scale_range),
        refine=RefineConfig(iterations=5),
    )
    final, init, trace = estimate(rec.views, space, grid, ecfg)
    init2 = init_grid_scoring(rec.views, space, grid, ecfg.init)
    final2, trace2 = refine(rec.views, init2.estimate, space, ecfg.refine)
    assert init.best_cell == init2.best_cell
    np.testing.assert_array_equal(final.position, final2.position)
    np.testing.assert_array_equal(final.shape, final2.shape)
    np.testing.assert_array_equal(trace, trace2)


def test_estimate_skip_refine_is_init_only(cup_scene, cups_category):
    cfg, space = cups_category
    _, rec = cup_scene
    grid = OrientationGrid(1)
    ecfg = EstimateConfig(init=InitConfig(scale_bounds=cfg.scale_range), skip_refine=True)
    final, init, trace = estimate(rec.views, space, grid, ecfg)
    assert final is init.estimate
    assert len(trace) == 0


def test_estimate_freeze_shape_keeps_shape(cup_scene, cups_category):
    cfg, space = cups_category
    _, rec = cup_scene
    grid = OrientationGrid(1)
    ecfg = EstimateConfig(
        init=InitConfig(scale_bounds=cfg.scale_range),
        refine=RefineConfig(iterations=5, freeze_shape=True),
    )
    final, init, _ = estimate(rec.views, space, grid, ecfg)
    np.testing.assert_array_equal(final.shape, init.estimate.shape)
