import numpy as np
import pytest

from facedyn.errors import MissingAttributeError
from facedyn.mesh import FaceMesh, LandmarkSet, ScanSequence
from facedyn.render import (
    DEPTH_FLOOR,
    CameraSpec,
    DomainImage,
    format_angle,
    image_filename,
    load_png,
    normalize_depth,
    rasterize,
    render_both,
    render_depth,
    render_sequence,
    render_texture,
    render_views,
    save_png,
)


def brute_force_zbuffer(verts, faces, cam, size):
    """Per-pixel loop: solve for barycentrics, keep the max z over covering triangles."""
    out = np.full((size, size), -np.inf)
    x0, x1 = cam.x_range
    y0, y1 = cam.y_range
    for i in range(size):
        for j in range(size):
            # pixel center back in mesh units
            x = x0 + (j + 0.5) / size * (x1 - x0)
            y = y1 - (i + 0.5) / size * (y1 - y0)
            for f in faces:
                a, b, c = verts[f]
                M = np.array([[a[0], b[0], c[0]], [a[1], b[1], c[1]], [1.0, 1.0, 1.0]])
                if abs(np.linalg.det(M)) < 1e-12:
                    continue
                lam = np.linalg.solve(M, [x, y, 1.0])
                if np.all(lam >= -1e-12):
                    out[i, j] = max(out[i, j], lam @ [a[2], b[2], c[2]])
    return out


def test_matches_brute_force_on_random_scenes():
    rng = np.random.default_rng(0)
    cam = CameraSpec.square(1.0)
    for _ in range(15):
        v = np.column_stack([rng.uniform(-1.1, 1.1, size=(6, 2)), rng.uniform(-1, 1, 6)])
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        zbuf, _ = rasterize(FaceMesh(v, faces), cam, 16)
        ref = brute_force_zbuffer(v, faces, cam, 16)
        covered = np.isfinite(ref)
        # Pixel centers that land exactly on an edge are measure-zero for random scenes.
        np.testing.assert_array_equal(np.isfinite(zbuf), covered)
        np.testing.assert_allclose(zbuf[covered], ref[covered], atol=1e-9)


def test_empty_faces_give_background():
    m = FaceMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    img = render_depth(m, CameraSpec(background_value=0.25), 8)
    assert np.all(img.pixels == 0.25)


def test_constant_z_triangle_covers_center_only():
    # Triangle around the center of a 5x5 window of half-extent 5.
    v = np.array([[-1.5, -1.0, 3.0], [1.5, -1.0, 3.0], [0.0, 1.5, 3.0]])
    m = FaceMesh(v, np.array([[0, 1, 2]]))
    img = render_depth(m, CameraSpec.square(5.0), 5)
    assert img.pixels[2, 2] == 1.0  # single depth level -> nearest value
    for i, j in [(0, 0), (0, 4), (4, 0), (4, 4)]:
        assert img.pixels[i, j] == 0.0


def test_nearer_of_two_coaxial_triangles_wins():
    far = [[-4, -4, 10], [4, -4, 10], [0, 4, 10]]
    near = [[-2, -2, 20], [2, -2, 20], [0, 2, 20]]
    v = np.array(far + near, dtype=float)
    for faces in ([[0, 1, 2], [3, 4, 5]], [[3, 4, 5], [0, 1, 2]]):
        zbuf, _ = rasterize(FaceMesh(v, np.array(faces)), CameraSpec.square(5.0), 10)
        assert zbuf[5, 5] == 20.0
        assert zbuf[8, 2] == 10.0  # far triangle only


def test_depth_normalization_endpoints():
    z = np.array([[10.0, 20.0], [15.0, -np.inf]])
    d = normalize_depth(z, 0.0)
    assert d[0, 1] == 1.0
    assert d[0, 0] == pytest.approx(DEPTH_FLOOR)
    assert d[1, 0] == pytest.approx(DEPTH_FLOOR + 0.5 * (1 - DEPTH_FLOOR))
    assert d[1, 1] == 0.0


def test_uniform_luminance_texture():
    v = np.array([[-4.0, -4, 0], [4, -4, 1], [0, 4, 2]])
    m = FaceMesh(v, np.array([[0, 1, 2]]), np.full((3, 3), 0.5))
    img = render_texture(m, CameraSpec.square(5.0), 10)
    covered = img.pixels > 0
    assert covered.sum() > 10
    np.testing.assert_allclose(img.pixels[covered], 0.5, atol=1e-12)


def test_barycenter_luminance_is_one_third():
    # Triangle whose barycenter falls exactly on the center of pixel (1, 1)
    # in a 3x3 window of half-extent 1.5 (pixel centers at -1, 0, 1).
    v = np.array([[-1.2, -0.9, 0.0], [1.2, -0.9, 0.0], [0.0, 1.8, 0.0]])
    colors = np.array([[0.0] * 3, [0.0] * 3, [1.0] * 3])
    m = FaceMesh(v, np.array([[0, 1, 2]]), colors)
    img = render_texture(m, CameraSpec.square(1.5), 3)
    assert img.pixels[1, 1] == pytest.approx(1 / 3, abs=1e-12)


def test_missing_colors():
    m = FaceMesh(np.eye(3), np.array([[0, 1, 2]]))
    with pytest.raises(MissingAttributeError):
        render_texture(m, CameraSpec(), 4)


def _tiny_sequence(T=3):
    rng = np.random.default_rng(1)
    v = np.array([[-50.0, -50, 0], [50, -50, 10], [0, 60, 20], [60, 60, 5]])
    frames = []
    for t in range(T):
        m = FaceMesh(v + [0, 0, t], np.array([[0, 1, 2], [1, 3, 2]]), rng.uniform(size=(4, 3)))
        frames.append((m, LandmarkSet.from_array(np.zeros((6, 3)))))
    return ScanSequence(tuple(frames), "S", 1)


def test_sequence_cardinality_and_range():
    seq = _tiny_sequence(3)
    tex, dep = render_sequence(seq, CameraSpec(), 16)
    assert tex.shape == dep.shape == (3, 16, 16)
    for a in (tex, dep):
        assert a.min() >= 0 and a.max() <= 1
    views = render_views({0.0: seq}, CameraSpec(), 16)
    assert len(views[0.0][0]) == 3 and len(views[0.0][1]) == 3


def test_identical_frames_identical_rasters():
    m = _tiny_sequence(1).meshes[0]
    a = render_both(m, CameraSpec(), 20)
    b = render_both(m, CameraSpec(), 20)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.pixels, y.pixels)


def test_domain_image_validation():
    with pytest.raises(Exception):
        DomainImage(np.zeros((2, 3)), "depth")
    with pytest.raises(ValueError):
        DomainImage(np.full((2, 2), 1.5), "depth")
    with pytest.raises(ValueError):
        DomainImage(np.zeros((2, 2)), "thermal")


def test_png_round_trip(tmp_path):
    px = np.linspace(0, 1, 64).reshape(8, 8)
    save_png(px, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    np.testing.assert_allclose(back, np.round(px * 255) / 255)


def test_filenames():
    assert format_angle(-15.0) == "-15"
    assert format_angle(7.5) == "+7p5"
    assert image_filename("S001", 3, 15.0, 7, "depth") == "S001_e3_v+15_t007_depth.png"
    assert image_filename("S001", 3, 0.0, None, "cdi") == "S001_e3_v+0_cdi.png"
