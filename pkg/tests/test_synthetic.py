import numpy as np
import pytest

from facedyn.synthetic import (
    SyntheticSpec,
    amplitude,
    class_separation,
    generate_dataset,
    neutral_mesh,
    separation_ratio,
)

# Measured once at build time (3 subjects, seed 0, K=64, frontal view) and pinned.
SEPARATION_NOISE0 = 1.4694577175022503


def test_cardinality_and_order():
    ds = generate_dataset(SyntheticSpec(subjects=3, frames_per_clip=4))
    assert len(ds) == 18
    assert ds.subjects[:6] == ["S001"] * 6
    assert ds.labels.tolist() == [1, 2, 3, 4, 5, 6] * 3
    assert all(len(s) == 4 for s in ds.sequences)


def test_same_seed_same_bytes():
    spec = SyntheticSpec(subjects=2, frames_per_clip=3, noise_sigma=0.05, seed=11)
    a, b = generate_dataset(spec), generate_dataset(spec)
    for s, t in zip(a.sequences, b.sequences):
        for (m1, l1), (m2, l2) in zip(s.frames, t.frames):
            assert m1.same_as(m2) and l1.same_as(l2)
    c = generate_dataset(SyntheticSpec(subjects=2, frames_per_clip=3, noise_sigma=0.05, seed=12))
    assert not c.sequences[0].meshes[1].same_as(a.sequences[0].meshes[1])


def test_first_frame_is_neutral():
    spec = SyntheticSpec(subjects=2, frames_per_clip=6)
    assert amplitude(1, 6) == 0.0 and amplitude(6, 6) == 1.0
    ds = generate_dataset(spec)
    for seq in ds.sequences:
        i = int(seq.subject_id[1:]) - 1
        np.testing.assert_array_equal(seq.meshes[0].vertices, neutral_mesh(spec, i).vertices)
        assert not np.array_equal(seq.meshes[-1].vertices, seq.meshes[0].vertices)


def test_landmarks_lie_on_the_mesh():
    seq = generate_dataset(SyntheticSpec(subjects=1, frames_per_clip=3)).sequences[5]
    for mesh, lm in seq.frames:
        d = np.min(np.linalg.norm(mesh.vertices[None] - lm.as_array()[:, None], axis=-1), axis=1)
        assert np.all(d == 0)


def test_separation_degenerate_rules():
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert separation_ratio(X, [1, 1, 1, 1]) == 0.0
    assert separation_ratio(np.array([[0.0], [0.0], [1.0], [1.0]]), [1, 1, 2, 2]) == float("inf")


@pytest.fixture(scope="module")
def separations():
    out = {}
    for sigma in (0.0, 0.05, 0.1):
        ds = generate_dataset(SyntheticSpec(subjects=3, noise_sigma=sigma, seed=0))
        out[sigma] = class_separation(ds, size=64)
    return out


def test_noise_free_data_is_separable(separations):
    assert separations[0.0] > 1
    assert separations[0.0] == pytest.approx(SEPARATION_NOISE0, rel=1e-6)


def test_separation_decreases_with_noise(separations):
    assert separations[0.0] >= separations[0.05] >= separations[0.1]
