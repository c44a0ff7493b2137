import json

import numpy as np
import pytest
from scipy import ndimage

from facedyn.augmentation import (
    AugmentationPlan,
    augment_dataset,
    augment_example,
    bandpass,
    expected_clip_count,
    flip_frames,
    identity_plan,
    magnify_motion,
    read_clip_manifest,
    replay_clip,
    reverse_sequence,
    rotate_frames,
    window_sequence,
    window_starts,
    write_clip_manifest,
)
from facedyn.errors import ConfigurationError, SequenceTooShortError, WindowTooLargeError
from facedyn.imageops import ImageSequence


def seq_of(frames, domain="cross_domain"):
    return ImageSequence(np.asarray(frames, dtype=float), domain)


def smooth_images(rng, T=4, K=32):
    raw = rng.uniform(size=(T, K, K))
    return np.clip(ndimage.gaussian_filter(raw, sigma=(0, 3, 3)) * 2 - 0.5, 0, 1)


def brute_windows(T, w, s):
    return sum(1 for start in range(1, T + 1) if (start - 1) % s == 0 and start + w - 1 <= T)


# -- EVM -----------------------------------------------------------------------


def test_static_video_is_fixed_point():
    frames = np.repeat(np.random.default_rng(0).uniform(size=(1, 6, 6)), 20, axis=0)
    out = magnify_motion(seq_of(frames), 4.0, (0.5, 2.0), 25.0)
    np.testing.assert_array_equal(out.frames, frames)


def test_pure_tone_gain():
    # 50 frames at 25 fps: 1 Hz sits exactly on an FFT bin, inside [0.5, 2] Hz.
    t = np.arange(50) / 25.0
    x = 0.5 + 0.1 * np.sin(2 * np.pi * 1.0 * t)
    out = magnify_motion(seq_of(x[:, None, None]), 4.0, (0.5, 2.0), 25.0).frames[:, 0, 0]
    np.testing.assert_allclose(out, 0.5 + 0.5 * np.sin(2 * np.pi * t), atol=1e-9)
    amplitude = 2 * np.mean((out - 0.5) * np.sin(2 * np.pi * t))
    assert amplitude == pytest.approx(0.1 * (1 + 4), abs=1e-9)


def test_out_of_band_tone_is_untouched():
    t = np.arange(50) / 25.0
    x = 0.5 + 0.1 * np.sin(2 * np.pi * 5.0 * t)
    out = magnify_motion(seq_of(x[:, None, None]), 4.0, (0.5, 2.0), 25.0).frames[:, 0, 0]
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_alpha_zero_identity_and_errors():
    s = seq_of(np.random.default_rng(1).uniform(size=(5, 3, 3)))
    assert magnify_motion(s, 0.0, (0.5, 2.0), 25.0) is s
    with pytest.raises(SequenceTooShortError):
        magnify_motion(seq_of(np.zeros((1, 2, 2))), 4.0)
    with pytest.raises(ConfigurationError):
        magnify_motion(s, 4.0, (2.0, 20.0), 25.0)


def test_bandpass_removes_dc():
    frames = np.random.default_rng(2).uniform(size=(16, 2, 2))
    b = bandpass(frames, (0.5, 5.0), 25.0)
    np.testing.assert_allclose(b.mean(axis=0), 0.0, atol=1e-12)


# -- reversal / flip / rotation --------------------------------------------------


def test_reversal():
    A, B, C = (np.full((2, 2), v) for v in (0.1, 0.2, 0.3))
    s = seq_of([A, B, C])
    np.testing.assert_array_equal(reverse_sequence(s).frames, [C, B, A])
    np.testing.assert_array_equal(reverse_sequence(reverse_sequence(s)).frames, s.frames)
    const = seq_of([A, A, A])
    np.testing.assert_array_equal(reverse_sequence(const).frames, const.frames)


def test_flip_involution():
    s = seq_of(np.random.default_rng(3).uniform(size=(3, 5, 5)))
    np.testing.assert_array_equal(flip_frames(flip_frames(s)).frames, s.frames)
    np.testing.assert_array_equal(flip_frames(s).frames[0, :, 0], s.frames[0, :, -1])


def test_rotation_zero_and_round_trip():
    rng = np.random.default_rng(4)
    s = seq_of(smooth_images(rng))
    assert rotate_frames(s, 0.0) is s
    back = rotate_frames(rotate_frames(s, 10.0), -10.0).frames
    K = s.size
    yy, xx = np.mgrid[:K, :K] - (K - 1) / 2
    interior = np.hypot(yy, xx) < K / 2 - 4
    assert np.max(np.abs(back - s.frames)[:, interior]) <= 0.02


def test_rotation_direction():
    # A bright dot right of center moves up (counter-clockwise on screen) for +90.
    f = np.zeros((1, 9, 9))
    f[0, 4, 7] = 1.0
    r = rotate_frames(seq_of(f), 90.0).frames[0]
    assert np.unravel_index(np.argmax(r), r.shape) == (1, 4)


# -- windowing -------------------------------------------------------------------


def test_window_starts_examples():
    assert window_starts(10, 4, 2) == [1, 3, 5, 7]
    assert window_starts(10, 10, 3) == [1]
    with pytest.raises(WindowTooLargeError):
        window_starts(5, 6, 1)


def test_window_sequence_shares_frames():
    s = seq_of(np.random.default_rng(5).uniform(size=(10, 2, 2)))
    clips = window_sequence(s, 4, 2)
    assert [c.provenance.start for c in clips] == [1, 3, 5, 7]
    c = clips.clips[1].sequences["cross_domain"]
    np.testing.assert_array_equal(c.frames, s.frames[2:6])
    full = window_sequence(s, 10, 1)
    assert len(full) == 1


# -- lattice -----------------------------------------------------------------------


def one_view(T=10, K=8, seed=6):
    rng = np.random.default_rng(seed)
    return {0.0: {"cross_domain": seq_of(rng.uniform(0.2, 0.8, size=(T, K, K)))}}


def test_everything_off_gives_one_clip():
    plan = AugmentationPlan(inplane_rotations_deg=(), include_flip=False, include_reversal=False,
                            include_magnified=False, pass1=(10, 1), pass2=None)
    assert len(augment_example(one_view(), plan)) == 1


def test_twenty_four_clip_example():
    plan = AugmentationPlan(inplane_rotations_deg=(), include_flip=True, include_reversal=True,
                            pass1=(8, 2), pass2=(4, 8))
    clips = augment_example(one_view(), plan, example=3, label=2)
    assert len(clips) == 1 * 2 * 2 * 2 * (2 + 1) == 24
    assert expected_clip_count(plan, 1, 10) == 24
    assert {c.label for c in clips} == {2}
    assert len({c.provenance for c in clips}) == 24


def test_count_law_random_plans():
    rng = np.random.default_rng(7)
    for _ in range(20):
        T = int(rng.integers(4, 14))
        w1 = int(rng.integers(1, T + 1))
        w2 = int(rng.integers(1, T + 1))
        rots = tuple(float(r) for r in rng.choice([-10, 5, 10], size=rng.integers(0, 3), replace=False))
        plan = AugmentationPlan(
            inplane_rotations_deg=rots, include_flip=bool(rng.integers(2)),
            include_reversal=bool(rng.integers(2)), include_original=True,
            include_magnified=bool(rng.integers(2)), pass1=(w1, int(rng.integers(1, 4))),
            pass2=None if rng.integers(2) else (w2, int(rng.integers(1, 5))))
        n_views = int(rng.integers(1, 3))
        views = {float(v): one_view(T, 6, v)[0.0] for v in range(n_views)}
        expect = (n_views * len(plan.sources) * (2 if plan.include_reversal else 1)
                  * (1 + plan.include_flip + len(rots))
                  * sum(brute_windows(T, w, s) for w, s in plan.passes))
        assert len(augment_example(views, plan)) == expect


def test_replay_is_bitwise():
    plan = AugmentationPlan(pass1=(8, 2), pass2=(4, 8))
    views = one_view()
    clips = augment_example(views, plan)
    for c in clips.clips[::7]:
        again = replay_clip(views[c.provenance.view], c.provenance, plan)
        np.testing.assert_array_equal(again["cross_domain"].frames,
                                      c.sequences["cross_domain"].frames)


def test_identity_plan_and_dataset_labels(tmp_path):
    plan = AugmentationPlan(pass1=(8, 2), pass2=(4, 8))
    ident = identity_plan(plan)
    assert ident.sources == ("original",) and ident.spatial == ("identity",)
    assert ident.directions == (False,) and ident.passes == plan.passes
    ds = augment_dataset([one_view(seed=1), one_view(seed=2)], ident, labels=[4, 5])
    assert len(ds) == 6
    assert [c.label for c in ds] == [4, 4, 4, 5, 5, 5]
    write_clip_manifest(ds, tmp_path / "c.jsonl")
    rows = read_clip_manifest(tmp_path / "c.jsonl")
    assert [p for p, _ in rows] == ds.provenance()
    assert json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])["label"] == 4


def test_plan_validation_and_round_trip():
    with pytest.raises(ConfigurationError):
        AugmentationPlan(include_original=False, include_magnified=False)
    with pytest.raises(ConfigurationError):
        AugmentationPlan(inplane_rotations_deg=(0.0,))
    with pytest.raises(ConfigurationError):
        AugmentationPlan(pass1=(0, 1))
    p = AugmentationPlan(pass2=None)
    assert AugmentationPlan.from_dict(json.loads(json.dumps(p.to_dict()))) == p
