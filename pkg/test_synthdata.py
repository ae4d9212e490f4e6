#!/usr/bin/env python3
"""
Tests for the synthetic long-tailed dataset generator
"""

import numpy as np
import pytest
from scipy import stats

from components.dataset_io import datasets_equal
from components.errors import ContractError
from components.synthdata import (
    GeneratorConfig, empirical_noise_rate, empirical_positive_rate, generate_dataset,
    histogram_fit, predicate_groups, sample_predicates, zipf_probabilities,
)


def small_config(**overrides):
    settings = dict(num_videos=6, frames_per_video=4, num_object_classes=5, num_predicates=6,
                    feature_dim=8, seed=3)
    settings.update(overrides)
    return GeneratorConfig(**settings)


def test_zipf_probabilities():
    probs = zipf_probabilities(4, 1.0)
    assert np.allclose(probs, np.array([1, 1 / 2, 1 / 3, 1 / 4]) / (25 / 12))
    assert np.allclose(zipf_probabilities(5, 0.0), 0.2)
    with pytest.raises(ContractError):
        zipf_probabilities(3, -1.0)


def test_uniform_histogram_at_alpha_zero():
    rng = np.random.default_rng(11)
    probs = zipf_probabilities(10, 0.0)
    counts = np.bincount(sample_predicates(rng, probs, 10_000), minlength=10)
    assert histogram_fit(counts, probs) > 0.01


def test_zipf_frequencies_within_three_sigma():
    draws = 100_000
    probs = zipf_probabilities(20, 1.2)
    counts = np.bincount(sample_predicates(np.random.default_rng(12), probs, draws), minlength=20)
    freq = counts / draws
    sigma = np.sqrt(probs * (1 - probs) / draws)
    assert np.all(np.abs(freq - probs) <= 3 * sigma)


def test_histogram_fit_rejects_a_wrong_distribution():
    probs = zipf_probabilities(10, 0.0)
    skewed = np.bincount(sample_predicates(np.random.default_rng(13),
                                           zipf_probabilities(10, 1.5), 10_000), minlength=10)
    assert histogram_fit(skewed, probs) < 1e-6
    # Same statistic scipy computes directly
    expected = probs * skewed.sum()
    assert histogram_fit(skewed, probs) == stats.chisquare(skewed, expected).pvalue


def test_predicate_groups_are_contiguous():
    groups = predicate_groups(26, 3)
    assert groups == sorted(groups)
    assert set(groups) == {0, 1, 2}
    assert predicate_groups(4, 1) == [0, 0, 0, 0]


@pytest.mark.parametrize("overrides", [
    {"num_videos": 0}, {"min_objects": 5, "max_objects": 2}, {"positive_rate": 1.5},
    {"alpha": -0.5}, {"noise_rate": -0.1}, {"feature_dim": 7}, {"num_predicate_groups": 9},
])
def test_invalid_config(overrides):
    with pytest.raises(ContractError):
        small_config(**overrides)


def test_split_sizes_and_inventory():
    train, test = generate_dataset(small_config(num_videos=8, test_fraction=0.25))
    assert (len(train), len(test)) == (6, 2)
    assert train.predicate_groups == test.predicate_groups
    assert len({v.video_id for v in train.videos + test.videos}) == 8


def test_same_seed_is_bit_identical():
    first = generate_dataset(small_config())
    second = generate_dataset(small_config())
    assert datasets_equal(first[0], second[0]) and datasets_equal(first[1], second[1])
    other = generate_dataset(small_config(seed=4))
    assert not datasets_equal(first[0], other[0])


def test_serial_and_parallel_agree():
    serial = generate_dataset(small_config(num_videos=9))
    parallel = generate_dataset(small_config(num_videos=9), workers=4)
    assert datasets_equal(serial[0], parallel[0])
    assert datasets_equal(serial[1], parallel[1])


def test_ground_truth_is_structurally_valid():
    train, test = generate_dataset(small_config(num_videos=10, noise_rate=0.3))
    for video in train.videos + test.videos:
        video.ground_truth()
        for frame in video.frames:
            assert frame.labels[0] == 0
            assert all(s != o for s, _, o in frame.relations)
            assert all(0 <= p < train.num_predicates for _, p, _ in frame.relations)
            assert len(frame.union_features) == len(frame.pairs)
            assert all(p.appearance.dtype == np.float32 for p in frame.proposals)


def test_class_scores_are_distributions_peaked_at_the_label():
    train, _ = generate_dataset(small_config(num_videos=10, noise_rate=0.3))
    clean, corrupted = [], []
    for video in train.videos:
        for frame in video.frames:
            for p in frame.proposals:
                scores = np.asarray(p.class_scores, dtype=np.float64)
                assert np.all(scores > 0.0)
                assert abs(scores.sum() - 1.0) <= 1e-12
                (corrupted if p.corrupted else clean).append(scores[p.label])
    assert clean and corrupted
    assert np.mean(clean) > 0.8
    assert np.mean(clean) > np.mean(corrupted)


def test_identities_persist_with_smooth_boxes():
    train, _ = generate_dataset(small_config(presence_rate=1.0, box_motion=0.01))
    for video in train.videos:
        tracks = {}
        for frame in video.frames:
            for p in frame.proposals:
                tracks.setdefault(p.track_id, []).append(p)
        for members in tracks.values():
            assert len({m.label for m in members}) == 1
            centers = np.array([m.box.center for m in members])
            assert np.all(np.abs(np.diff(centers, axis=0)) < 0.1)


def test_corrupted_frames_are_far_from_clean_ones():
    """Corruption moves an appearance noise_scale away; clean frames stay within the jitter band"""
    config = small_config(num_videos=10, noise_rate=0.3, noise_scale=4.0, jitter=0.0)
    train, _ = generate_dataset(config)
    corrupted = clean = 0
    for video in train.videos:
        tracks = {}
        for frame in video.frames:
            for p in frame.proposals:
                tracks.setdefault(p.track_id, []).append(p)
        for members in tracks.values():
            base = [m.appearance for m in members if not m.corrupted]
            if not base:
                continue
            for m in members:
                distance = np.linalg.norm(m.appearance.astype(np.float64) - base[0])
                if m.corrupted:
                    corrupted += 1
                    assert distance > config.noise_scale / 2
                    assert distance == pytest.approx(config.noise_scale, rel=1e-5)
                else:
                    clean += 1
                    assert distance == 0.0
    assert corrupted > 0 and clean > 0


def test_clean_jitter_is_bounded():
    config = small_config(jitter=0.1, noise_rate=0.0)
    train, _ = generate_dataset(config)
    for video in train.videos:
        tracks = {}
        for frame in video.frames:
            for p in frame.proposals:
                tracks.setdefault(p.track_id, []).append(p.appearance)
        for rows in tracks.values():
            spread = np.max(rows, axis=0) - np.min(rows, axis=0)
            assert np.all(spread <= 6 * config.jitter + 1e-6)


def test_positive_rate_within_three_sigma():
    """One frame and full presence make every pair an independent draw"""
    config = GeneratorConfig(num_videos=5000, test_fraction=0.0, frames_per_video=1,
                             min_objects=3, max_objects=3, presence_rate=1.0,
                             num_object_classes=4, num_predicates=5, num_predicate_groups=1,
                             feature_dim=2, positive_rate=0.35, seed=21)
    train, _ = generate_dataset(config)
    pairs = sum(len(f.pairs) for v in train.videos for f in v.frames)
    assert pairs == 10_000
    sigma = np.sqrt(0.35 * 0.65 / pairs)
    assert abs(empirical_positive_rate(train) - 0.35) <= 3 * sigma


def test_noise_rate_within_three_sigma():
    config = GeneratorConfig(num_videos=1000, test_fraction=0.0, frames_per_video=5,
                             min_objects=2, max_objects=2, presence_rate=1.0,
                             num_object_classes=4, num_predicates=5, num_predicate_groups=1,
                             feature_dim=2, noise_rate=0.15, seed=22)
    train, _ = generate_dataset(config)
    sigma = np.sqrt(0.15 * 0.85 / 10_000)
    assert abs(empirical_noise_rate(train) - 0.15) <= 3 * sigma


def test_progress_callback_receives_summary():
    messages = []
    generate_dataset(small_config(), progress_callback=messages.append)
    assert any("Generated" in m for m in messages)
