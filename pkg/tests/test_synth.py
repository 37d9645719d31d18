import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctcot.ctc import min_frames
from ctcot.encoder import subsampled_length
from ctcot.synth import (
    SEPARATION_SIGMAS,
    Sample,
    SynthConfig,
    alignment_mask,
    ctc_feasible,
    diagonal_mass,
    dumps_dataset,
    generate,
    loads_dataset,
    prototypes,
)


def test_noiseless_single_repeat_is_prototypes():
    cfg = SynthConfig(
        noise_sigma=0.0, repeat_min=1, repeat_max=1, n_samples=5, transcript_len_max=3, ctc_feasible_only=False
    )
    protos = prototypes(cfg)
    for s in generate(cfg):
        assert s.num_frames == len(s.transcript)
        assert np.array_equal(s.frames, protos[:, s.transcript])


@given(st.integers(0, 500))
def test_segments_partition_frames(seed):
    for s in generate(SynthConfig(n_samples=5, seed=seed)):
        assert s.segments[0][0] == 0
        assert s.segments[-1][1] == s.num_frames
        for (a, b), (c, _) in zip(s.segments, s.segments[1:]):
            assert a < b == c
        assert len(s.segments) == len(s.transcript)
        assert all(t1 != t2 for t1, t2 in zip(s.transcript, s.transcript[1:]))


def test_generation_is_deterministic():
    cfg = SynthConfig(n_samples=20, seed=4)
    a, b = generate(cfg), generate(cfg)
    assert dumps_dataset(a) == dumps_dataset(b)
    assert dumps_dataset(generate(cfg, "eval")) != dumps_dataset(a)


def test_default_samples_are_ctc_feasible():
    data = generate(SynthConfig())
    assert len(data) == 500
    assert all(subsampled_length(s.num_frames) >= min_frames(s.transcript) for s in data)


def test_prototype_separation_holds():
    for seed in range(50):
        cfg = SynthConfig(seed=seed)
        P = prototypes(cfg)[:, 1:]
        assert np.allclose(np.linalg.norm(P, axis=0), 1.0)
        gaps = [np.linalg.norm(P[:, i] - P[:, j]) for i in range(cfg.vocab) for j in range(i)]
        assert min(gaps) > SEPARATION_SIGMAS * cfg.noise_sigma


def test_infeasible_samples_are_regenerated():
    # 1-frame repeats make most transcripts too long for the 4x subsampled length
    cfg = SynthConfig(repeat_min=1, repeat_max=8, n_samples=30, transcript_len_min=2, transcript_len_max=4)
    assert all(ctc_feasible(s) for s in generate(cfg))


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(vocab=1)
    with pytest.raises(ValueError):
        SynthConfig(repeat_min=0)
    with pytest.raises(KeyError):
        SynthConfig.from_dict({"foo": 1})
    with pytest.raises(ValueError):
        generate(SynthConfig(), split="test")


def _tiny_sample():
    # two tokens, 8 frames each: subsampled rows 0,1 -> token 0, rows 2,3 -> token 1
    return Sample(np.zeros((2, 16)), [1, 2], [(0, 8), (8, 16)])


def test_diagonal_mass_examples():
    s = _tiny_sample()
    truth = alignment_mask(s).astype(float)
    assert diagonal_mass(truth / truth.sum(), s) == 1.0
    assert diagonal_mass(np.full((4, 2), 1 / 8), s) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        diagonal_mass(np.ones((3, 2)), s)


def test_alignment_mask_straddling_frames():
    s = Sample(np.zeros((1, 10)), [1, 2, 3], [(0, 3), (3, 6), (6, 10)])
    mask = alignment_mask(s)
    assert mask.shape == (3, 3)
    assert mask.tolist() == [[True, True, False], [False, True, True], [False, False, True]]


@given(st.integers(0, 1000))
def test_diagonal_mass_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    s = generate(SynthConfig(n_samples=1, seed=seed))[0]
    Z = rng.random(alignment_mask(s).shape)
    assert 0.0 <= diagonal_mass(Z, s) <= 1.0


def test_json_round_trip_is_bit_exact():
    data = generate(SynthConfig(n_samples=10, seed=2))
    text = dumps_dataset(data)
    back = loads_dataset(text)
    for a, b in zip(data, back):
        assert np.array_equal(a.frames, b.frames)
        assert a.transcript == b.transcript and a.segments == b.segments
    assert dumps_dataset(back) == text


def test_malformed_dataset_rejected():
    with pytest.raises(ValueError):
        loads_dataset('{"frames": []}')
    with pytest.raises(ValueError):
        loads_dataset('[{"frames": [[1.0]], "transcript": [1, 2], "segments": [[0, 1]]}]')
