import hashlib

import numpy as np
import pytest
import torch

from egodance.errors import ValidationError
from egodance.kinematics import forward_kinematics
from egodance.metrics import beat_alignment, foot_skate, kinematic_velocity, mmv
from egodance.synth import (SampleRecord, SynthSpec, beat_frames, build_dataset, generate_sequence,
                            load_dataset_index, load_sample, load_split)


@pytest.fixture(scope="module")
def records(topo):
    spec = SynthSpec()
    return [generate_sequence(spec, i, topo) for i in range(spec.sequences)]


def test_spec_validation():
    assert SynthSpec().frames == 150
    for bad in ({"bpm": -1}, {"duration": 0.51}, {"frame_rate": 0}, {"test_styles": 8},
                {"arm_amplitude": (1.0, 0.5)}, {"sequences": 0}):
        with pytest.raises(ValidationError):
            SynthSpec(**bad)
    assert SynthSpec.from_dict(SynthSpec(bpm=90).to_dict()) == SynthSpec(bpm=90)


def test_beats_example():
    assert beat_frames(150, SynthSpec().beat_period).tolist() == list(range(0, 150, 15))
    assert beat_frames(150, 30 * 60 / 100).tolist()[:4] == [0, 18, 36, 54]


def test_determinism(topo):
    spec = SynthSpec()
    a, b = generate_sequence(spec, 3, topo), generate_sequence(spec, 3, topo)
    for k, v in a.to_arrays().items():
        assert np.asarray(v).tobytes() == np.asarray(b.to_arrays()[k]).tobytes()
    c = generate_sequence(SynthSpec(seed=1), 3, topo)
    assert not np.array_equal(a.music_feat, c.music_feat)


def test_record_shapes(records):
    r = records[0]
    assert r.motion.rot6d.shape == (150, 24, 6) and r.motion.root_pos.shape == (150, 3)
    assert r.music_feat.shape == (150, 16) and r.vision_feat.shape == (150, 16)
    assert r.flow_proxy.shape == (150,) and r.contacts.shape == (150, 2)
    assert r.head.position.shape == (150, 3)


def _maxima(v):
    v = np.asarray(v)
    out = []
    for t in range(len(v)):
        left = v[t - 1] if t > 0 else -np.inf
        right = v[t + 1] if t + 1 < len(v) else -np.inf
        if v[t] >= left and v[t] >= right:
            out.append(t)
    return np.array(out)


def test_velocity_maxima_on_beats(records, topo):
    hits = total = 0
    for r in records:
        pos, _ = forward_kinematics(r.motion.rot6d, r.motion.root_pos, topo)
        peaks = _maxima(kinematic_velocity(pos))
        for b in r.beats:
            total += 1
            hits += int(np.abs(peaks - b).min() <= 1)
    assert hits / total >= 0.95


def test_ground_truth_scores(records, topo):
    for r in records:
        pos, _ = forward_kinematics(r.motion.rot6d, r.motion.root_pos, topo)
        assert beat_alignment(pos, r.beats) >= 0.9
        assert mmv(pos, r.beats, r.head.rotation, r.flow_proxy) >= 0.9
        assert foot_skate(pos, topo) < 1e-9
        assert r.contacts.any()


def test_features_carry_the_signals(records):
    r = records[0]
    # the beat impulse train is linearly recoverable from the music features
    impulse = np.zeros(150)
    impulse[r.beats] = 1
    coef, *_ = np.linalg.lstsq(np.c_[r.music_feat, np.ones(150)], impulse, rcond=None)
    fit = np.c_[r.music_feat, np.ones(150)] @ coef
    assert np.corrcoef(fit, impulse)[0, 1] > 0.8


def test_dataset_build(tmp_path, topo):
    spec = SynthSpec()
    m = build_dataset(spec, tmp_path / "a", topo)
    assert len(m["samples"]) == 8
    assert all((tmp_path / "a" / s["name"] / "manifest.json").is_file() for s in m["samples"])
    styles = {s: {d["style"] for d in m["samples"] if d["split"] == s} for s in ("train", "test")}
    assert styles["train"] and styles["test"] and not styles["train"] & styles["test"]
    assert load_dataset_index(tmp_path / "a")["splits"] == m["splits"]
    build_dataset(spec, tmp_path / "b", topo)

    def digest(root):
        h = hashlib.sha256()
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(p.read_bytes())
        return h.hexdigest()
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_sample_round_trip(tmp_path, topo):
    spec = SynthSpec(sequences=2)
    build_dataset(spec, tmp_path, topo)
    orig = generate_sequence(spec, 1, topo)
    back = load_sample(tmp_path, "sample_0001")
    for k, v in orig.to_arrays().items():
        assert np.asarray(v).tobytes() == np.asarray(back.to_arrays()[k]).tobytes(), k
    assert isinstance(back, SampleRecord)
    assert len(load_split(tmp_path, "train", limit=1)) == 1
    with pytest.raises(ValidationError):
        load_split(tmp_path, "val")


def test_generator_rejects_bad_inputs(topo):
    with pytest.raises(ValidationError):
        generate_sequence(SynthSpec(), -1, topo)
    with pytest.raises(ValidationError):
        generate_sequence({"bpm": 120}, 0, topo)
    torch.testing.assert_close(generate_sequence(SynthSpec(), 0).motion.rot6d,
                               generate_sequence(SynthSpec(), 0, topo).motion.rot6d, rtol=0, atol=0)
