import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cooperrisk.fusion import (
    apply_delay,
    assemble_histories,
    delay_frames,
    nms_fuse,
    sense,
    visible_ids,
)
from cooperrisk.scene import Agent, DetectionBox, NoiseProfile, ObjectState, generate_scenario, obb_iou

ZERO = NoiseProfile()


def obj(i, s, l, h=0.0, v=0.0):
    return ObjectState(i, "vehicle", s, l, h, v)


def det(s, l, conf=1.0, agent=0, t=0.0, h=0.0, oid=0, v=0.0):
    return DetectionBox(oid, "vehicle", s, l, h, v, 4.5, 1.8, 1.5, conf, agent, t)


ego = Agent(0, "cav", object_id=0)


def test_zero_noise_reproduces_ground_truth():
    objs = [obj(0, 0, 0), obj(1, 10, 3, 0.4, 5), obj(2, -20, -2)]
    out = sense(ego, objs, ZERO, seed=1)
    assert [(d.id, d.s, d.l, d.heading) for d in out] == [(o.id, o.s, o.l, o.heading) for o in objs[1:]]
    assert all(0.9 <= d.confidence <= 1.0 for d in out)


def test_outside_radius_absent():
    out = sense(ego, [obj(0, 0, 0), obj(1, 60, 0)], ZERO, seed=0)
    assert out == []


def test_positional_noise_std():
    objs = [obj(0, 0, 0)] + [obj(i, 0.0, 0.0) for i in range(1, 2)]
    prof = NoiseProfile(pos_sigma=0.5)
    xs = [sense(ego, objs, prof, seed=s)[0].s for s in range(10_000)]
    assert np.std(xs) == pytest.approx(0.5, rel=0.05)


def test_sense_deterministic_and_dropout():
    objs = [obj(0, 0, 0)] + [obj(i, 3.0 * i, 5) for i in range(1, 12)]
    prof = NoiseProfile(pos_sigma=0.3, dropout_prob=0.4)
    assert sense(ego, objs, prof, 9) == sense(ego, objs, prof, 9)
    assert len(sense(ego, objs, prof, 9)) < 11
    assert sense(ego, objs, NoiseProfile(dropout_prob=1.0), 9) == []


def test_noise_profile_parse():
    p = NoiseProfile.parse("pos=0.5,heading=0.01,dropout=0.1,delay=100")
    assert p == NoiseProfile(0.5, 0.01, 0.1, 100.0)
    with pytest.raises(ValueError):
        NoiseProfile.parse("speed=3")
    with pytest.raises(ValueError):
        NoiseProfile(dropout_prob=2.0)


def test_delay_examples():
    times = [1.5, 2.0, 2.5, 3.0]
    streams = {0: [[det(0, 0, t=t)] for t in times], 1: [[det(5, 0, agent=1, t=t)] for t in times]}
    assert apply_delay(streams, ZERO, times) == {k: [list(f) for f in v] for k, v in streams.items()}
    out = apply_delay(streams, NoiseProfile(delay_ms=500), times)
    assert out[1][-1][0].timestamp == 2.5
    assert out[0][-1][0].timestamp == 3.0  # ego never delayed
    assert out[1][0] == []  # nothing old enough
    out = apply_delay(streams, NoiseProfile(delay_ms=100), times)
    assert out[1][-1][0].timestamp == 2.5  # floored to the frame grid
    assert delay_frames(0) == 0 and delay_frames(100) == 1 and delay_frames(500) == 1 and delay_frames(600) == 2


def test_nms_examples():
    single = [det(0, 0, 0.9), det(10, 0, 0.8)]
    assert nms_fuse([single]) == single
    a, b = det(0, 0, 0.95, agent=0), det(0.1, 0.0, 0.9, agent=1)
    assert obb_iou(a, b) > 0.9
    assert nms_fuse([[a], [b]]) == [a]
    assert nms_fuse([]) == []


boxes = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3), st.floats(0, 1)),
                 max_size=12)


@given(boxes)
def test_nms_properties(raw):
    dets = [det(s, l, c, h=h) for s, l, h, c in raw]
    out = nms_fuse(dets, 0.3)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert obb_iou(out[i], out[j]) <= 0.3
    assert nms_fuse(out, 0.3) == out


def test_histories_single_object_noiseless():
    times = [0.0, 0.5, 1.0, 1.5]
    frames = [[det(10 * t, 0, t=t, v=10.0)] for t in times]
    tracks = assemble_histories(frames, times)
    assert len(tracks) == 1
    tr = tracks[0]
    assert tr.mask == (True,) * 4
    assert [s.s for s in tr.states] == pytest.approx([0, 5, 10, 15])
    assert tr.last.speed == pytest.approx(10.0)
    assert tr.last.accel == pytest.approx(0.0)


def test_histories_two_objects_no_swap():
    times = [0.0, 0.5, 1.0, 1.5]
    frames = [[det(10 * t, 0, t=t, oid=1, v=10.0), det(10 * t, 20, t=t, oid=2, v=10.0)] for t in times]
    tracks = assemble_histories(frames, times)
    assert len(tracks) == 2
    for tr in tracks:
        assert len({round(s.l, 6) for s in tr.states}) == 1


def test_histories_dropout_gap():
    times = [0.0, 0.5, 1.0, 1.5]
    frames = [[det(10 * t, 0, t=t, v=10.0)] for t in times]
    frames[1] = []
    tracks = assemble_histories(frames, times)
    assert len(tracks) == 1
    assert tracks[0].mask == (True, False, True, True)


def test_fused_recall_exceeds_ego_only_on_occlusion_scene():
    log = generate_scenario("crossing", 4, 11, occlusion=True)
    fr = log.frames[log.current_index]
    targets = {o.id for o in fr.objects if o.id != log.agents[0].object_id}

    def recall(agents):
        dets = [sense(a, fr.objects, ZERO, 0, occlusion=True) for a in agents]
        return len({d.id for d in nms_fuse(dets)} & targets) / len(targets)

    assert recall(log.agents) > recall(log.agents[:1])


def test_recall_non_decreasing_in_agents():
    log = generate_scenario("crossing", 6, 3, occlusion=True)
    fr = log.frames[log.current_index]
    prev = -1
    for k in range(1, len(log.agents) + 1):
        ids = {d.id for d in nms_fuse([sense(a, fr.objects, ZERO, 0, occlusion=True) for a in log.agents[:k]])}
        assert len(ids) >= prev
        prev = len(ids)


def test_visible_ids_line_of_sight():
    objs = [obj(0, 0, 0), obj(1, 10, 0), obj(2, 20, 0)]
    assert visible_ids(ego, objs) == {1, 2}
    assert visible_ids(ego, objs, occlusion=True) == {1}
