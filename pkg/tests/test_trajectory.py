import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightkit import trajectory as tj


def test_progress_endpoints():
    assert tj.progress(0, 1) == 0.0
    assert tj.progress(0, 5) == 0.0 and tj.progress(4, 5) == 1.0


def test_linear_and_circular_positions():
    assert tj.Linear((0, 0), (1, 0.5)).at(0.5) == (0.5, 0.25)
    c = tj.Circular((0.5, 0.5), 0.25, 0.0, math.pi)
    assert c.at(0.5) == pytest.approx((0.5, 0.75))
    assert c.at(1.0) == pytest.approx((0.25, 0.5))


def test_polyline_arc_length():
    # legs of length 0.3 and 0.1: u=0.5 lies 0.2 along the first leg
    p = tj.Polyline(((0.0, 0.0), (0.3, 0.0), (0.3, 0.1)))
    assert p.at(0.5) == pytest.approx((0.2, 0.0))
    assert p.at(0.875) == pytest.approx((0.3, 0.05))
    assert p.at(1.0) == (0.3, 0.1)
    with pytest.raises(tj.TrajectoryError):
        tj.Polyline(((0, 0),))


def test_interpolated_radius():
    spec = tj.TrajectorySpec((tj.SourceTrack(tj.Linear((0, 0), (1, 1)), 0.1, 0.3),), 3)
    states = tj.interpolate(spec)
    assert [s[0].radius for s in states] == pytest.approx([0.1, 0.2, 0.3])


def test_rasterize_matches_pixel_loop():
    states = [tj.SourceState((0.3, 0.4), 0.25, 0.9), tj.SourceState((0.7, 0.6), 0.2, 0.6)]
    h, w = 12, 16
    m = tj.rasterize(states, h, w)
    for i in range(h):
        for j in range(w):
            ref = 0.0
            for s in states:
                d = math.hypot(j + 0.5 - s.center[0] * w, i + 0.5 - s.center[1] * h) / (s.radius * min(h, w))
                ref = max(ref, s.intensity * max(0.0, 1.0 - d))
            assert m[i, j] == pytest.approx(ref, abs=1e-12)


def test_gaussian_profile_support():
    d = np.array([0.0, 0.5, 1.0, 1.01])
    v = tj.falloff(d, "gaussian")
    assert v[0] == 1.0 and v[-1] == 0.0
    assert v[1] == pytest.approx(math.exp(-tj.GAUSSIAN_SHARPNESS * 0.25))
    with pytest.raises(tj.TrajectoryError):
        tj.falloff(d, "cubic")


def test_disc_mask_area():
    # linear falloff at threshold t gives a disc of radius (1 - t) r
    h = w = 256
    s = tj.SourceState((0.5, 0.5), 0.3, 1.0)
    mask = tj.binarize(tj.rasterize([s], h, w), 0.3)
    expected = math.pi * (0.7 * 0.3 * h) ** 2
    assert mask.sum() == pytest.approx(expected, rel=0.01)


def test_latent_mask_coverage_rule():
    px = np.zeros((1, 1, 4, 4))
    px[0, 0, :2, :2] = [[1, 1], [0, 0]]  # half of the top-left block
    px[0, 0, 2:, 2:] = [[1, 0], [0, 0]]  # a quarter of the bottom-right block
    lat = tj.latent_masks(px, 2)
    assert lat[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_build_light_maps_shapes():
    seq = tj.build_light_maps(tj.linear_sweep(5), 32, 48, latent_scale=8)
    assert seq.maps.shape == (5, 1, 32, 48)
    assert seq.masks_pixel.shape == (5, 1, 32, 48)
    assert seq.masks_latent.shape == (5, 1, 4, 6)
    assert set(np.unique(seq.masks_pixel)) <= {0.0, 1.0}
    assert len(seq.states) == 5


def test_json_round_trip(tmp_path):
    spec = tj.TrajectorySpec((
        tj.SourceTrack(tj.Linear((0.1, 0.2), (0.9, 0.8)), 0.1, 0.2, 0.7),
        tj.SourceTrack(tj.Circular((0.5, 0.5), 0.2, 0.0, 3.0), 0.15, 0.15),
        tj.SourceTrack(tj.Polyline(((0, 0), (1, 0), (1, 1))), 0.3, 0.1),
    ), 7)
    p = tmp_path / "t.json"
    p.write_text(json.dumps(tj.spec_to_dict(spec)))
    assert tj.load_spec(p) == spec


@pytest.mark.parametrize("bad", [
    {"frames": 4},
    {"frames": 4, "sources": [{"pattern": "spiral"}]},
    {"frames": 4, "sources": [{"pattern": "linear", "start": [0, 0], "end": [1, 1], "radius": 0}]},
    {"frames": 0, "sources": [{"pattern": "linear", "start": [0, 0], "end": [1, 1]}]},
    {"frames": 4, "sources": []},
])
def test_invalid_json_rejected(bad):
    with pytest.raises(tj.TrajectoryError):
        tj.spec_from_dict(bad)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 1), st.floats(0, 1))
def test_maps_bounded_and_peak_at_centre(cx, cy, r, inten):
    m = tj.rasterize([tj.SourceState((cx, cy), r, inten)], 16, 16)
    assert m.min() >= 0.0 and m.max() <= inten + 1e-12


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=6), st.floats(0, 1))
def test_polyline_stays_on_path_bbox(pts, u):
    if all(p == pts[0] for p in pts):
        return
    x, y = tj.Polyline(tuple(pts)).at(u)
    xs, ys = zip(*pts)
    assert min(xs) - 1e-9 <= x <= max(xs) + 1e-9
    assert min(ys) - 1e-9 <= y <= max(ys) + 1e-9
