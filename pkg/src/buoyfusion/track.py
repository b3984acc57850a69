"""Two-stage IoU tracker and online camera calibration.

The tracker is a deliberate reduction of the published two-stage
scheme: no motion model (buoys are near-static in frame over short
horizons), association purely by IoU.  Stage 1 matches existing tracks
to high-score detections, stage 2 gives leftover tracks a chance on
low-score detections, unmatched high-score detections spawn tracks.

Calibration estimates two slowly varying biases from confidently
matched tracks: a heading offset b_h (radians, chart minus observed
bearing) and a multiplicative focal-scale correction r with
tan(bearing_true) = r * tan(bearing_observed).  An observer whose
focal scale is 1.1x too large therefore converges to r = 1.1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .assoc import box_iou, hungarian
from .camera import BoundingBox
from .geo import wrap_angle


@dataclass(frozen=True)
class TrackerParams:
    s_high: float = 0.5
    s_low: float = 0.1
    max_age: int = 30
    ema_beta: float = 0.9
    delta_up: float = 0.2
    delta_down: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.s_low <= self.s_high <= 1.0:
            raise ValueError("need 0 <= s_low <= s_high <= 1")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if not 0.0 <= self.ema_beta < 1.0:
            raise ValueError("ema_beta must be in [0, 1)")


@dataclass
class Track:
    track_id: int
    last_box: BoundingBox
    age: int = 1
    hits: int = 1
    misses: int = 0
    dist_ema: float | None = None
    match_confidence: float = 0.0
    associated_marker: str | None = None


class Tracker:
    """Single-stream tracker; one instance per video, single writer."""

    def __init__(self, params: TrackerParams = TrackerParams()):
        self.params = params
        self.tracks: list[Track] = []
        self._next_id = 1

    def step(self, detections: list[BoundingBox]) -> list[Track]:
        """Advance one frame; returns the live track list."""
        p = self.params
        high = [d for d in detections if d.score >= p.s_high]
        low = [d for d in detections if p.s_low <= d.score < p.s_high]

        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        assignments: dict[int, BoundingBox] = {}

        def run_stage(track_idx, dets):
            if not track_idx or not dets:
                return []
            costs = []
            for ti in track_idx:
                row = []
                for d in dets:
                    iou = box_iou(self.tracks[ti].last_box, d)
                    row.append(1.0 - iou if iou > 0.0 else math.inf)
                costs.append(row)
            res = hungarian(costs)
            return [(track_idx[i], int(j)) for i, j, _ in res.pairs]

        stage1 = run_stage(list(range(len(self.tracks))), high)
        for ti, dj in stage1:
            matched_tracks.add(ti)
            matched_dets.add(dj)
            assignments[ti] = high[dj]

        leftover = [i for i in range(len(self.tracks)) if i not in matched_tracks]
        stage2 = run_stage(leftover, low)
        for ti, dj in stage2:
            matched_tracks.add(ti)
            assignments[ti] = low[dj]

        survivors = []
        for i, t in enumerate(self.tracks):
            t.age += 1
            if i in matched_tracks:
                t.last_box = assignments[i]
                t.hits += 1
                t.misses = 0
            else:
                t.misses += 1
            if t.misses <= p.max_age:
                survivors.append(t)
        for j, d in enumerate(high):
            if j not in matched_dets:
                survivors.append(Track(track_id=self._next_id, last_box=d))
                self._next_id += 1
        self.tracks = survivors
        return self.tracks


def update_distance_ema(track: Track, new_dist: float, beta: float = 0.9) -> Track:
    """dist_ema <- beta * dist_ema + (1 - beta) * new_dist (first obs initializes)."""
    if new_dist < 0.0:
        raise ValueError("new_dist must be >= 0")
    if track.dist_ema is None:
        track.dist_ema = new_dist
    else:
        track.dist_ema = beta * track.dist_ema + (1.0 - beta) * new_dist
    return track


def update_confidence(
    track: Track, matched_same_marker: bool, delta_up: float = 0.2, delta_down: float = 0.1
) -> Track:
    if matched_same_marker:
        track.match_confidence = min(1.0, track.match_confidence + delta_up)
    else:
        track.match_confidence = max(0.0, track.match_confidence - delta_down)
        if track.match_confidence == 0.0:
            track.associated_marker = None
    return track


def observe_match(track: Track, marker_id: str | None, params: TrackerParams = TrackerParams()) -> Track:
    """Fold one frame's association into confidence + marker identity."""
    if marker_id is None:
        return update_confidence(track, False, params.delta_up, params.delta_down)
    if track.associated_marker is None:
        track.associated_marker = marker_id
        return update_confidence(track, True, params.delta_up, params.delta_down)
    return update_confidence(
        track, marker_id == track.associated_marker, params.delta_up, params.delta_down
    )


F_S_CORRECTION_RANGE = (0.5, 2.0)
B_H_LIMIT = math.radians(10.0)


@dataclass(frozen=True)
class CalibrationState:
    f_s_correction: float = 1.0
    b_h: float = 0.0
    update_count: int = 0

    def __post_init__(self):
        lo, hi = F_S_CORRECTION_RANGE
        if not lo <= self.f_s_correction <= hi:
            raise ValueError("f_s_correction outside clamp range")
        if abs(self.b_h) > B_H_LIMIT:
            raise ValueError("b_h outside clamp range")


@dataclass(frozen=True)
class CalibParams:
    beta: float = 0.9
    c_min: float = 0.8
    offcenter_frac: float = 0.1
    image_w: int = 960


@dataclass(frozen=True)
class CalibObservation:
    observed_bearing: float
    chart_bearing: float
    pixel_offset: float  # detection column minus principal point, pixels
    confidence: float


def calibrate(
    state: CalibrationState,
    observations: list[CalibObservation],
    params: CalibParams = CalibParams(),
) -> CalibrationState:
    """EMA-fold confident observations into the bias estimates."""
    b_h = state.b_h
    r = state.f_s_correction
    count = state.update_count
    lo, hi = F_S_CORRECTION_RANGE
    for obs in observations:
        if obs.confidence < params.c_min:
            continue
        residual = wrap_angle(obs.chart_bearing - obs.observed_bearing)
        b_h = params.beta * b_h + (1.0 - params.beta) * residual
        b_h = max(-B_H_LIMIT, min(B_H_LIMIT, b_h))
        if abs(obs.pixel_offset) > params.offcenter_frac * params.image_w:
            # remove the current heading-bias estimate so only the
            # focal-scale error remains in the ratio
            chart_rel = obs.chart_bearing - b_h
            t_obs = math.tan(obs.observed_bearing)
            if abs(t_obs) > 1e-9 and abs(obs.observed_bearing) < math.pi / 2 - 0.01:
                ratio = math.tan(chart_rel) / t_obs
                if ratio > 0.0:
                    r = params.beta * r + (1.0 - params.beta) * ratio
                    r = max(lo, min(hi, r))
        count += 1
    return CalibrationState(f_s_correction=r, b_h=b_h, update_count=count)


def apply_calibration(observed_bearing: float, state: CalibrationState) -> float:
    """Corrected bearing: focal-scale fix about the axis, then heading bias."""
    t = math.tan(max(-math.pi / 2 + 1e-6, min(math.pi / 2 - 1e-6, observed_bearing)))
    return wrap_angle(math.atan(t * state.f_s_correction) + state.b_h)


def track_to_dict(track: Track) -> dict:
    b = track.last_box
    return {
        "track_id": track.track_id,
        "box": [b.c_x, b.c_y, b.w, b.h],
        "score": b.score,
        "age": track.age,
        "hits": track.hits,
        "dist_ema": track.dist_ema,
        "match_confidence": track.match_confidence,
        "associated_marker": track.associated_marker,
    }


def dump_tracks_jsonl(fh, frame_id, tracks: list[Track]) -> None:
    """One JSON line per frame: frame id plus full track state."""
    fh.write(json.dumps({"frame_id": frame_id, "tracks": [track_to_dict(t) for t in tracks]}))
    fh.write("\n")
