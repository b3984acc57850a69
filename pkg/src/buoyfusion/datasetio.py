"""Dataset formats, augmentation, and synthetic scene generation.

On-disk layout (all paths relative to the dataset root):

    manifest.jsonl        one JSON object per frame (format_version, frame_id,
                          image path, scene_seed, split, pose)
    markers.csv           chart snapshot in the chartdb CSV format
    calibration.txt       camera intrinsics + mount in the camera format
    images/<id>.png       RGB scene
    labels/<id>.txt       one object per line: "class cx cy w h", normalized
    associations/<id>.json  {"format_version": 1, "associations":
                            {"<line index>": "<marker id>", ...}}

Floats in the manifest and label files are written with repr so that
load(save(dataset)) is an exact identity on every record.

The synthetic generator renders buoys as discs through the camera
module's pinhole projection.  Each disc is anchored so its bottom-center
pixel is the waterline projection of the buoy, which is what ties the
emitted boxes to raycast_to_water: on a clean spec (no pose jitter, no
mis-mapping) reprojecting a mapped marker lands on the box bottom-center
to float precision.  Scenes are rendered from the TRUE pose; the
manifest records the jittered pose, so pose error enters training data
the same way it enters real logs: through the metadata, not the pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import (
    BoundingBox,
    CameraExtrinsics,
    CameraIntrinsics,
    build_extrinsics,
    load_calibration,
    project_to_pixel,
    save_calibration,
)
from .chartdb import (
    BuoyQuery,
    ChartMarker,
    MarkerStore,
    SelectionParams,
    load_markers,
    save_markers,
    select_markers,
)
from .fusion.train import TrainSample
from .geo import (
    BodyFramePoint,
    CameraPose,
    GeodeticPosition,
    PolarOffset,
    body_to_geodetic,
    polar_to_body,
)

FORMAT_VERSION = 1

SPLITS = ("train", "val", "test")

# Disc radius in pixels is clipped to this range after the 1/dist law.
MIN_DISC_RADIUS_PX = 2.5
MAX_DISC_RADIUS_PX = 12.0

# Fixed buoy paint palette, one entry drawn per buoy.
BUOY_COLORS = (
    (0.85, 0.12, 0.10),
    (0.10, 0.70, 0.18),
    (0.93, 0.80, 0.12),
)


class DatasetFormatError(ValueError):
    """A dataset file violates the documented format or an invariant."""


@dataclass(frozen=True)
class LabeledBox:
    """One labeled object: a normalized box plus its chart association.

    marker_id is None for visible but unmapped objects; they are
    negatives for association but still count as detections.
    """

    box: BoundingBox
    marker_id: str | None = None
    cls: int = 0

    def __post_init__(self) -> None:
        if not self.box.normalized:
            raise ValueError("LabeledBox requires a normalized BoundingBox")
        b = self.box
        for name, v in (("c_x", b.c_x), ("c_y", b.c_y), ("w", b.w), ("h", b.h)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"normalized box {name}={v} outside [0, 1]")
        if self.cls < 0:
            raise ValueError(f"class must be >= 0, got {self.cls}")


@dataclass(frozen=True)
class FrameRecord:
    """One frame: image path, recorded pose, labels, and split."""

    frame_id: str
    image: str
    pose: CameraPose
    labels: tuple[LabeledBox, ...]
    split: str
    scene_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"split {self.split!r} not one of {SPLITS}")


@dataclass(frozen=True)
class Dataset:
    """Immutable handle over a dataset directory.

    All state is read at load time; scene pixels are fetched on demand.
    Reads are pure, so concurrent random access needs no locking.
    """

    root: Path
    records: tuple[FrameRecord, ...]
    store: MarkerStore
    intrinsics: CameraIntrinsics
    mount: np.ndarray
    _by_id: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        for r in self.records:
            if r.frame_id in self._by_id:
                raise DatasetFormatError(f"duplicate frame_id {r.frame_id!r}")
            self._by_id[r.frame_id] = r

    def __len__(self) -> int:
        return len(self.records)

    def frames(self, split: str | None = None) -> tuple[FrameRecord, ...]:
        if split is None:
            return self.records
        if split not in SPLITS:
            raise ValueError(f"split {split!r} not one of {SPLITS}")
        return tuple(r for r in self.records if r.split == split)

    def record(self, frame_id: str) -> FrameRecord:
        try:
            return self._by_id[frame_id]
        except KeyError:
            raise KeyError(f"unknown frame_id {frame_id!r}") from None

    def load_scene(self, record: FrameRecord) -> np.ndarray:
        """Load the frame image as [H, W, 3] float64 in [0, 1]."""
        img = Image.open(self.root / record.image).convert("RGB")
        return np.asarray(img, dtype=np.float64) / 255.0

    def sample(
        self,
        frame_id: str,
        selection: SelectionParams = SelectionParams(),
        augment: "AugmentConfig | None" = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[TrainSample, int]:
        rec = self.record(frame_id)
        return make_sample(
            rec,
            self.store,
            self.load_scene(rec),
            selection=selection,
            augment=augment or AugmentConfig(),
            rng=rng,
        )


def _pose_to_json(pose: CameraPose) -> dict:
    return {
        "lat": pose.position.lat,
        "lon": pose.position.lon,
        "heading": pose.heading,
        "roll": pose.roll,
        "pitch": pose.pitch,
        "height": pose.height,
        "timestamp": pose.timestamp,
    }


def _pose_from_json(d: dict) -> CameraPose:
    return CameraPose(
        position=GeodeticPosition(float(d["lat"]), float(d["lon"])),
        heading=float(d["heading"]),
        roll=float(d["roll"]),
        pitch=float(d["pitch"]),
        height=float(d["height"]),
        timestamp=float(d["timestamp"]),
    )


def pose_extrinsics(pose: CameraPose, mount: np.ndarray | tuple = (0.0, 0.0, 0.0)) -> CameraExtrinsics:
    """Camera extrinsics for a pose: IMU roll/pitch, yaw 0 (heading is
    consumed by the geodetic transform), per-frame height overriding the
    static mount z."""
    m = np.asarray(mount, dtype=np.float64)
    return build_extrinsics(
        math.radians(pose.roll),
        math.radians(pose.pitch),
        0.0,
        [float(m[0]), float(m[1]), pose.height],
    )


# ---------------------------------------------------------------------------
# load / save


def _parse_label_file(path: Path) -> list[tuple[int, BoundingBox]]:
    out = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DatasetFormatError(
                f"{path}:{lineno}: expected 'class cx cy w h', got {len(parts)} fields"
            )
        try:
            cls = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
            box = BoundingBox(c_x=cx, c_y=cy, w=w, h=h, normalized=True)
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
        out.append((cls, box))
    return out


def _parse_association_file(path: Path, n_labels: int, store: MarkerStore) -> dict[int, str]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "associations" not in doc:
        raise DatasetFormatError(f"{path}: expected an object with 'associations'")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format_version {version!r}")
    assoc: dict[int, str] = {}
    for key, marker_id in doc["associations"].items():
        try:
            idx = int(key)
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: non-integer line index {key!r}") from exc
        if not 0 <= idx < n_labels:
            raise DatasetFormatError(
                f"{path}: line index {idx} outside label file range [0, {n_labels})"
            )
        if idx in assoc:
            raise DatasetFormatError(f"{path}: duplicate line index {idx}")
        if not isinstance(marker_id, str) or store.get(marker_id) is None:
            raise DatasetFormatError(f"{path}: references unknown marker {marker_id!r}")
        assoc[idx] = marker_id
    return assoc


def load_dataset(root: str | Path) -> Dataset:
    """Load and validate a dataset directory.

    Every record is checked against the invariants (normalized boxes,
    known marker ids, valid split); violations raise DatasetFormatError
    with a file and line diagnostic.
    """
    root = Path(root)
    missing = [
        n for n in ("manifest.jsonl", "markers.csv", "calibration.txt") if not (root / n).exists()
    ]
    if missing:
        raise DatasetFormatError(f"{root}: missing required files {missing}")
    intrinsics, mount = load_calibration(root / "calibration.txt")
    store = load_markers(root / "markers.csv")

    manifest = root / "manifest.jsonl"
    records = []
    seen: set[str] = set()
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{manifest}:{lineno}: invalid JSON: {exc}") from exc
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise DatasetFormatError(
                f"{manifest}:{lineno}: unsupported format_version {version!r}"
            )
        try:
            frame_id = doc["frame_id"]
            image = doc["image"]
            split = doc["split"]
            pose = _pose_from_json(doc["pose"])
            scene_seed = doc.get("scene_seed")
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{manifest}:{lineno}: {exc}") from exc
        if frame_id in seen:
            raise DatasetFormatError(f"{manifest}:{lineno}: duplicate frame_id {frame_id!r}")
        seen.add(frame_id)
        if not (root / image).exists():
            raise DatasetFormatError(f"{manifest}:{lineno}: image file {image!r} not found")

        label_path = root / "labels" / f"{frame_id}.txt"
        assoc_path = root / "associations" / f"{frame_id}.json"
        for p in (label_path, assoc_path):
            if not p.exists():
                raise DatasetFormatError(f"{manifest}:{lineno}: missing {p.name}")
        raw_labels = _parse_label_file(label_path)
        assoc = _parse_association_file(assoc_path, len(raw_labels), store)
        try:
            labels = tuple(
                LabeledBox(box=box, marker_id=assoc.get(i), cls=cls)
                for i, (cls, box) in enumerate(raw_labels)
            )
            records.append(
                FrameRecord(
                    frame_id=frame_id,
                    image=image,
                    pose=pose,
                    labels=labels,
                    split=split,
                    scene_seed=scene_seed,
                )
            )
        except ValueError as exc:
            raise DatasetFormatError(f"{label_path}: {exc}") from exc
    return Dataset(
        root=root, records=tuple(records), store=store, intrinsics=intrinsics, mount=mount
    )


def save_dataset(ds: Dataset, out_root: str | Path) -> None:
    """Write a dataset to a new root; load_dataset(out_root) round-trips.

    Scene pixels are copied byte-for-byte.  Single writer per output
    directory; readers of the source handle are unaffected.
    """
    out = Path(out_root)
    for sub in ("images", "labels", "associations"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    save_calibration(out / "calibration.txt", ds.intrinsics, ds.mount)
    save_markers(out / "markers.csv", ds.store)
    lines = []
    for rec in ds.records:
        (out / rec.image).parent.mkdir(parents=True, exist_ok=True)
        (out / rec.image).write_bytes((ds.root / rec.image).read_bytes())
        _write_annotations(out, rec)
        lines.append(_manifest_line(rec))
    (out / "manifest.jsonl").write_text("".join(lines), encoding="utf-8")


def _manifest_line(rec: FrameRecord) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "frame_id": rec.frame_id,
        "image": rec.image,
        "scene_seed": rec.scene_seed,
        "split": rec.split,
        "pose": _pose_to_json(rec.pose),
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def _write_annotations(root: Path, rec: FrameRecord) -> None:
    label_lines = []
    assoc: dict[str, str] = {}
    for i, lb in enumerate(rec.labels):
        b = lb.box
        label_lines.append(f"{lb.cls} {b.c_x!r} {b.c_y!r} {b.w!r} {b.h!r}\n")
        if lb.marker_id is not None:
            assoc[str(i)] = lb.marker_id
    (root / "labels" / f"{rec.frame_id}.txt").write_text("".join(label_lines), encoding="utf-8")
    (root / "associations" / f"{rec.frame_id}.json").write_text(
        json.dumps({"format_version": FORMAT_VERSION, "associations": assoc}, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """Which augmentations to apply and the query-noise magnitudes.

    Query noise is uniform: dist gets +-noise_dist_frac * d_max meters,
    bearing +-noise_bearing_deg degrees.  The defaults are the
    configurable fallback for an unreported magnitude upstream.
    """

    hflip: bool = False
    vflip: bool = False
    query_noise: bool = False
    noise_dist_frac: float = 0.05
    noise_bearing_deg: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_dist_frac <= 1.0:
            raise ValueError(f"noise_dist_frac {self.noise_dist_frac} outside [0, 1]")
        if self.noise_bearing_deg < 0.0:
            raise ValueError(f"noise_bearing_deg must be >= 0, got {self.noise_bearing_deg}")


def hflip_sample(sample: TrainSample) -> TrainSample:
    """Mirror image columns, negate query bearings, reflect box cx.

    The three transforms must move together: the image mirror maps a
    buoy at column cx to 1 - cx, and the same mirror maps its bearing b
    to -b in the chart domain.  Applying this twice is the identity.
    """
    queries = tuple(
        BuoyQuery(marker_id=q.marker_id, polar=PolarOffset(q.polar.dist, -q.polar.bearing))
        for q in sample.queries
    )
    boxes = {m: (1.0 - cx, cy, w, h) for m, (cx, cy, w, h) in sample.boxes.items()}
    return TrainSample(scene=sample.scene[:, ::-1, :].copy(), queries=queries, boxes=boxes)


def vflip_sample(sample: TrainSample) -> TrainSample:
    """Mirror image rows and box cy; queries untouched.

    A vertical flip has no chart-domain analogue on the water plane, so
    bearings and distances stay as they are.
    """
    boxes = {m: (cx, 1.0 - cy, w, h) for m, (cx, cy, w, h) in sample.boxes.items()}
    return TrainSample(scene=sample.scene[::-1, :, :].copy(), queries=sample.queries, boxes=boxes)


def make_sample(
    record: FrameRecord,
    store: MarkerStore,
    scene: np.ndarray,
    selection: SelectionParams = SelectionParams(),
    augment: AugmentConfig = AugmentConfig(),
    rng: np.random.Generator | None = None,
) -> tuple[TrainSample, int]:
    """Build one training sample from a frame record.

    Queries come from select_markers on the recorded pose; ground truth
    visibility is marker-id membership in the labels.  Returns the
    sample plus a selection-miss count: labeled markers the selection
    did not produce a query for (warning-level, not fatal).

    Flips are applied before query noise.  Noise draws consume rng in
    query order (dist then bearing per query), so a seeded generator
    reproduces a sample exactly.
    """
    queries = select_markers(store, record.pose, selection)
    selected_ids = {q.marker_id for q in queries}
    boxes: dict[str, tuple[float, float, float, float]] = {}
    misses = 0
    for lb in record.labels:
        if lb.marker_id is None:
            continue
        if lb.marker_id in selected_ids:
            b = lb.box
            boxes[lb.marker_id] = (b.c_x, b.c_y, b.w, b.h)
        else:
            misses += 1
    sample = TrainSample(scene=scene, queries=tuple(queries), boxes=boxes)
    if augment.hflip:
        sample = hflip_sample(sample)
    if augment.vflip:
        sample = vflip_sample(sample)
    if augment.query_noise:
        if rng is None:
            raise ValueError("query_noise requires an rng")
        noisy = []
        b_mag = math.radians(augment.noise_bearing_deg)
        for q in sample.queries:
            dd = float(rng.uniform(-1.0, 1.0)) * augment.noise_dist_frac * selection.d_max
            db = float(rng.uniform(-1.0, 1.0)) * b_mag
            dist = min(max(q.polar.dist + dd, 0.0), selection.d_max)
            noisy.append(
                BuoyQuery(marker_id=q.marker_id, polar=PolarOffset(dist, q.polar.bearing + db))
            )
        sample = TrainSample(scene=sample.scene, queries=tuple(noisy), boxes=sample.boxes)
    return sample, misses


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Parameters of the synthetic buoy-scene generator.

    buoys_per_frame is the inclusive range of rendered buoys; each one
    is independently unmapped (absent from the chart) with
    unmapped_prob, so the dataset-level unmapped fraction is binomial.
    phantoms_per_frame markers exist on the chart with no rendered buoy,
    exercising visibility-0 queries.  Pose jitter perturbs only the
    recorded pose; mis-mapping perturbs only the chart position.
    """

    seed: int = 0
    image_hw: tuple[int, int] = (54, 96)
    water_rgb: tuple[float, float, float] = (0.08, 0.22, 0.38)
    sky_rgb: tuple[float, float, float] = (0.62, 0.74, 0.88)
    buoys_per_frame: tuple[int, int] = (2, 5)
    phantoms_per_frame: tuple[int, int] = (0, 2)
    unmapped_prob: float = 0.0
    dist_range: tuple[float, float] = (40.0, 180.0)
    buoy_radius_m: float = 3.0
    camera_height_m: float = 3.0
    pose_jitter_heading_deg: float = 0.0
    pose_jitter_pos_m: float = 0.0
    mismap_prob: float = 0.0
    mismap_offset_m: float = 30.0
    split_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        for name in ("unmapped_prob", "mismap_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")
        for name in ("buoys_per_frame", "phantoms_per_frame"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} range ({lo}, {hi}) invalid")
        lo, hi = self.dist_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"dist_range ({lo}, {hi}) invalid")
        h, w = self.image_hw
        if h < 8 or w < 8:
            raise ValueError(f"image_hw {self.image_hw} too small")
        for name in (
            "buoy_radius_m",
            "camera_height_m",
            "pose_jitter_heading_deg",
            "pose_jitter_pos_m",
            "mismap_offset_m",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0.0:
            raise ValueError(f"split_fractions {self.split_fractions} must be >= 0 and sum to 1")

    def intrinsics(self) -> CameraIntrinsics:
        """60 degree horizontal field of view, principal point centered."""
        h, w = self.image_hw
        f_px = (w / 2.0) / math.tan(math.radians(30.0))
        return CameraIntrinsics(
            u_0=w / 2.0, v_0=h / 2.0, f_s=f_px, f_l=1.0, image_w=w, image_h=h
        )


def _split_plan(n_frames: int, fractions: tuple[float, float, float]) -> list[str]:
    n_train = round(n_frames * fractions[0])
    n_val = round(n_frames * fractions[1])
    n_train = min(n_train, n_frames)
    n_val = min(n_val, n_frames - n_train)
    plan = ["train"] * n_train + ["val"] * n_val + ["test"] * (n_frames - n_train - n_val)
    return plan


def _render_scene(
    spec: SyntheticSceneSpec,
    intr: CameraIntrinsics,
    discs: list[tuple[float, float, float, tuple[float, float, float]]],
) -> np.ndarray:
    """Paint sky above the horizon row, water below, then discs far to
    near.  discs entries are (u, v_center, radius, rgb)."""
    h, w = spec.image_hw
    img = np.empty((h, w, 3), dtype=np.float64)
    rows = np.arange(h)[:, None, None]
    img[:] = np.where(rows < intr.v_0, np.array(spec.sky_rgb), np.array(spec.water_rgb))
    for u, vc, r, color in discs:
        r0 = max(int(math.floor(vc - r)), 0)
        r1 = min(int(math.ceil(vc + r)) + 1, h)
        c0 = max(int(math.floor(u - r)), 0)
        c1 = min(int(math.ceil(u + r)) + 1, w)
        yy, xx = np.mgrid[r0:r1, c0:c1]
        mask = (xx - u) ** 2 + (yy - vc) ** 2 <= r * r
        img[r0:r1, c0:c1][mask] = color
    return img


def generate_synthetic(
    spec: SyntheticSceneSpec, n_frames: int, out_root: str | Path
) -> Dataset:
    """Render a synthetic dataset to out_root and return its handle.

    Deterministic per spec.seed: the rng draw order is fixed (per frame:
    heading, buoy placements with bounded rejection, per-buoy unmapped
    flag / color / mis-map coin, phantom placements, pose jitter), so
    the same spec writes byte-identical files.  Frames sit on a 2 km
    grid, far beyond selection range of each other's markers.
    """
    if n_frames < 0:
        raise ValueError(f"n_frames must be >= 0, got {n_frames}")
    out = Path(out_root)
    rng = np.random.default_rng(spec.seed)
    intr = spec.intrinsics()
    h, w = spec.image_hw
    f_px = intr.f_px
    hfov = math.atan(w / (2.0 * f_px))
    draw_bearing = 0.92 * hfov
    mount = np.array([0.0, 0.0, spec.camera_height_m])
    splits = _split_plan(n_frames, spec.split_fractions)

    markers: list[ChartMarker] = []
    records: list[FrameRecord] = []
    marker_counter = 0
    for sub in ("images", "labels", "associations"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    for i in range(n_frames):
        frame_id = f"fr{i:05d}"
        base = GeodeticPosition(41.0 + (i // 50) * 0.02, 8.0 + (i % 50) * 0.03)
        heading = float(rng.uniform(0.0, 360.0))
        true_pose = CameraPose(
            position=base, heading=heading, height=spec.camera_height_m, timestamp=float(i)
        )
        extr = pose_extrinsics(true_pose, mount)

        n_buoys = int(rng.integers(spec.buoys_per_frame[0], spec.buoys_per_frame[1] + 1))
        placed: list[tuple[float, float, float, float, float]] = []
        for _ in range(n_buoys):
            # Bounded rejection keeps the disc fully inside the image;
            # a dropped slot after 30 tries is fine (labels drive truth).
            for _attempt in range(30):
                dist = float(rng.uniform(*spec.dist_range))
                bearing = float(rng.uniform(-draw_bearing, draw_bearing))
                u, v_water = project_to_pixel(polar_to_body(PolarOffset(dist, bearing)), intr, extr)
                r = min(max(f_px * spec.buoy_radius_m / dist, MIN_DISC_RADIUS_PX), MAX_DISC_RADIUS_PX)
                vc = v_water - r
                if u - r >= 0.0 and u + r <= w and vc - r >= 0.0 and v_water <= h:
                    placed.append((dist, bearing, u, vc, r))
                    break

        # Far to near so close buoys overdraw distant ones.
        placed.sort(key=lambda t: -t[0])
        discs = []
        labels: list[LabeledBox] = []
        for dist, bearing, u, vc, r in placed:
            unmapped = bool(rng.random() < spec.unmapped_prob)
            color = BUOY_COLORS[int(rng.integers(0, len(BUOY_COLORS)))]
            marker_id = None
            if not unmapped:
                marker_id = f"B{marker_counter:05d}"
                marker_counter += 1
                body = polar_to_body(PolarOffset(dist, bearing))
                if rng.random() < spec.mismap_prob:
                    phi = float(rng.uniform(0.0, 2.0 * math.pi))
                    body = BodyFramePoint(
                        body.x_b + spec.mismap_offset_m * math.cos(phi),
                        body.y_b + spec.mismap_offset_m * math.sin(phi),
                        0.0,
                    )
                markers.append(
                    ChartMarker(id=marker_id, position=body_to_geodetic(body, true_pose))
                )
            discs.append((u, vc, r, color))
            box = BoundingBox(
                c_x=u / w, c_y=vc / h, w=2.0 * r / w, h=2.0 * r / h, normalized=True
            )
            labels.append(LabeledBox(box=box, marker_id=marker_id))

        n_phantoms = int(
            rng.integers(spec.phantoms_per_frame[0], spec.phantoms_per_frame[1] + 1)
        )
        for _ in range(n_phantoms):
            dist = float(rng.uniform(*spec.dist_range))
            bearing = float(rng.uniform(-draw_bearing, draw_bearing))
            marker_id = f"B{marker_counter:05d}"
            marker_counter += 1
            markers.append(
                ChartMarker(
                    id=marker_id,
                    position=body_to_geodetic(polar_to_body(PolarOffset(dist, bearing)), true_pose),
                )
            )

        # Recorded pose: heading and position jitter, drawn every frame
        # so the stream layout does not depend on the std values.
        dh = float(rng.normal(0.0, 1.0)) * spec.pose_jitter_heading_deg
        dn = float(rng.normal(0.0, 1.0)) * spec.pose_jitter_pos_m
        de = float(rng.normal(0.0, 1.0)) * spec.pose_jitter_pos_m
        recorded_pos = body_to_geodetic(
            # jitter given in north/east: rotate into the body frame of a
            # north-facing pose at the same position
            BodyFramePoint(dn, -de, 0.0),
            CameraPose(position=base, heading=0.0),
        )
        recorded_pose = CameraPose(
            position=recorded_pos,
            heading=heading + dh,
            height=spec.camera_height_m,
            timestamp=float(i),
        )

        img = _render_scene(spec, intr, discs)
        png = Image.fromarray(np.round(img * 255.0).astype(np.uint8), "RGB")
        image_rel = f"images/{frame_id}.png"
        png.save(out / image_rel)
        rec = FrameRecord(
            frame_id=frame_id,
            image=image_rel,
            pose=recorded_pose,
            labels=tuple(labels),
            split=splits[i],
            scene_seed=spec.seed,
        )
        _write_annotations(out, rec)
        records.append(rec)

    save_calibration(out / "calibration.txt", intr, mount)
    save_markers(out / "markers.csv", MarkerStore(markers=tuple(markers)))
    (out / "manifest.jsonl").write_text(
        "".join(_manifest_line(r) for r in records), encoding="utf-8"
    )
    return load_dataset(out)
