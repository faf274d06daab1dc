"""Bit-exact little-endian file formats and dataset directory layout.

Formats (all little-endian):

* point cloud ``UOPC``: u32 version=1, u64 count, then per point
  3 x f32 (x, y, z), u8 label, u8 dynamic flag, 2 zero pad bytes.
* pose ``UOPS``: u32 version=1, 12 x f64 (row-major 3x3 rotation, then
  translation xyz).
* occupancy grid ``UOOG``: u32 version=1, u32 D, H, W, 3 x f32 origin
  (x, y, z), 3 x f32 voxel size (v_Z, v_H, v_W), then ceil(D*H*W/8) bytes
  of bits; bit index ((d*H)+h)*W+w, little-endian bit order within a byte.
* semantic grid ``UOSG``: same header as UOOG, then D*H*W class-id bytes.
* image raster ``UOIR``: u32 version=1, u32 channels, h, w, then f32 data
  in channel-major (C, h, w) order.

Malformed files raise FormatError with the byte offset and expectation.
All writers go through a temp file + rename, so files appear atomically.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import SE3Pose
from .pointcloud import PointCloud
from .voxels import OccupancyGrid, SemanticGrid, VoxelGridSpec

MAGIC_CLOUD = b"UOPC"
MAGIC_POSE = b"UOPS"
MAGIC_OCC = b"UOOG"
MAGIC_SEM = b"UOSG"
MAGIC_CHECKPOINT = b"UOCK"
MAGIC_RASTER = b"UOIR"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class ByteReader:
    """Sequential reader that reports byte offsets on malformed input."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(f"truncated file: expected {what}", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self.take(4, f"magic {expected.decode()!r}")
        if got != expected:
            raise FormatError(
                f"expected magic {expected.decode()!r}, found {got!r}",
                self.offset - 4)

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32s(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float64)

    def f64s(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)

    def version(self, expected: int = 1) -> None:
        v = self.u32("format version")
        if v != expected:
            raise FormatError(f"unsupported version {v}, expected {expected}",
                              self.offset - 4)

    def done(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.offset} unexpected trailing bytes",
                self.offset)


# --- point clouds ----------------------------------------------------------

def cloud_to_bytes(cloud: PointCloud) -> bytes:
    n = len(cloud)
    out = bytearray()
    out += MAGIC_CLOUD
    out += struct.pack("<IQ", 1, n)
    rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("label", "u1"),
                             ("dyn", "u1"), ("pad", "u1", 2)])
    rec["xyz"] = cloud.positions.astype("<f4")
    rec["label"] = cloud.labels
    rec["dyn"] = cloud.dynamic.astype("u1")
    out += rec.tobytes()
    return bytes(out)


def cloud_from_bytes(data: bytes, frame: str) -> PointCloud:
    r = ByteReader(data)
    r.magic(MAGIC_CLOUD)
    r.version()
    n = r.u64("point count")
    raw = r.take(16 * n, f"{n} point records")
    r.done()
    rec = np.frombuffer(raw, dtype=[("xyz", "<f4", 3), ("label", "u1"),
                                    ("dyn", "u1"), ("pad", "u1", 2)])
    return PointCloud(rec["xyz"].astype(np.float64), rec["label"].copy(),
                      rec["dyn"].astype(bool), frame)


# --- poses -----------------------------------------------------------------

def pose_to_bytes(pose: SE3Pose) -> bytes:
    vals = np.concatenate([pose.rotation.reshape(9), pose.translation])
    return MAGIC_POSE + struct.pack("<I", 1) + vals.astype("<f8").tobytes()


def pose_from_bytes(data: bytes) -> SE3Pose:
    r = ByteReader(data)
    r.magic(MAGIC_POSE)
    r.version()
    vals = r.f64s(12, "rotation+translation")
    r.done()
    return SE3Pose(vals[:9].reshape(3, 3), vals[9:])


# --- voxel grids -----------------------------------------------------------

def _grid_header(spec: VoxelGridSpec) -> bytes:
    d, h, w = spec.dims
    return (struct.pack("<III", d, h, w)
            + np.asarray(spec.origin, dtype="<f4").tobytes()
            + np.asarray(spec.voxel_size, dtype="<f4").tobytes())


def _read_grid_header(r: ByteReader) -> VoxelGridSpec:
    d = r.u32("grid D")
    h = r.u32("grid H")
    w = r.u32("grid W")
    origin = tuple(r.f32s(3, "grid origin"))
    voxel = tuple(r.f32s(3, "voxel size"))
    return VoxelGridSpec(origin=origin, voxel_size=voxel, dims=(d, h, w))


def occupancy_to_bytes(grid: OccupancyGrid) -> bytes:
    bits = np.packbits(grid.data.reshape(-1), bitorder="little")
    return (MAGIC_OCC + struct.pack("<I", 1) + _grid_header(grid.spec)
            + bits.tobytes())


def occupancy_from_bytes(data: bytes) -> OccupancyGrid:
    r = ByteReader(data)
    r.magic(MAGIC_OCC)
    r.version()
    spec = _read_grid_header(r)
    n = spec.n_cells
    raw = r.take((n + 7) // 8, "occupancy bitset")
    r.done()
    values = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                           bitorder="little")[:n]
    return OccupancyGrid(spec, values.reshape(spec.dims))


def semantic_to_bytes(grid: SemanticGrid) -> bytes:
    return (MAGIC_SEM + struct.pack("<I", 1) + _grid_header(grid.spec)
            + grid.data.reshape(-1).astype(np.uint8).tobytes())


def semantic_from_bytes(data: bytes) -> SemanticGrid:
    r = ByteReader(data)
    r.magic(MAGIC_SEM)
    r.version()
    spec = _read_grid_header(r)
    raw = r.take(spec.n_cells, "class ids")
    r.done()
    values = np.frombuffer(raw, dtype=np.uint8).copy()
    return SemanticGrid(spec, values.reshape(spec.dims))


# --- image rasters ---------------------------------------------------------

def raster_to_bytes(image: np.ndarray) -> bytes:
    c, h, w = image.shape
    return (MAGIC_RASTER + struct.pack("<IIII", 1, c, h, w)
            + np.ascontiguousarray(image, dtype="<f4").tobytes())


def raster_from_bytes(data: bytes) -> np.ndarray:
    r = ByteReader(data)
    r.magic(MAGIC_RASTER)
    r.version()
    c = r.u32("channel count")
    h = r.u32("raster height")
    w = r.u32("raster width")
    vals = r.f32s(c * h * w, "raster data")
    r.done()
    return vals.reshape(c, h, w)


# --- dataset directories ---------------------------------------------------

def _seq_dir(root: Path, s: int) -> Path:
    return Path(root) / f"seq_{s:03d}"


def _frame_dir(root: Path, s: int, k: int) -> Path:
    return _seq_dir(root, s) / f"frame_{k:03d}"


def write_dataset(root, config, sequences) -> None:
    """Persist generated sequences plus the config that produced them."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / "config.txt", config.canonical_text())
    manifest = [f"dataset.n_sequences = {len(sequences)}\n"]
    for s, frames in enumerate(sequences):
        manifest.append(f"seq{s:03d}.n_frames = {len(frames)}\n")
        for k, frame in enumerate(frames):
            manifest.append(
                f"seq{s:03d}.frame{k:03d}.timestamp = {frame.timestamp!r}\n")
            manifest.append(
                f"seq{s:03d}.frame{k:03d}.keyframe = {int(frame.is_keyframe)}\n")
            fdir = _frame_dir(root, s, k)
            atomic_write_bytes(fdir / "cloud.uopc",
                               cloud_to_bytes(frame.point_cloud))
            atomic_write_bytes(fdir / "pose.uops", pose_to_bytes(frame.ego_pose))
            for ci, img in enumerate(frame.images):
                atomic_write_bytes(fdir / f"cam_{ci}.uoir", raster_to_bytes(img))
    atomic_write_text(root / "manifest.txt", "".join(manifest))


def read_dataset(root):
    """Load a dataset directory back into frames (velocities are not stored).

    Returns (config, sequences); the rig is rebuilt from the stored config.
    """
    from .config import RunConfig
    from .pointcloud import ego_frame
    from .sensors import MultiCameraFrame

    root = Path(root)
    config = RunConfig.from_text((root / "config.txt").read_text("utf-8"))
    from .config import parse_kv_text
    manifest = parse_kv_text((root / "manifest.txt").read_text("utf-8"))
    rig = config.rig()
    n_seq = int(manifest["dataset.n_sequences"])
    sequences = []
    for s in range(n_seq):
        n_frames = int(manifest[f"seq{s:03d}.n_frames"])
        frames = []
        for k in range(n_frames):
            t = float(manifest[f"seq{s:03d}.frame{k:03d}.timestamp"])
            keyframe = bool(int(manifest[f"seq{s:03d}.frame{k:03d}.keyframe"]))
            fdir = _frame_dir(root, s, k)
            pose = pose_from_bytes((fdir / "pose.uops").read_bytes())
            cloud = cloud_from_bytes((fdir / "cloud.uopc").read_bytes(),
                                     ego_frame(t))
            images = np.stack([
                raster_from_bytes((fdir / f"cam_{ci}.uoir").read_bytes())
                for ci in range(len(rig))
            ])
            frames.append(MultiCameraFrame(images=images, rig=rig,
                                           ego_pose=pose, timestamp=t,
                                           point_cloud=cloud,
                                           is_keyframe=keyframe))
        sequences.append(frames)
    return config, sequences


# --- grid dumps ------------------------------------------------------------

def dump_grid_ascii(grid) -> str:
    """Depth slices as character rows: '.' free, '#' or the class digit."""
    semantic = isinstance(grid, SemanticGrid)
    lines = []
    d_dim, h_dim, _ = grid.spec.dims
    for d in range(d_dim):
        lines.append(f"slice d={d}")
        for h in range(h_dim):
            row = grid.data[d, h]
            if semantic:
                lines.append("".join("." if v == 0 else str(int(v) % 10)
                                     for v in row))
            else:
                lines.append("".join("." if v == 0 else "#" for v in row))
    return "\n".join(lines) + "\n"


def dump_grid_csv(grid) -> str:
    """Occupied cells as csv rows in row-major (d, h, w) order."""
    semantic = isinstance(grid, SemanticGrid)
    header = "d,h,w,class" if semantic else "d,h,w"
    lines = [header]
    for d, h, w in np.argwhere(grid.data):
        if semantic:
            lines.append(f"{d},{h},{w},{int(grid.data[d, h, w])}")
        else:
            lines.append(f"{d},{h},{w}")
    return "\n".join(lines) + "\n"
