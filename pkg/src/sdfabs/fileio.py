"""File formats: volumes, shape spaces, depth maps, masks, and manifests.

Binary layouts (all little-endian):

* ``.sdfv`` volume:      magic ``SDFV``, u16 version=1, u32 R, f32 values
  in x-fastest order.
* ``.sspc`` shape space: magic ``SSPC``, u16 version=1, u32 R, u32 N,
  f32 mean[R^3], f32 scales[N], f32 basis[N][R^3], x-fastest.
* ``.pfm`` depth map:    standard grayscale PFM, scale -1.0 (little-endian),
  rows stored bottom-up.
* ``.pgm`` mask:         binary P5, 0 = outside, 255 = inside.

Scene manifests are JSON; datasets use one JSON object per line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SdfabsError
from .estimator import Estimate, View
from .geometry import PinholeCamera, Pose
from .shapespace import ShapeSpace
from .volume import SdfVolume

_SDFV_MAGIC = b"SDFV"
_SSPC_MAGIC = b"SSPC"


class FormatError(SdfabsError):
    """A file does not match its expected layout."""


def save_volume(path: str | Path, vol: SdfVolume) -> None:
    r = vol.resolution
    with open(path, "wb") as f:
        f.write(_SDFV_MAGIC)
        f.write(struct.pack("<HI", 1, r))
        f.write(vol.values.astype("<f4").ravel(order="F").tobytes())


def load_volume(path: str | Path) -> SdfVolume:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SDFV_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, r = struct.unpack("<HI", f.read(6))
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        data = np.frombuffer(f.read(4 * r**3), dtype="<f4")
        if data.size != r**3:
            raise FormatError(f"{path}: truncated volume data")
    return SdfVolume(data.astype(np.float64).reshape((r, r, r), order="F"))


def save_shape_space(path: str | Path, space: ShapeSpace) -> None:
    r = space.resolution

    def to_disk(row):
        return row.reshape((r, r, r)).ravel(order="F")

    with open(path, "wb") as f:
        f.write(_SSPC_MAGIC)
        f.write(struct.pack("<HII", 1, space.resolution, space.latent_dim))
        f.write(to_disk(space.mean).astype("<f4").tobytes())
        f.write(space.scales.astype("<f4").tobytes())
        for row in space.basis:
            f.write(to_disk(row).astype("<f4").tobytes())


def load_shape_space(path: str | Path) -> ShapeSpace:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SSPC_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, r, n = struct.unpack("<HII", f.read(10))
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        voxels = r**3
        mean = np.frombuffer(f.read(4 * voxels), dtype="<f4").astype(np.float64)
        scales = np.frombuffer(f.read(4 * n), dtype="<f4").astype(np.float64)
        basis = np.frombuffer(f.read(4 * n * voxels), dtype="<f4").astype(np.float64)
        if basis.size != n * voxels:
            raise FormatError(f"{path}: truncated basis data")
    # disk rows are x-fastest; memory uses C order of values[ix, iy, iz]
    def from_disk(row):
        return row.reshape((r, r, r), order="F").ravel()

    mean = from_disk(mean)
    basis = np.stack([from_disk(row) for row in basis.reshape(n, voxels)])
    return ShapeSpace(resolution=r, mean=mean, basis=basis, scales=scales)


def save_pfm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("PFM writer expects a 2-d grayscale image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(image[::-1].astype("<f4").tobytes())


def load_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise FormatError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
        if data.size != w * h:
            raise FormatError(f"{path}: truncated PFM data")
    return data.reshape(h, w)[::-1].astype(np.float64)


def save_pgm(path: str | Path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write((mask * np.uint8(255)).tobytes())


def load_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise FormatError(f"{path}: not a binary PGM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = map(int, line.split())
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
        if data.size != w * h:
            raise FormatError(f"{path}: truncated PGM data")
    return (data.reshape(h, w) > maxval // 2)


def estimate_to_dict(est: Estimate) -> dict:
    return {
        "position": est.position.tolist(),
        "quaternion": est.orientation.tolist(),
        "scale": est.scale,
        "shape": est.shape.tolist(),
    }


def estimate_from_dict(d: dict) -> Estimate:
    return Estimate(
        position=np.asarray(d["position"]),
        orientation=np.asarray(d["quaternion"]),
        scale=float(d["scale"]),
        shape=np.asarray(d["shape"]),
    )


def save_estimate(
    path: str | Path,
    est: Estimate,
    best_cell: int | None = None,
    max_prob: float | None = None,
    loss_trace: np.ndarray | None = None,
) -> None:
    doc = estimate_to_dict(est)
    if best_cell is not None:
        doc["init"] = {"best_cell": int(best_cell), "max_prob": float(max_prob)}
    if loss_trace is not None:
        doc["loss_trace"] = np.asarray(loss_trace).tolist()
    Path(path).write_text(json.dumps(doc, indent=2))


def load_estimate(path: str | Path) -> Estimate:
    return estimate_from_dict(json.loads(Path(path).read_text()))


def view_to_dict(view: View, depth_path: str, mask_path: str) -> dict:
    return {
        "depth": depth_path,
        "mask": mask_path,
        "cam": view.cam.to_dict(),
        "cam_pose": view.cam_pose.to_dict(),
    }


def load_view(doc: dict, base: Path) -> View:
    return View(
        depth=load_pfm(base / doc["depth"]),
        mask=load_pgm(base / doc["mask"]),
        cam=PinholeCamera.from_dict(doc["cam"]),
        cam_pose=Pose.from_dict(doc["cam_pose"]),
    )


def save_views_manifest(path: str | Path, docs: list[dict]) -> None:
    Path(path).write_text(json.dumps({"views": docs}, indent=2))


def load_views_manifest(path: str | Path) -> list[View]:
    path = Path(path)
    doc = json.loads(path.read_text())
    return [load_view(v, path.parent) for v in doc["views"]]


def load_dataset_manifest(path: str | Path) -> list[dict]:
    """One parsed record per manifest line."""
    path = Path(path)
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
