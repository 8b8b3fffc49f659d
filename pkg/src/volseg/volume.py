"""CT volumes: NIfTI-1 subset I/O, intensity windowing, and slice preprocessing.

The NIfTI subset is deliberately narrow: single-file uncompressed images,
little-endian, int16 or float32, exactly 3 spatial dims. Axis order is kept
as stored: header (x, y, z) maps to array (z, y, x) with x fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class NiftiError(ValueError):
    """Base for NIfTI parsing failures."""


class NiftiFormatError(NiftiError):
    """Header is not a NIfTI-1 header we recognize (bad magic, bad size)."""


class NiftiUnsupportedError(NiftiError):
    """Valid NIfTI-1, but outside the supported subset."""


class NiftiLengthError(NiftiError):
    """Data section shorter than the header promises."""


@dataclass(frozen=True)
class Volume:
    """3D scalar field in Hounsfield units, axes (z, y, x), spacing in mm."""

    voxels: np.ndarray  # (Z, Y, X) float32
    spacing: tuple[float, float, float]  # (dz, dy, dx)

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.float32)
        object.__setattr__(self, "voxels", vox)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise ValueError(f"volume must be 3D with all dims >= 1, got {vox.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class LabelVolume:
    """Integer class labels paired with a Volume; 0 is background."""

    labels: np.ndarray  # (Z, Y, X) integer

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if not np.issubdtype(lab.dtype, np.integer):
            lab = lab.astype(np.int32)
        object.__setattr__(self, "labels", lab)
        if lab.ndim != 3:
            raise ValueError(f"labels must be 3D, got {lab.shape}")
        if lab.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def class_mask(self, class_id: int) -> np.ndarray:
        return self.labels == class_id

    def class_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(k) for k in ids if k != 0]


@dataclass(frozen=True)
class WindowSpec:
    """HU clamp window; values map linearly onto [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"window requires lo < hi, got ({self.lo}, {self.hi})")


DEFAULT_WINDOW = WindowSpec(-500.0, 1000.0)


def window_normalize(hu: np.ndarray, window: WindowSpec = DEFAULT_WINDOW) -> np.ndarray:
    """Clamp HU values to the window and rescale to [0, 1]."""
    hu = np.asarray(hu, dtype=np.float32)
    out = (hu - window.lo) / (window.hi - window.lo)
    return np.clip(out, 0.0, 1.0)


# --- NIfTI-1 subset ----------------------------------------------------------

HEADER_SIZE = 348

_HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)

assert _HEADER_DTYPE.itemsize == HEADER_SIZE

_DTYPE_CODES = {4: np.dtype("<i2"), 16: np.dtype("<f4")}
_CODE_FOR_DTYPE = {"int16": 4, "float32": 16}


def parse_nifti(data: bytes) -> tuple[Volume, dict]:
    """Parse an uncompressed single-file NIfTI-1 image into a Volume.

    Voxels are converted to HU via scl_slope/scl_inter (identity when the
    slope is 0, per the NIfTI convention).
    """
    if len(data) < HEADER_SIZE:
        raise NiftiFormatError(f"file too short for a NIfTI-1 header: {len(data)} bytes")
    hdr = np.frombuffer(data[:HEADER_SIZE], dtype=_HEADER_DTYPE)[0]
    magic = bytes(hdr["magic"])
    if magic[:3] == b"ni1":
        raise NiftiUnsupportedError("two-file NIfTI (magic 'ni1') is not supported")
    if magic[:3] != b"n+1":
        raise NiftiFormatError(f"bad magic {magic!r}, expected 'n+1'")
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        if int(hdr["sizeof_hdr"]) == 1543569408:  # 348 byte-swapped
            raise NiftiUnsupportedError("big-endian NIfTI is not supported")
        raise NiftiFormatError(f"sizeof_hdr = {int(hdr['sizeof_hdr'])}, expected 348")
    ndim = int(hdr["dim"][0])
    if ndim != 3:
        raise NiftiUnsupportedError(f"expected 3 spatial dims, got dim[0] = {ndim}")
    code = int(hdr["datatype"])
    if code not in _DTYPE_CODES:
        raise NiftiUnsupportedError(f"unsupported datatype code {code}")
    dtype = _DTYPE_CODES[code]
    nx, ny, nz = (int(hdr["dim"][i]) for i in (1, 2, 3))
    if min(nx, ny, nz) < 1:
        raise NiftiUnsupportedError(f"non-positive dims ({nx}, {ny}, {nz})")
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"vox_offset {offset} < header size")
    nbytes = nx * ny * nz * dtype.itemsize
    if len(data) < offset + nbytes:
        raise NiftiLengthError(
            f"data section truncated: need {nbytes} bytes at offset {offset}, "
            f"file has {len(data) - offset}"
        )
    raw = np.frombuffer(data, dtype=dtype, count=nx * ny * nz, offset=offset)
    # NIfTI stores x fastest; C-order reshape to (z, y, x) preserves that.
    vox = raw.reshape(nz, ny, nx).astype(np.float32)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0:
        vox = vox * np.float32(slope) + np.float32(inter)
    dz, dy, dx = (float(hdr["pixdim"][i]) for i in (3, 2, 1))
    meta = {
        "datatype": code,
        "scl_slope": slope,
        "scl_inter": inter,
        "vox_offset": offset,
        "descrip": bytes(hdr["descrip"]).rstrip(b"\x00").decode("ascii", "replace"),
    }
    return Volume(vox, (dz, dy, dx)), meta


def write_nifti(volume: Volume, dtype: str = "float32") -> bytes:
    """Serialize a Volume to single-file NIfTI-1 bytes.

    float32 storage round-trips voxels bit-exactly through parse_nifti.
    int16 storage rounds (intended for label volumes).
    """
    if dtype not in _CODE_FOR_DTYPE:
        raise ValueError(f"dtype must be float32 or int16, got {dtype}")
    nz, ny, nx = volume.dims
    dz, dy, dx = volume.spacing
    hdr = np.zeros(1, dtype=_HEADER_DTYPE)[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["dim"] = [3, nx, ny, nz, 1, 1, 1, 1]
    hdr["datatype"] = _CODE_FOR_DTYPE[dtype]
    hdr["bitpix"] = 16 if dtype == "int16" else 32
    hdr["pixdim"] = [1.0, dx, dy, dz, 0, 0, 0, 0]
    hdr["vox_offset"] = float(HEADER_SIZE)  # header immediately followed by data
    hdr["scl_slope"] = 0.0  # stored values are already HU
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = b"volseg"
    hdr["magic"] = b"n+1\x00"
    if dtype == "float32":
        payload = volume.voxels.astype("<f4").tobytes()
    else:
        payload = np.rint(volume.voxels).astype("<i2").tobytes()
    return hdr.tobytes() + payload


def write_labels_nifti(labels: LabelVolume, spacing: tuple[float, float, float]) -> bytes:
    vol = Volume(labels.labels.astype(np.float32), spacing)
    return write_nifti(vol, dtype="int16")


def parse_labels_nifti(data: bytes) -> tuple[LabelVolume, dict]:
    vol, meta = parse_nifti(data)
    return LabelVolume(np.rint(vol.voxels).astype(np.int32)), meta


# --- slice preprocessing -------------------------------------------------------


@dataclass(frozen=True)
class PadInfo:
    """Geometry of a resize-then-center-pad, enough to invert it exactly.

    Coordinates use the align-corners convention: content corner pixel
    centers coincide with original corner pixel centers, so corner points
    round-trip with zero error.
    """

    orig_shape: tuple[int, int]
    content_shape: tuple[int, int]
    pad: tuple[int, int]  # (top, left)
    target: int

    def _factors(self) -> tuple[float, float]:
        (h, w), (ch, cw) = self.orig_shape, self.content_shape
        fy = (ch - 1) / (h - 1) if h > 1 else 0.0
        fx = (cw - 1) / (w - 1) if w > 1 else 0.0
        return fy, fx

    def to_model(self, row: float, col: float) -> tuple[float, float]:
        fy, fx = self._factors()
        return self.pad[0] + row * fy, self.pad[1] + col * fx

    def to_native(self, row: float, col: float) -> tuple[float, float]:
        fy, fx = self._factors()
        r = (row - self.pad[0]) / fy if fy > 0 else 0.0
        c = (col - self.pad[1]) / fx if fx > 0 else 0.0
        return r, c


@dataclass(frozen=True)
class SliceImage:
    """Square model-input image in [0, 1] with its resize/pad geometry."""

    values: np.ndarray  # (target, target) float32
    pad_info: PadInfo


def _content_grid(pad_info: PadInfo) -> tuple[np.ndarray, np.ndarray]:
    (h, w) = pad_info.orig_shape
    ch, cw = pad_info.content_shape
    rows = np.linspace(0, h - 1, ch) if ch > 1 else np.array([(h - 1) / 2.0])
    cols = np.linspace(0, w - 1, cw) if cw > 1 else np.array([(w - 1) / 2.0])
    return rows, cols


def _plan_pad(shape: tuple[int, int], target: int) -> PadInfo:
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError(f"degenerate slice shape {shape}")
    if target < 8:
        raise ValueError(f"target size must be >= 8, got {target}")
    scale = target / max(h, w)
    ch = max(1, round(h * scale))
    cw = max(1, round(w * scale))
    return PadInfo((h, w), (ch, cw), ((target - ch) // 2, (target - cw) // 2), target)


def resize_pad(slice2d: np.ndarray, target: int) -> SliceImage:
    """Uniformly scale a slice to fit a target square, center-padding with zeros.

    Image values are interpolated bilinearly; use resize_pad_mask for masks.
    """
    slice2d = np.asarray(slice2d, dtype=np.float32)
    if slice2d.ndim != 2:
        raise ValueError(f"expected 2D slice, got shape {slice2d.shape}")
    info = _plan_pad(slice2d.shape, target)
    rows, cols = _content_grid(info)
    grid = np.meshgrid(rows, cols, indexing="ij")
    content = ndimage.map_coordinates(slice2d, grid, order=1, mode="nearest")
    out = np.zeros((target, target), dtype=np.float32)
    top, left = info.pad
    ch, cw = info.content_shape
    out[top : top + ch, left : left + cw] = content
    return SliceImage(out, info)


def resize_pad_mask(mask: np.ndarray, target: int) -> tuple[np.ndarray, PadInfo]:
    """Nearest-neighbor variant of resize_pad, preserving binarity."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError(f"expected 2D mask, got shape {mask.shape}")
    info = _plan_pad(mask.shape, target)
    rows, cols = _content_grid(info)
    ri = np.clip(np.rint(rows).astype(int), 0, mask.shape[0] - 1)
    ci = np.clip(np.rint(cols).astype(int), 0, mask.shape[1] - 1)
    content = mask[np.ix_(ri, ci)]
    out = np.zeros((target, target), dtype=bool)
    top, left = info.pad
    ch, cw = info.content_shape
    out[top : top + ch, left : left + cw] = content
    return out, info


def unpad_mask(mask_model: np.ndarray, pad_info: PadInfo) -> np.ndarray:
    """Map a model-grid binary mask back onto the native slice grid (nearest)."""
    mask_model = np.asarray(mask_model).astype(bool)
    top, left = pad_info.pad
    ch, cw = pad_info.content_shape
    content = mask_model[top : top + ch, left : left + cw]
    h, w = pad_info.orig_shape
    rows = np.linspace(0, ch - 1, h) if h > 1 else np.array([(ch - 1) / 2.0])
    cols = np.linspace(0, cw - 1, w) if w > 1 else np.array([(cw - 1) / 2.0])
    ri = np.clip(np.rint(rows).astype(int), 0, ch - 1)
    ci = np.clip(np.rint(cols).astype(int), 0, cw - 1)
    return content[np.ix_(ri, ci)]


def keep_slice(label_slice: np.ndarray, min_pixels: int = 15) -> bool:
    """Training-sample filter: keep slices with at least min_pixels foreground.

    Applied to training data only, never at inference time.
    """
    return int(np.count_nonzero(label_slice)) >= min_pixels
