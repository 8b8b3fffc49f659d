"""Synthetic labeled CT phantoms: analytic shapes rasterized into HU volumes.

Each phantom is an exact analytic shape (sphere, ellipsoid, torus, or a
union of blobs) burned into a constant-background HU field with optional
Gaussian noise. The label field is the exact rasterization, so ground truth
is known to the voxel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream
from .volume import LabelVolume, Volume

SHAPE_KINDS = ("sphere", "ellipsoid", "torus", "blob_union")


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one labeled object inside a volume.

    radii meaning per kind:
      sphere:     (r,)
      ellipsoid:  (rz, ry, rx)
      torus:      (major R, tube r); `axis` is the symmetry axis (0=z, 1=y, 2=x)
      blob_union: (spread, r_min, r_max) for 2-4 random lobes
    """

    dims: tuple[int, int, int]  # (Z, Y, X)
    kind: str = "sphere"
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radii: tuple[float, ...] = (8.0,)
    background_hu: float = -50.0
    contrast_hu: float = 200.0
    noise_sigma_hu: float = 0.0
    seed: int = 0
    axis: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if any(r <= 0 for r in self.radii):
            raise ValueError("radii must be > 0")
        if self.noise_sigma_hu < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1, or 2")


def _coord_grids(dims):
    z = np.arange(dims[0], dtype=np.float64)
    y = np.arange(dims[1], dtype=np.float64)
    x = np.arange(dims[2], dtype=np.float64)
    return np.meshgrid(z, y, x, indexing="ij")


def _rasterize(spec: PhantomSpec) -> np.ndarray:
    zz, yy, xx = _coord_grids(spec.dims)
    cz, cy, cx = spec.center
    dz, dy, dx = zz - cz, yy - cy, xx - cx
    if spec.kind == "sphere":
        (r,) = spec.radii
        return dz * dz + dy * dy + dx * dx <= r * r
    if spec.kind == "ellipsoid":
        rz, ry, rx = spec.radii
        return (dz / rz) ** 2 + (dy / ry) ** 2 + (dx / rx) ** 2 <= 1.0
    if spec.kind == "torus":
        big_r, tube_r = spec.radii
        axes = [dz, dy, dx]
        u = axes.pop(spec.axis)  # along the symmetry axis
        v, w = axes
        ring = np.sqrt(v * v + w * w) - big_r
        return ring * ring + u * u <= tube_r * tube_r
    # blob_union: deterministic lobes from the spec seed
    rng = stream(spec.seed, "blob_union")
    spread, r_min, r_max = spec.radii
    n_lobes = int(rng.integers(2, 5))
    mask = np.zeros(spec.dims, dtype=bool)
    for _ in range(n_lobes):
        offset = rng.uniform(-spread, spread, size=3)
        r = float(rng.uniform(r_min, r_max))
        oz, oy, ox = offset
        mask |= (dz - oz) ** 2 + (dy - oy) ** 2 + (dx - ox) ** 2 <= r * r
    return mask


def phantom_generate(spec: PhantomSpec) -> tuple[Volume, LabelVolume]:
    """Rasterize the spec into (HU volume, exact label volume).

    Deterministic given the spec seed. Raises if the shape spills out of the
    volume or spans fewer than 3 slices.
    """
    label = _rasterize(spec)
    if not label.any():
        raise ValueError("shape rasterized to an empty label field")
    zs, ys, xs = np.nonzero(label)
    touches_border = (
        zs.min() == 0
        or ys.min() == 0
        or xs.min() == 0
        or zs.max() == spec.dims[0] - 1
        or ys.max() == spec.dims[1] - 1
        or xs.max() == spec.dims[2] - 1
    )
    if touches_border:
        raise ValueError("shape exceeds volume bounds (touches the border)")
    if zs.max() - zs.min() + 1 < 3:
        raise ValueError("object must span at least 3 slices")
    hu = np.full(spec.dims, spec.background_hu, dtype=np.float64)
    hu[label] += spec.contrast_hu
    if spec.noise_sigma_hu > 0:
        rng = stream(spec.seed, "noise")
        hu += rng.normal(0.0, spec.noise_sigma_hu, size=spec.dims)
    volume = Volume(hu.astype(np.float32), (2.0, 1.0, 1.0))
    return volume, LabelVolume(label.astype(np.int32))


def compose_phantoms(specs: list[PhantomSpec]) -> tuple[Volume, LabelVolume]:
    """Burn several specs into one volume; object k gets class id k+1.

    Later objects overwrite earlier ones where they overlap. All specs must
    share dims; background/noise come from the first spec.
    """
    if not specs:
        raise ValueError("need at least one spec")
    dims = specs[0].dims
    if any(s.dims != dims for s in specs):
        raise ValueError("all specs must share dims")
    labels = np.zeros(dims, dtype=np.int32)
    hu = np.full(dims, specs[0].background_hu, dtype=np.float64)
    for k, spec in enumerate(specs, start=1):
        _, lab = phantom_generate(spec)
        inside = lab.labels > 0
        labels[inside] = k
        hu[inside] = spec.background_hu + spec.contrast_hu
    if specs[0].noise_sigma_hu > 0:
        rng = stream(specs[0].seed, "noise")
        hu += rng.normal(0.0, specs[0].noise_sigma_hu, size=dims)
    return Volume(hu.astype(np.float32), (2.0, 1.0, 1.0)), LabelVolume(labels)


def shape_reach(spec: PhantomSpec) -> float:
    """Rough bounding radius of the shape, voxels."""
    if spec.kind == "sphere":
        return spec.radii[0]
    if spec.kind == "ellipsoid":
        return max(spec.radii)
    if spec.kind == "torus":
        return spec.radii[0] + spec.radii[1]
    spread, _, r_max = spec.radii
    return spread + r_max


def nearby_spec(base: PhantomSpec, seed: int) -> PhantomSpec:
    """A second object adjacent to `base` with similar contrast.

    Placed roughly one combined radius away in a random direction, so slices
    frequently show both objects close together; a bounding box around one
    often includes part of the other.
    """
    rng = stream(seed, "nearby")
    for attempt in range(64):
        cand = random_spec(base.dims, int(rng.integers(2**63)))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        gap = rng.uniform(0.75, 1.15)  # touching to barely separated
        dist = gap * (shape_reach(base) + shape_reach(cand))
        center = np.asarray(base.center) + direction * dist
        spec = PhantomSpec(
            dims=base.dims,
            kind=cand.kind,
            center=tuple(float(c) for c in center),
            radii=cand.radii,
            background_hu=base.background_hu,
            contrast_hu=base.contrast_hu * float(rng.uniform(0.8, 1.2)),
            noise_sigma_hu=base.noise_sigma_hu,
            seed=cand.seed,
            axis=cand.axis,
        )
        try:
            _, lab = phantom_generate(spec)
        except ValueError:
            continue
        _, base_lab = phantom_generate(base)
        overlap = (lab.labels > 0) & (base_lab.labels > 0)
        rel = overlap.sum() / max(1, min(lab.labels.sum(), base_lab.labels.sum()))
        if rel <= 0.3:
            return spec
    raise ValueError("could not place a nearby object")


def random_spec(
    dims: tuple[int, int, int],
    seed: int,
    kinds: tuple[str, ...] = SHAPE_KINDS,
) -> PhantomSpec:
    """Draw a well-formed spec (object safely inside the volume) for dataset generation."""
    rng = stream(seed, "spec")
    kind = kinds[int(rng.integers(len(kinds)))]
    nz, ny, nx = dims
    margin = 2.0
    for _ in range(64):
        # objects stay large relative to the +/-20 px box-prompt slack, so a
        # prompt box cannot dwarf its target
        if kind == "sphere":
            r = float(rng.uniform(0.22, 0.33) * min(dims))
            radii = (r,)
            extent = np.array([r, r, r])
        elif kind == "ellipsoid":
            radii = tuple(
                float(rng.uniform(0.17, 0.32) * d) for d in (nz, ny, nx)
            )
            extent = np.array(radii)
        elif kind == "torus":
            axis = int(rng.integers(3))
            tube = float(rng.uniform(0.08, 0.12) * min(ny, nx))
            big = float(rng.uniform(0.18, 0.28) * min(ny, nx))
            radii = (big, tube)
            reach = big + tube
            extent = np.full(3, reach)
            extent[axis] = tube
        else:  # blob_union
            spread = float(rng.uniform(0.10, 0.16) * min(dims))
            r_min = float(rng.uniform(0.14, 0.18) * min(dims))
            r_max = r_min + float(rng.uniform(0.03, 0.09) * min(dims))
            radii = (spread, r_min, r_max)
            extent = np.full(3, spread + r_max)
        lo = extent + margin
        hi = np.array(dims) - 1 - extent - margin
        if np.any(lo >= hi):
            continue
        center = tuple(float(rng.uniform(lo[i], hi[i])) for i in range(3))
        spec = PhantomSpec(
            dims=dims,
            kind=kind,
            center=center,
            radii=radii,
            background_hu=float(rng.uniform(-150.0, 50.0)),
            contrast_hu=float(rng.choice([-1.0, 1.0]) * rng.uniform(120.0, 350.0)),
            noise_sigma_hu=float(rng.uniform(10.0, 40.0)),
            seed=int(rng.integers(2**63)),
            axis=int(rng.integers(3)) if kind == "torus" else 0,
        )
        try:
            phantom_generate(spec)
        except ValueError:
            continue
        return spec
    raise ValueError(f"could not fit a {kind} inside dims {dims}")


# --- dataset manifest ----------------------------------------------------------


@dataclass
class ManifestEntry:
    volume_path: str
    label_path: str
    class_ids: list[int] = field(default_factory=lambda: [1])


def write_manifest(entries: list[ManifestEntry], path: Path) -> None:
    payload = [
        {"volume_path": e.volume_path, "label_path": e.label_path, "class_ids": e.class_ids}
        for e in entries
    ]
    path.write_text(json.dumps(payload, indent=2) + "\n")


def read_manifest(path: Path) -> list[ManifestEntry]:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise ValueError("manifest must be a JSON list")
    entries = []
    for item in raw:
        missing = {"volume_path", "label_path", "class_ids"} - set(item)
        if missing:
            raise ValueError(f"manifest entry missing keys: {sorted(missing)}")
        entries.append(
            ManifestEntry(item["volume_path"], item["label_path"], list(item["class_ids"]))
        )
    return entries
