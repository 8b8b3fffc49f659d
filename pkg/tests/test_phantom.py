import numpy as np
import pytest

from volseg.phantom import (
    ManifestEntry,
    PhantomSpec,
    compose_phantoms,
    phantom_generate,
    random_spec,
    read_manifest,
    write_manifest,
)


def test_sphere_volume_close_to_analytic():
    spec = PhantomSpec(dims=(32, 32, 32), kind="sphere", center=(15.5, 15.5, 15.5),
                       radii=(10.0,), seed=1)
    _, labels = phantom_generate(spec)
    count = int(labels.labels.sum())
    analytic = 4.0 / 3.0 * np.pi * 10.0**3
    assert abs(count - analytic) / analytic < 0.02


def test_noiseless_field_has_two_values():
    spec = PhantomSpec(dims=(16, 24, 24), kind="sphere", center=(8, 12, 12),
                       radii=(5.0,), background_hu=-50.0, contrast_hu=200.0,
                       noise_sigma_hu=0.0, seed=2)
    vol, _ = phantom_generate(spec)
    assert set(np.unique(vol.voxels)) == {-50.0, 150.0}


def test_determinism():
    spec = PhantomSpec(dims=(16, 24, 24), kind="blob_union", center=(8, 12, 12),
                       radii=(3.0, 3.0, 5.0), noise_sigma_hu=25.0, seed=42)
    v1, l1 = phantom_generate(spec)
    v2, l2 = phantom_generate(spec)
    assert (v1.voxels == v2.voxels).all()
    assert (l1.labels == l2.labels).all()


def test_out_of_bounds_rejected():
    spec = PhantomSpec(dims=(16, 24, 24), kind="sphere", center=(8, 12, 12),
                       radii=(14.0,), seed=0)
    with pytest.raises(ValueError):
        phantom_generate(spec)


def test_too_thin_rejected():
    spec = PhantomSpec(dims=(16, 24, 24), kind="ellipsoid", center=(8, 12, 12),
                       radii=(0.9, 6.0, 6.0), seed=0)
    with pytest.raises(ValueError):
        phantom_generate(spec)


def test_min_three_slices():
    spec = PhantomSpec(dims=(16, 24, 24), kind="sphere", center=(8, 12, 12),
                       radii=(4.0,), seed=0)
    _, labels = phantom_generate(spec)
    zs = np.flatnonzero(labels.labels.any(axis=(1, 2)))
    assert zs.size >= 3


def test_torus_axial_slices_are_annuli():
    spec = PhantomSpec(dims=(24, 48, 48), kind="torus", center=(12, 24, 24),
                       radii=(12.0, 4.0), axis=0, seed=0)
    _, labels = phantom_generate(spec)
    mid = labels.labels[12]
    assert mid[24, 24] == 0  # hole in the middle
    assert mid.sum() > 0


def test_compose_assigns_distinct_classes():
    dims = (20, 48, 48)
    specs = [
        PhantomSpec(dims=dims, kind="sphere", center=(10, 16, 16), radii=(5.0,), seed=1),
        PhantomSpec(dims=dims, kind="sphere", center=(10, 32, 32), radii=(5.0,), seed=2),
    ]
    _, labels = compose_phantoms(specs)
    assert labels.class_ids() == [1, 2]
    assert (labels.labels == 1).sum() > 0 and (labels.labels == 2).sum() > 0


def test_random_spec_always_generates():
    dims = (32, 64, 64)
    for seed in range(12):
        spec = random_spec(dims, seed)
        _, labels = phantom_generate(spec)
        assert labels.labels.any()


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry("v0.nii", "l0.nii", [1, 2]), ManifestEntry("v1.nii", "l1.nii", [1])]
    path = tmp_path / "manifest.json"
    write_manifest(entries, path)
    back = read_manifest(path)
    assert [(e.volume_path, e.label_path, e.class_ids) for e in back] == [
        ("v0.nii", "l0.nii", [1, 2]),
        ("v1.nii", "l1.nii", [1]),
    ]


def test_manifest_rejects_missing_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('[{"volume_path": "a.nii"}]')
    with pytest.raises(ValueError):
        read_manifest(path)
