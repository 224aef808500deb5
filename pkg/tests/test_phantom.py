import numpy as np
import pytest

from segmorph.analysis import fd_volume_coupling
from segmorph.errors import GridTooSmall, LevelOutOfRange
from segmorph.phantom import (
    DEFAULT_SCHEDULE,
    PerturbationSpec,
    flip_candidates,
    make_cube,
    make_line,
    make_menger,
    make_plane,
    make_sphere,
    perturb,
    propagation_experiment,
    splitmix64,
    uniform01,
)


def test_splitmix64_reference_output():
    assert int(splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF
    # streams are positional, so a slice matches the tail of a longer draw
    assert np.array_equal(splitmix64(42, 3, start=2), splitmix64(42, 5)[2:])
    u = uniform01(7, 10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_shape_sizes():
    assert make_cube(8).voxel_count == 512
    assert make_cube(8).dims == (12, 12, 12)
    assert make_plane(10).voxel_count == 100
    assert make_line(10).voxel_count == 10
    assert make_menger(1).voxel_count == 20
    assert make_menger(2).voxel_count == 400
    assert make_sphere(20, 10).voxel_count > 0
    with pytest.raises(GridTooSmall):
        make_cube(4)
    with pytest.raises(GridTooSmall):
        make_sphere(10, 6)
    with pytest.raises(LevelOutOfRange):
        make_menger(5)


def test_dilate_erode():
    cube = make_cube(8)
    assert perturb(cube, PerturbationSpec("dilate", 1)).voxel_count == 896
    assert perturb(cube, PerturbationSpec("dilate", 1, connectivity="full26")).voxel_count == 1000
    assert perturb(cube, PerturbationSpec("erode", 1)).voxel_count == 216
    assert perturb(cube, PerturbationSpec("dilate", 0)) is cube


def test_flip_is_seeded_and_local():
    sphere = make_sphere(20, 8)
    spec = PerturbationSpec("boundary_flip", flip_rate=0.2, seed=5)
    a, b = perturb(sphere, spec), perturb(sphere, spec)
    assert a == b
    changed = a.bits ^ sphere.bits
    assert changed.any()
    assert not (changed & ~flip_candidates(sphere.bits, "face6")).any()
    other = perturb(sphere, PerturbationSpec("boundary_flip", flip_rate=0.2, seed=6))
    assert other != a
    assert perturb(sphere, PerturbationSpec("boundary_flip", flip_rate=0.0)) is sphere


@pytest.mark.parametrize("text, expected", [
    ("dilate:2", PerturbationSpec("dilate", 2)),
    ("erode:1:full26", PerturbationSpec("erode", 1, connectivity="full26")),
    ("flip:0.1", PerturbationSpec("boundary_flip", flip_rate=0.1)),
    ("flip:0.1:9:full26", PerturbationSpec("boundary_flip", flip_rate=0.1, seed=9, connectivity="full26")),
])
def test_spec_parse(text, expected):
    assert PerturbationSpec.parse(text) == expected


def test_spec_validation():
    for bad in ("dilate", "grow:1", "flip:2", "dilate:1:7"):
        with pytest.raises(ValueError):
            PerturbationSpec.parse(bad)
    with pytest.raises(ValueError):
        PerturbationSpec("dilate", -1)


def test_propagation_experiment_shape():
    rows = propagation_experiment({"cube": make_cube(16)}, DEFAULT_SCHEDULE[:3])
    assert [r.perturbation for r in rows] == ["erode:1:face6", "dilate:1:face6", "dilate:2:face6"]
    assert rows[0].delta_volume_ml < 0 < rows[1].delta_volume_ml < rows[2].delta_volume_ml
    assert propagation_experiment({"cube": make_cube(16)}, []) == []


def test_coupling_of_identity_perturbations_is_degenerate():
    rows = propagation_experiment({"cube": make_cube(16)}, [PerturbationSpec("dilate", 0)] * 4)
    table = fd_volume_coupling(rows)
    assert all("degenerate" in r["flags"] for r in table.as_dicts())
