import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atsd.population import (
    AuxiliaryModel,
    Population,
    PopulationFileError,
    PopulationSpec,
    compute_stats,
    generate_population,
    load_population,
    population_from_text,
    population_to_text,
    save_population,
)


def small_spec(seed=3):
    return PopulationSpec(
        grid_side=10, M=4, cluster_rate=3.0, points_per_cluster_rate=5.0,
        dispersion_scale=0.5,
        aux_x=AuxiliaryModel(share_prob=0.8, jitter_scale=0.2),
        aux_z=AuxiliaryModel(share_prob=0.4, extra_per_cluster=2.0),
        seed=seed,
    )


def hand_population():
    y = np.array([0.0, 2.0, 1.0, 0.0, 0.0, 3.0])
    x = np.array([0.0, 1.0, 1.0, 0.5, 0.0, 2.0])
    z = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 1.0])
    return Population([3, 3], y, x, z)


def test_generate_deterministic_in_seed():
    a = generate_population(small_spec())
    b = generate_population(small_spec())
    c = generate_population(small_spec(seed=4))
    assert a == b
    assert a != c


def test_generated_shapes_and_w():
    pop = generate_population(small_spec())
    assert pop.N == 100
    assert pop.M == 4
    assert list(pop.psu_sizes) == [25, 25, 25, 25]
    assert np.array_equal(pop.w, (pop.y > 0).astype(float))
    assert (pop.y >= 0).all() and (pop.x >= 0).all() and (pop.z >= 0).all()


def test_psu_slices_partition_units():
    pop = generate_population(small_spec())
    seen = np.concatenate([pop.psu_values("y", h) for h in range(1, pop.M + 1)])
    assert np.array_equal(seen, pop.y)


def test_arrays_immutable():
    pop = hand_population()
    with pytest.raises(ValueError):
        pop.y[0] = 9.0


def test_compute_stats_hand_values():
    pop = hand_population()
    st_ = compute_stats(pop)
    assert st_.means["y"] == pytest.approx(1.0)
    assert st_.variances["y"] == pytest.approx(np.var(pop.y, ddof=1))
    assert st_.corr_with_y["x"] == pytest.approx(
        float(np.corrcoef(pop.x, pop.y)[0, 1]))
    # rarity: PSU1 has 2 of 3 nonempty y, PSU2 has 1 of 3
    assert st_.rarity == pytest.approx([2 / 3, 1 / 3])


def test_corr_undefined_on_constant_variable():
    pop = Population([2, 2], np.ones(4), np.full(4, 2.0), np.zeros(4))
    st_ = compute_stats(pop)
    assert st_.corr_with_y["x"] is None


def test_roundtrip_exact():
    pop = generate_population(small_spec())
    text = population_to_text(pop)
    back = population_from_text(text)
    assert back == pop


def test_roundtrip_file(tmp_path):
    pop = hand_population()
    path = tmp_path / "p.pop"
    save_population(pop, path)
    assert load_population(path) == pop


def test_checksum_detects_corruption(tmp_path):
    pop = hand_population()
    path = tmp_path / "p.pop"
    save_population(pop, path)
    text = path.read_text()
    bad = text.replace("2", "3", 1)
    path.write_text(bad)
    with pytest.raises(PopulationFileError):
        load_population(path)


def test_inconsistent_w_rejected():
    pop = hand_population()
    text = population_to_text(pop)
    lines = text.splitlines()
    # flip a w flag on a unit line
    for i, ln in enumerate(lines):
        if "," in ln and not ln.startswith(("M=", "Nh=", "grid=", "seed=", "checksum=")):
            parts = ln.split(",")
            parts[-1] = "1" if parts[-1].strip() in ("0", "0.0") else "0"
            lines[i] = ",".join(parts)
            break
    with pytest.raises(PopulationFileError):
        population_from_text("\n".join(lines))


@settings(max_examples=25, deadline=None)
@given(
    y=st.lists(st.floats(0, 50, allow_nan=False), min_size=4, max_size=12),
    seed=st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(y, seed):
    n = len(y) - len(y) % 2
    y = np.asarray(y[:n])
    rng = np.random.default_rng(seed)
    pop = Population([n // 2, n // 2], y, rng.uniform(0, 7, n).round(6),
                     rng.uniform(0, 7, n).round(6))
    assert population_from_text(population_to_text(pop)) == pop


def test_spec_validation():
    with pytest.raises(ValueError):
        PopulationSpec(grid_side=0).validate()
    with pytest.raises(ValueError):
        PopulationSpec(cluster_rate=-1.0).validate()
    with pytest.raises(ValueError):
        AuxiliaryModel(share_prob=1.5).validate()
