import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import asmfit
from asmfit import (
    ConstraintConflictError,
    build_parameter_table,
    count_free_parameters,
    parse_model_spec,
    theta_to_matrices,
)


def test_reference_free_count_deltas(reference_spec):
    configural = build_parameter_table(reference_spec, "configural")
    weak = build_parameter_table(reference_spec, "weak")
    strong = build_parameter_table(reference_spec, "strong")
    # 11 free loadings per wave (4 fhs + 7 ds after markers) collapse over 3 waves
    assert count_free_parameters(configural) - count_free_parameters(weak) == 22
    # 8 ds intercepts collapse over 3 waves; fhs exempt, sa/pa observed-as-latent
    assert count_free_parameters(weak) - count_free_parameters(strong) == 16


def test_reference_counts_absolute(reference_spec):
    table = build_parameter_table(reference_spec, "configural")
    by_target = {}
    for e in table.entries:
        if e.slot is not None:
            by_target.setdefault(e.target, set()).add(e.slot)
    counts = {k: len(v) for k, v in by_target.items()}
    assert counts == {
        "mu": 50,      # 15 indicators x 3 waves + 5 covariate columns
        "lambda": 33,  # (4 fhs + 7 ds) non-marker loadings x 3 waves
        "beta": 15,    # 5 edges x 3 waves
        "pi": 12,      # 4 latents x 3 wave pairs (order 2)
        "c": 60,       # 4 latents x 5 covariates x 3 waves
        "psi": 27,     # 12 disturbance variances + 15 covariate moments
        "theta": 39,   # (15 - 2 fixed) x 3 waves
    }
    assert table.free_count == 236


def test_single_wave_has_no_classes():
    spec = parse_model_spec("latent f by y1 y2 y3; waves 1")
    for level in ("configural", "weak", "strong"):
        table = build_parameter_table(spec, level)
        assert all(e.class_id is None for e in table.entries), level
        assert table.free_count == build_parameter_table(spec, "configural").free_count


def test_monotone_free_counts(reference_spec, cfa_spec):
    for spec in (reference_spec, cfa_spec):
        fc = [
            build_parameter_table(spec, level).free_count
            for level in ("configural", "weak", "strong")
        ]
        assert fc[2] <= fc[1] <= fc[0]


def test_all_fixed_table_round_trip():
    spec = parse_model_spec(
        "latent f by y1\nwaves 1\n"
        "fix theta(y1)@* = 0\nfix psi(f)@* = 2.5\nfix mu(y1)@* = 1.5"
    )
    table = build_parameter_table(spec)
    assert table.free_count == 0
    m = theta_to_matrices(table, np.zeros(0))
    assert m.psi[0, 0] == 2.5
    assert m.mu[0] == 1.5
    assert m.theta_resid[0, 0] == 0.0
    assert m.lam[0, 0] == 1.0  # marker


def test_equality_class_shares_one_slot(reference_spec):
    table = build_parameter_table(reference_spec, "weak")
    members = [e for e in table.entries if e.class_id == "lambda[fhs3]"]
    assert len(members) == 3
    slots = {e.slot for e in members}
    assert len(slots) == 1
    theta = table.default_starts()
    theta[slots.pop()] = 0.348
    m = theta_to_matrices(table, theta)
    layout = table.layout
    for t in (1, 2, 3):
        i = layout.obs_index("fhs3", t)
        j = layout.lat_index("fhs", t)
        assert m.lam[i, j] == 0.348


def test_perturbing_one_slot_changes_only_its_cells(reference_spec):
    # sparsity oracle: exhaustive cell diff across all five matrices
    table = build_parameter_table(reference_spec, "weak")
    theta = table.default_starts()
    base = theta_to_matrices(table, theta)
    rng = np.random.default_rng(5)
    for slot in rng.choice(table.free_count, size=8, replace=False):
        bumped = theta.copy()
        bumped[slot] += 0.1
        m = theta_to_matrices(table, bumped)
        expected = set()
        for e in table.entries:
            if e.slot == slot:
                expected.add((e.array, e.si, e.sj))
                if e.symmetric:
                    expected.add((e.array, e.sj, e.si))
        changed = set()
        for name in ("mu", "lam", "gamma", "psi", "theta_resid"):
            a, b = getattr(base, name), getattr(m, name)
            if a.ndim == 1:
                for i in np.flatnonzero(a != b):
                    changed.add((name, int(i), 0))
            else:
                for i, j in zip(*np.nonzero(a != b)):
                    changed.add((name, int(i), int(j)))
        assert changed == expected, f"slot {table.slot_names[slot]}"


def test_theta_length_checked(reference_spec):
    table = build_parameter_table(reference_spec)
    with pytest.raises(ValueError, match="expected"):
        theta_to_matrices(table, np.zeros(3))


def test_fix_wins_over_class():
    spec = parse_model_spec(
        "latent f by y1 y2 y3\nwaves 2\ninvariance weak\nfix lambda(y2)@1 = 0.7"
    )
    table = build_parameter_table(spec)
    # the fix pins the whole equality class
    e1 = table.entry("lambda[y2]@1")
    e2 = table.entry("lambda[y2]@2")
    assert e1.status == "fixed" and e1.value == 0.7
    assert e2.status == "fixed" and e2.value == 0.7


def test_conflicting_fixes_in_one_class():
    spec = parse_model_spec(
        "latent f by y1 y2 y3\nwaves 2\ninvariance weak\n"
        "fix lambda(y2)@1 = 0.7\nfix lambda(y2)@2 = 0.9"
    )
    with pytest.raises(ConstraintConflictError):
        build_parameter_table(spec)


def test_fix_matching_no_cell_is_an_error():
    spec = parse_model_spec(
        "latent f by y1 y2\nlatent g by z1 z2\nwaves 1\nfix beta(f,g)@* = 0.5"
    )
    with pytest.raises(asmfit.AsmError, match="matches no model cell"):
        build_parameter_table(spec)


def test_variance_identification():
    spec = parse_model_spec("latent f by y1 y2 y3; waves 2; identify variance")
    table = build_parameter_table(spec)
    assert table.entry("psi[f]@1").status == "fixed"
    assert table.entry("psi[f]@1").value == 1.0
    assert table.entry("lambda[y1]@1").status == "free"
    marker = build_parameter_table(
        parse_model_spec("latent f by y1 y2 y3; waves 2")
    )
    assert marker.free_count == table.free_count  # identification is df-neutral


def test_deterministic_entry_order(reference_spec):
    t1 = build_parameter_table(reference_spec)
    t2 = build_parameter_table(reference_spec)
    assert [e.name for e in t1.entries] == [e.name for e in t2.entries]
    order = [
        (e.target, e.wave or 0, e.wave_src or 0, e.row, e.col) for e in t1.entries
    ]
    from asmfit.paramtable import MATRIX_ORDER

    keyed = [(MATRIX_ORDER[t], w, ws, r, c) for t, w, ws, r, c in order]
    assert keyed == sorted(keyed)


def test_variance_starts_positive(reference_spec):
    table = build_parameter_table(reference_spec)
    starts = table.default_starts()
    for e in table.entries:
        if e.slot is not None and e.target in ("psi", "theta") and e.si == e.sj:
            assert starts[e.slot] > 0


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(1, 4), st.integers(1, 3))
def test_free_count_monotone_property(waves, n_ind):
    inds = " ".join(f"y{k}" for k in range(n_ind))
    extra = "fix theta(y0)@* = 0\n" if n_ind == 1 else ""
    spec = parse_model_spec(f"latent f by {inds}\nwaves {waves}\n{extra}")
    fc = [
        build_parameter_table(spec, level).free_count
        for level in ("configural", "weak", "strong")
    ]
    assert fc[2] <= fc[1] <= fc[0]
