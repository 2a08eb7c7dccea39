import numpy as np
import pytest

import asmfit
from asmfit import (
    FitIndices,
    SampleMoments,
    cfi,
    compare_invariance,
    null_model_fit,
    rmsea,
    srmr,
)


def test_null_model_diagonal_s():
    moments = SampleMoments(S=np.diag([2.0, 1.0, 0.5]), ybar=np.zeros(3), n=500)
    chi2_null, df_null = null_model_fit(moments)
    assert chi2_null == pytest.approx(0.0, abs=1e-12)
    assert df_null == 3


def test_null_model_hand_value():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    moments = SampleMoments(S=S, ybar=np.zeros(2), n=101)
    chi2_null, df_null = null_model_fit(moments)
    assert chi2_null == pytest.approx(-100 * np.log(0.75), abs=1e-10)
    assert chi2_null == pytest.approx(28.77, abs=0.01)
    assert df_null == 1


def test_null_model_vanishes_with_correlation():
    last = np.inf
    for rho in (0.2, 0.1, 0.05, 0.01, 1e-4):
        S = np.full((3, 3), rho)
        np.fill_diagonal(S, 1.0)
        chi2_null, _ = null_model_fit(SampleMoments(S=S, ybar=np.zeros(3), n=200))
        assert chi2_null < last
        last = chi2_null
    assert last < 1e-4


def test_cfi_values():
    assert cfi(40.0, 40, 1000.0, 45) == 1.0  # chi2 == df
    assert cfi(100.0, 40, 1000.0, 45) == pytest.approx((955 - 60) / 955, abs=1e-12)
    assert cfi(5000.0, 40, 1000.0, 45) == 0.0  # clamped below
    assert cfi(100.0, 40, 30.0, 45) == 1.0  # d_null = 0


def test_delta_cfi_paper_rule():
    delta = 0.943 - 0.940
    assert delta == pytest.approx(0.003, abs=1e-9)
    assert delta < 0.01


def test_srmr_zero_at_equality():
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert srmr(S, S.copy()) == 0.0


def test_srmr_hand_value():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert srmr(S, sigma) == pytest.approx(np.sqrt(0.04 / 3), abs=1e-12)


def test_srmr_scale_free():
    # correlations only: rescaling columns changes nothing
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    d = np.diag([3.0, 0.2])
    assert srmr(d @ S @ d, d @ sigma @ d) == pytest.approx(srmr(S, sigma), abs=1e-12)


def test_srmr_zero_variance_errors():
    with pytest.raises(ValueError):
        srmr(np.diag([1.0, 0.0]), np.eye(2))


def test_rmsea_paper_anchor():
    point, ci = rmsea(8748.500, 1044, 8959)
    assert round(point, 3) == 0.029
    assert round(ci[0], 3) == 0.028
    assert round(ci[1], 3) == 0.029
    assert ci[0] <= point <= ci[1]


def test_rmsea_clamped_at_zero():
    point, ci = rmsea(50.0, 100, 400)
    assert point == 0.0
    assert ci[0] == 0.0


def test_rmsea_direct_formula():
    point, _ = rmsea(200.0, 100, 400)
    assert point == pytest.approx(0.05, abs=1e-12)


def test_rmsea_ci_tightens_with_information():
    _, wide = rmsea(200.0, 100, 200)
    _, narrow = rmsea(400.0, 200, 200)
    assert (narrow[1] - narrow[0]) < (wide[1] - wide[0])


def _ix(chi2, df, cfi_val, n=8959):
    return FitIndices(
        chi2=chi2, df=df, cfi=cfi_val, srmr=0.03, rmsea=0.029,
        rmsea_ci90=(0.028, 0.030), n=n,
    )


def test_compare_invariance_published_ladder():
    ladder = [
        ("configural", _ix(8748.500, 1044, 0.943)),
        ("weak", _ix(9135.501, 1066, 0.940)),
        ("strong", _ix(9402.683, 1082, 0.938)),
    ]
    comp = compare_invariance(ladder)
    assert [s.retained for s in comp.steps] == [True, True]
    assert comp.steps[0].delta_cfi == pytest.approx(0.003, abs=1e-9)
    assert comp.steps[0].delta_df == 22
    assert comp.steps[1].delta_df == 16
    assert comp.selected == "strong"
    assert comp.steps[0].verdict == "not different"


def test_compare_identical_models():
    ladder = [("a", _ix(100.0, 40, 0.95)), ("b", _ix(100.0, 41, 0.95))]
    comp = compare_invariance(ladder)
    assert comp.steps[0].delta_cfi == 0.0
    assert comp.steps[0].retained
    assert comp.selected == "b"


def test_compare_rejection_blocks_selection():
    ladder = [
        ("configural", _ix(100.0, 40, 0.95)),
        ("weak", _ix(400.0, 50, 0.90)),
        ("strong", _ix(405.0, 60, 0.899)),
    ]
    comp = compare_invariance(ladder)
    assert not comp.steps[0].retained
    assert comp.selected == "configural"


def test_compare_non_nested_rejected():
    with pytest.raises(ValueError, match="nested"):
        compare_invariance([("a", _ix(10.0, 50, 0.9)), ("b", _ix(12.0, 50, 0.9))])
    with pytest.raises(ValueError, match="sample size"):
        compare_invariance(
            [("a", _ix(10.0, 50, 0.9, n=100)), ("b", _ix(12.0, 60, 0.9, n=200))]
        )


def test_indices_invariant_to_column_order(cfa_spec):
    rng = np.random.default_rng(31)
    data, spec, table, theta, _ = _small_dataset(rng)
    import pandas as pd

    shuffled = data[list(rng.permutation(data.columns))]
    m1 = asmfit.moments_from_data(data, spec)
    m2 = asmfit.moments_from_data(shuffled, spec)
    r1 = asmfit.fit(m1, table)
    r2 = asmfit.fit(m2, table)
    i1 = asmfit.fit_indices(r1)
    i2 = asmfit.fit_indices(r2)
    assert i1 == i2


def _small_dataset(rng):
    spec = asmfit.parse_model_spec("latent f by y1 y2 y3\nwaves 2\nar 1")
    table = asmfit.build_parameter_table(spec)
    theta = table.default_starts()
    theta[table.slot_of("pi[f]@1->2")] = 0.4
    m = asmfit.theta_to_matrices(table, theta)
    data = asmfit.simulate_dataset(
        asmfit.GeneratorConfig(m, np.zeros(2), 400, int(rng.integers(1 << 31)))
    )
    return data, spec, table, theta, m


def test_fit_indices_on_reference(reference_spec, reference_truth):
    values, _ = reference_truth
    table = asmfit.build_parameter_table(reference_spec, "strong")
    theta = asmfit.truth_vector(table, values)
    m = asmfit.theta_to_matrices(table, theta)
    data = asmfit.simulate_dataset(
        asmfit.GeneratorConfig(m, np.zeros(len(table.layout.lat_names)), 2500, 77)
    )
    moments = asmfit.moments_from_data(data, reference_spec)
    res = asmfit.fit(moments, table)
    ix = asmfit.fit_indices(res)
    assert ix.df == moments.moment_count() - table.free_count
    assert ix.chi2 == pytest.approx((moments.n - 1) * res.f_min, rel=1e-12)
    # data generated from the model itself: good fit on every cutoff
    assert ix.cutoffs() == {"cfi>.90": "pass", "srmr<.08": "pass", "rmsea<.06": "pass"}
    assert ix.srmr < 0.08
