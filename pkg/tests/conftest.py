import numpy as np
import pytest

import asmfit

CHAIN_SPEC = """\
latent a by x
latent b by y
path a -> b
waves 1
fix theta(x)@* = 0
fix theta(y)@* = 0
"""

TWO_WAVE_AR_SPEC = """\
latent f by y
waves 2
ar 1
fix theta(y)@* = 0
"""

CFA_SPEC = """\
latent f by y1 y2 y3
waves 2
ar 1
"""


@pytest.fixture(scope="session")
def chain_spec():
    return asmfit.parse_model_spec(CHAIN_SPEC)


@pytest.fixture(scope="session")
def cfa_spec():
    return asmfit.parse_model_spec(CFA_SPEC)


@pytest.fixture(scope="session")
def reference_spec():
    return asmfit.reference_spec()


@pytest.fixture(scope="session")
def reference_truth():
    values, std_targets = asmfit.reference_truth()
    return values, std_targets


def chain_theta(table, beta=0.5, psi_a=1.0, psi_b=1.0, mu_x=0.0, mu_y=0.0):
    """Free vector for the two-variable chain model."""
    theta = table.default_starts()
    theta[table.slot_of("beta[a->b]@1")] = beta
    theta[table.slot_of("psi[a]@1")] = psi_a
    theta[table.slot_of("psi[b]@1")] = psi_b
    theta[table.slot_of("mu[x]@1")] = mu_x
    theta[table.slot_of("mu[y]@1")] = mu_y
    return theta


def simulate_reference(n, seed, level="strong"):
    """Dataset drawn from the reference truth, plus its table and truth."""
    spec = asmfit.reference_spec()
    values, std_targets = asmfit.reference_truth()
    table = asmfit.build_parameter_table(spec, level)
    theta = asmfit.truth_vector(table, values)
    m = asmfit.theta_to_matrices(table, theta)
    cfg = asmfit.GeneratorConfig(
        m, np.zeros(len(table.layout.lat_names)), n, seed
    )
    return asmfit.simulate_dataset(cfg), spec, table, theta, std_targets
