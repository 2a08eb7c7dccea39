"""The shipped reference model and truth construction from standardized targets.

``build_truth_from_standardized`` turns a set of standardized loadings and
structural coefficients into an admissible raw parameterization: first a
unit-variance construction (every latent and indicator gets variance one,
so standardized equals raw), then an exact rescaling into the fitted
marker parameterization (marker loadings one). Both parameterizations are
observationally identical, which is what makes this a usable oracle for
simulation and recovery tests.

The reference model is a three-wave order-2 panel with four constructs
(social activity, physical activity, functional limitations, depressive
symptoms; 1+1+5+8 indicators) and five time-invariant covariates; its
generator targets are published standardized estimates for a model of this
shape.
"""

from importlib import resources

import numpy as np

from .modelspec import parse_model_spec

REFERENCE_SPEC = """\
# Three-wave order-2 panel: social activity, physical activity,
# functional limitations, depressive symptoms; five covariates.
latent sa by sa1
latent pa by pa1
latent fhs by fhs1 fhs2 fhs3 fhs4 fhs5
latent ds by ds1 ds2 ds3 ds4 ds5 ds6 ds7 ds8
path sa -> fhs
path pa -> fhs
path sa -> ds
path pa -> ds
path fhs -> ds
covariate sex -> sa pa fhs ds
covariate age -> sa pa fhs ds
covariate urban -> sa pa fhs ds
covariate married -> sa pa fhs ds
covariate edu -> sa pa fhs ds
waves 3
ar 2
invariance strong except fhs
fix lambda(sa1)@* = 1
fix lambda(pa1)@* = 1
fix theta(sa1)@* = 0
fix theta(pa1)@* = 0
"""

# standardized loadings (time-invariant)
LAMBDA_STD = {
    "sa1": 1.0,
    "pa1": 1.0,
    "fhs1": 0.348, "fhs2": 0.361, "fhs3": 0.407, "fhs4": 0.372, "fhs5": 0.158,
    "ds1": 0.660, "ds2": 0.600, "ds3": 0.737, "ds4": 0.692,
    "ds5": 0.335, "ds6": 0.455, "ds7": 0.447, "ds8": 0.389,
}

# standardized within-wave paths, (source, target) -> per-wave values
BETA_STD = {
    ("sa", "fhs"): (-0.105, -0.080, -0.054),
    ("pa", "fhs"): (-0.146, -0.081, -0.094),
    ("sa", "ds"): (-0.085, -0.015, -0.015),
    ("pa", "ds"): (0.056, 0.098, 0.044),
    ("fhs", "ds"): (0.309, 0.246, 0.227),
}

# standardized autoregressive paths, latent -> {(i, t): value}
PI_STD = {
    "sa": {(1, 2): 0.332, (1, 3): 0.203, (2, 3): 0.321},
    "pa": {(1, 2): 0.331, (1, 3): 0.202, (2, 3): 0.329},
    "fhs": {(1, 2): 0.527, (1, 3): 0.233, (2, 3): 0.493},
    "ds": {(1, 2): 0.445, (1, 3): 0.235, (2, 3): 0.373},
}

# standardized covariate effects, latent -> wave -> (sex, age, urban, married, edu)
C_STD = {
    "sa": {
        1: (0.041, 0.046, 0.077, 0.005, 0.133),
        2: (0.028, -0.020, 0.078, 0.039, 0.111),
        3: (0.029, -0.043, 0.025, 0.024, 0.088),
    },
    "pa": {
        1: (-0.174, -0.220, -0.173, -0.038, -0.121),
        2: (-0.069, -0.180, -0.065, -0.009, -0.059),
        3: (-0.008, -0.077, -0.079, -0.022, -0.007),
    },
    "fhs": {
        1: (0.033, 0.173, -0.038, 0.008, -0.108),
        2: (0.003, 0.098, 0.009, -0.010, -0.051),
        3: (0.030, 0.066, -0.035, 0.010, -0.006),
    },
    "ds": {
        1: (0.141, -0.026, -0.076, 0.071, -0.082),
        2: (0.076, -0.090, -0.022, 0.040, -0.029),
        3: (0.064, -0.028, -0.024, 0.000, -0.027),
    },
}

DEFAULT_COV_CORR = 0.15


def reference_spec():
    return parse_model_spec(REFERENCE_SPEC, filename="<reference>")


def reference_spec_path():
    """Filesystem path of the packaged .asm copy (for CLI walkthroughs)."""
    return str(resources.files("asmfit").joinpath("data/health_panel.asm"))


def reference_standardized():
    """The generator targets: (lambda_std, beta_std, pi_std, c_std)."""
    return LAMBDA_STD, BETA_STD, PI_STD, C_STD


def build_truth_from_standardized(spec, lambda_std, beta_std, pi_std, c_std,
                                  cov_corr=DEFAULT_COV_CORR):
    """Raw truth values (marker parameterization) from standardized targets.

    Returns (values, std_targets): ``values`` maps entry names to raw true
    values for every parameter in the model; ``std_targets`` maps the
    structural entry names (beta/pi/c) to the standardized inputs. In the
    unit-variance construction each latent's disturbance variance is
    1 - explained, so standardized equals raw; any coefficient bundle that
    would explain more than 90% of a latent's variance is shrunk
    proportionally (keeps random draws admissible).

    ``lambda_std`` is time-invariant; ``beta_std[(src, dst)]`` and the
    per-wave covariate tables follow the wave count of the spec.
    """
    topo = spec.topological_latents()
    covs = spec.covariate_names
    n_cov = len(covs)
    waves = spec.waves
    positions = {}
    for i, cov in enumerate(covs):
        positions[cov] = i
    for t in range(1, waves + 1):
        for lat in topo:
            positions[(lat, t)] = n_cov + (t - 1) * len(topo) + topo.index(lat)
    n_lat = n_cov + waves * len(topo)
    v = np.zeros((n_lat, n_lat))
    if n_cov:
        block = np.full((n_cov, n_cov), cov_corr)
        np.fill_diagonal(block, 1.0)
        v[:n_cov, :n_cov] = block

    values = {}
    std_targets = {}
    for i, c1 in enumerate(covs):
        values[f"psi[{c1}]"] = 1.0
        for j in range(i + 1, n_cov):
            values[f"psi[{c1},{covs[j]}]"] = cov_corr
        values[f"mu[{c1}]"] = 0.0

    psi_unit = {}
    for t in range(1, waves + 1):
        for lat in topo:
            parents, coefs, names = [], [], []
            for ci, cov in enumerate(covs):
                targets = dict(spec.covariates)[cov]
                if lat in targets:
                    val = c_std[lat][t][ci]
                    parents.append(positions[cov])
                    coefs.append(val)
                    names.append(f"c[{cov}->{lat}]@{t}")
            for src, dst in spec.structural_edges:
                if dst == lat:
                    val = beta_std[(src, dst)][t - 1]
                    parents.append(positions[(src, t)])
                    coefs.append(val)
                    names.append(f"beta[{src}->{dst}]@{t}")
            for i_wave in range(max(1, t - spec.ar_order), t):
                val = pi_std[lat][(i_wave, t)]
                parents.append(positions[(lat, i_wave)])
                coefs.append(val)
                names.append(f"pi[{lat}]@{i_wave}->{t}")
            b = np.array(coefs)
            if parents:
                vp = v[np.ix_(parents, parents)]
                explained = float(b @ vp @ b)
                if explained > 0.9:
                    b = b * np.sqrt(0.9 / explained)
                    explained = 0.9
            else:
                explained = 0.0
            for name, val in zip(names, b):
                values[name] = float(val)
                std_targets[name] = float(val)
            pos = positions[(lat, t)]
            psi_unit[(lat, t)] = 1.0 - explained
            if parents:
                cross = v[parents, :] * b[:, None]
                v[pos, :] = cross.sum(axis=0)
                v[:, pos] = v[pos, :]
            v[pos, pos] = 1.0

    # marker rescaling: eta' = s * eta with s the marker's standardized loading
    scale = {lat: lambda_std[spec.indicators[lat][0]] for lat in spec.latents}
    for t in range(1, waves + 1):
        for lat in spec.latents:
            s = scale[lat]
            values[f"psi[{lat}]@{t}"] = psi_unit[(lat, t)] * s * s
            for ind in spec.indicators[lat]:
                values[f"lambda[{ind}]@{t}"] = lambda_std[ind] / s
                resid = 1.0 - lambda_std[ind] ** 2
                values[f"theta[{ind}]@{t}"] = max(resid, 0.0)
                values[f"mu[{ind}]@{t}"] = 0.0
        for src, dst in spec.structural_edges:
            name = f"beta[{src}->{dst}]@{t}"
            values[name] = values[name] * scale[dst] / scale[src]
        for cov, targets in spec.covariates:
            for lat in targets:
                name = f"c[{cov}->{lat}]@{t}"
                values[name] = values[name] * scale[lat]
    return values, std_targets


def reference_truth():
    """Truth values for the reference spec from the published targets."""
    spec = reference_spec()
    return build_truth_from_standardized(spec, *reference_standardized())


def truth_vector(table, values):
    """Pack an entry-name -> value mapping into the table's free vector.

    Every free slot must be covered; class members must agree. Values for
    fixed entries are checked for consistency and otherwise ignored.
    """
    theta = np.full(table.free_count, np.nan)
    for name, value in values.items():
        e = table.entry(name)
        if e.slot is None:
            if abs((e.value or 0.0) - value) > 1e-12:
                raise ValueError(
                    f"{name} is fixed at {e.value}, truth says {value}"
                )
            continue
        if np.isfinite(theta[e.slot]) and abs(theta[e.slot] - value) > 1e-9:
            raise ValueError(
                f"slot {table.slot_names[e.slot]} gets conflicting values "
                f"{theta[e.slot]} and {value} (class members must agree)"
            )
        theta[e.slot] = value
    if np.any(~np.isfinite(theta)):
        missing = [table.slot_names[i] for i in np.flatnonzero(~np.isfinite(theta))]
        raise ValueError(f"truth does not cover slots: {missing[:5]} ...")
    return theta


def random_standardized_targets(spec, rng):
    """Random admissible standardized targets for oracle sweeps.

    Scales are kept moderate so implied variances stay near one and
    Monte-Carlo covariance checks keep tight tolerances.
    """
    lam = {}
    for lat in spec.latents:
        inds = spec.indicators[lat]
        for k, ind in enumerate(inds):
            lam[ind] = 1.0 if len(inds) == 1 else float(rng.uniform(0.4, 0.8))
    beta = {
        edge: tuple(rng.uniform(-0.3, 0.3, size=spec.waves))
        for edge in spec.structural_edges
    }
    pi = {
        lat: {
            (i, t): float(rng.uniform(0.1, 0.4))
            for t in range(2, spec.waves + 1)
            for i in range(max(1, t - spec.ar_order), t)
        }
        for lat in spec.latents
    }
    c = {
        lat: {
            t: tuple(rng.uniform(-0.2, 0.2, size=len(spec.covariate_names)))
            for t in range(1, spec.waves + 1)
        }
        for lat in spec.latents
    }
    return lam, beta, pi, c


def random_truth(spec, rng, cov_corr=0.1):
    """Random admissible raw truth (marker parameterization) for a spec."""
    lam, beta, pi, c = random_standardized_targets(spec, rng)
    return build_truth_from_standardized(spec, lam, beta, pi, c, cov_corr=cov_corr)
