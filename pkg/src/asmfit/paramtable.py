"""Expansion of a ModelSpec into the flat parameter vector.

Every matrix cell that can hold a parameter becomes a ParameterEntry with a
canonical name (``lambda[y2]@1``, ``beta[sa->fhs]@2``, ``pi[ds]@1->3``,
``psi[sex,age]``, ...). Free entries map to slots of the optimizer vector;
equality classes share one slot. The invariance ladder is realized purely
as equality classes over loadings (weak) and intercepts (strong).

Observed-column intercepts are always part of the table, including one free
intercept per covariate column (covariate latents are centered, so those
intercepts carry the covariate means). Latent means are structurally zero
at every invariance level; simulation feeds nonzero latent means through
GeneratorConfig instead.
"""

from dataclasses import dataclass, field

import numpy as np

from .assemble import AssembledMatrices, StackedLayout
from .errors import AsmError, ConstraintConflictError

MATRIX_ORDER = {"mu": 0, "lambda": 1, "beta": 2, "pi": 3, "c": 4, "psi": 5, "theta": 6}

# stacked array each target writes into
_TARGET_ARRAY = {
    "mu": "mu",
    "lambda": "lam",
    "beta": "gamma",
    "pi": "gamma",
    "c": "gamma",
    "psi": "psi",
    "theta": "theta_resid",
}


@dataclass
class ParameterEntry:
    """One matrix cell: its identity, status, and stacked coordinates."""

    id: int
    name: str
    target: str
    row: int
    col: int
    wave: int | None
    wave_src: int | None
    status: str  # 'free' | 'fixed' | 'equal'
    value: float | None  # fixed value
    class_id: str | None
    start: float
    si: int  # stacked row
    sj: int  # stacked col
    symmetric: bool  # off-diagonal cell of a symmetric matrix
    slot: int | None = None

    @property
    def array(self):
        return _TARGET_ARRAY[self.target]


@dataclass
class ParameterTable:
    """All parameter entries for one spec at one invariance level."""

    spec: object
    level: str
    layout: StackedLayout
    entries: tuple
    free_count: int
    slot_names: tuple
    _by_name: dict = field(repr=False, default_factory=dict)
    _scatter: dict = field(repr=False, default_factory=dict)

    def entry(self, name):
        return self._by_name[name]

    def slot_entries(self, slot):
        return [e for e in self.entries if e.slot == slot]

    @property
    def has_mean_structure(self):
        """True when intercepts are constrained, activating the mean term."""
        return any(
            e.target == "mu" and e.status != "free" for e in self.entries
        )

    def default_starts(self):
        starts = np.zeros(self.free_count)
        counts = np.zeros(self.free_count)
        for e in self.entries:
            if e.slot is not None:
                starts[e.slot] += e.start
                counts[e.slot] += 1
        return starts / np.maximum(counts, 1)

    def slot_of(self, name):
        """Slot index for an entry name or a class slot name like 'mu[x]@*'."""
        e = self._by_name.get(name)
        if e is not None:
            return e.slot
        try:
            return self.slot_names.index(name)
        except ValueError:
            raise KeyError(name) from None


def build_parameter_table(spec, level=None):
    """Expand spec into a ParameterTable at the given invariance level.

    Level defaults to the spec's declared invariance. Equality classes:
    weak collapses each free loading position across waves (exempt latents
    skipped); strong adds intercept classes for latents that are neither
    exempt nor observed-as-latent (single indicator with fixed loading and
    fixed residual). User ``fix`` statements are applied last and win;
    distinct fixed values inside one class raise ConstraintConflictError.
    """
    level = level or spec.invariance
    if level not in ("configural", "weak", "strong"):
        raise ValueError(f"unknown invariance level '{level}'")
    layout = StackedLayout.from_spec(spec)
    entries = _generate_entries(spec, layout)
    _apply_identification(spec, entries)
    # the except list binds to the level it was declared for: loadings when
    # the spec says "invariance weak except ...", intercepts when it says
    # "invariance strong except ..." (loadings stay fully constrained there)
    if level in ("weak", "strong"):
        loading_exempt = spec.invariance_exempt if spec.invariance == "weak" else ()
        _add_loading_classes(spec, entries, loading_exempt)
    if level == "strong":
        intercept_exempt = spec.invariance_exempt if spec.invariance == "strong" else ()
        _add_intercept_classes(spec, entries, intercept_exempt)
    _apply_user_fixes(spec, entries)
    _check_class_conflicts(entries)
    entries.sort(
        key=lambda e: (
            MATRIX_ORDER[e.target],
            e.wave or 0,
            e.wave_src or 0,
            e.row,
            e.col,
        )
    )
    slot_names, free_count = _assign_slots(entries)
    for i, e in enumerate(entries):
        e.id = i
    table = ParameterTable(
        spec=spec,
        level=level,
        layout=layout,
        entries=tuple(entries),
        free_count=free_count,
        slot_names=tuple(slot_names),
    )
    table._by_name = {e.name: e for e in entries}
    table._scatter = _compile_scatter(table)
    return table


def count_free_parameters(table):
    """Number of distinct free slots after equality-class collapsing."""
    return table.free_count


def _generate_entries(spec, layout):
    entries = []
    T, q = spec.waves, spec.n_latents
    covs = spec.covariate_names

    def add(name, target, row, col, wave, wave_src, start, si, sj, sym=False):
        entries.append(
            ParameterEntry(
                id=-1,
                name=name,
                target=target,
                row=row,
                col=col,
                wave=wave,
                wave_src=wave_src,
                status="free",
                value=None,
                class_id=None,
                start=start,
                si=si,
                sj=sj,
                symmetric=sym,
            )
        )

    ind_names = spec.indicator_names
    # intercepts: every indicator column per wave, plus covariate columns
    for t in range(1, T + 1):
        for j, ind in enumerate(ind_names):
            add(f"mu[{ind}]@{t}", "mu", j, 0, t, None, 0.0, layout.obs_index(ind, t), 0)
    for cov in covs:
        add(f"mu[{cov}]", "mu", layout.cov_obs_index(cov), 0, None, None, 0.0,
            layout.cov_obs_index(cov), 0)
    # loadings
    for t in range(1, T + 1):
        for lat in spec.latents:
            for ind in spec.indicators[lat]:
                add(
                    f"lambda[{ind}]@{t}",
                    "lambda",
                    ind_names.index(ind),
                    spec.latents.index(lat),
                    t,
                    None,
                    1.0,
                    layout.obs_index(ind, t),
                    layout.lat_index(lat, t),
                )
    # within-wave structural coefficients
    for t in range(1, T + 1):
        for src, dst in spec.structural_edges:
            add(
                f"beta[{src}->{dst}]@{t}",
                "beta",
                spec.latents.index(dst),
                spec.latents.index(src),
                t,
                None,
                0.0,
                layout.lat_index(dst, t),
                layout.lat_index(src, t),
            )
    # autoregressive coefficients, all lags 1..k
    for t in range(2, T + 1):
        for i in range(max(1, t - spec.ar_order), t):
            for lat in spec.latents:
                add(
                    f"pi[{lat}]@{i}->{t}",
                    "pi",
                    spec.latents.index(lat),
                    spec.latents.index(lat),
                    t,
                    i,
                    0.0,
                    layout.lat_index(lat, t),
                    layout.lat_index(lat, i),
                )
    # covariate effects
    for t in range(1, T + 1):
        for lat in spec.latents:
            targeted = [cov for cov, targets in spec.covariates if lat in targets]
            for cov in targeted:
                add(
                    f"c[{cov}->{lat}]@{t}",
                    "c",
                    spec.latents.index(lat),
                    covs.index(cov),
                    t,
                    None,
                    0.0,
                    layout.lat_index(lat, t),
                    layout.cov_lat_index(cov),
                )
    # latent disturbance variances (diagonal per wave)
    for t in range(1, T + 1):
        for lat in spec.latents:
            add(
                f"psi[{lat}]@{t}",
                "psi",
                spec.latents.index(lat),
                spec.latents.index(lat),
                t,
                None,
                1.0,
                layout.lat_index(lat, t),
                layout.lat_index(lat, t),
            )
    # covariate variances/covariances (fully free block)
    for i, c1 in enumerate(covs):
        for j in range(i, len(covs)):
            c2 = covs[j]
            add(
                f"psi[{c1},{c2}]" if i != j else f"psi[{c1}]",
                "psi",
                i,
                j,
                None,
                None,
                1.0 if i == j else 0.0,
                layout.cov_lat_index(c1),
                layout.cov_lat_index(c2),
                sym=i != j,
            )
    # measurement residual variances (diagonal)
    for t in range(1, T + 1):
        for j, ind in enumerate(ind_names):
            add(
                f"theta[{ind}]@{t}",
                "theta",
                j,
                j,
                t,
                None,
                1.0,
                layout.obs_index(ind, t),
                layout.obs_index(ind, t),
            )
    return entries


def _index(entries):
    return {e.name: e for e in entries}


def _apply_identification(spec, entries):
    by_name = _index(entries)
    if spec.identification == "marker":
        for lat in spec.latents:
            marker = spec.indicators[lat][0]
            for t in range(1, spec.waves + 1):
                e = by_name[f"lambda[{marker}]@{t}"]
                e.status, e.value = "fixed", 1.0
    else:  # variance identification: loadings free, disturbance variances 1
        for lat in spec.latents:
            if len(spec.indicators[lat]) < 2:
                continue  # single-indicator latents still need user fixes
            for t in range(1, spec.waves + 1):
                e = by_name[f"psi[{lat}]@{t}"]
                e.status, e.value = "fixed", 1.0


def _add_loading_classes(spec, entries, exempt):
    if spec.waves < 2:
        return
    exempt = set(exempt)
    by_name = _index(entries)
    for lat in spec.latents:
        if lat in exempt:
            continue
        for ind in spec.indicators[lat]:
            members = [
                by_name[f"lambda[{ind}]@{t}"] for t in range(1, spec.waves + 1)
            ]
            if any(m.status == "fixed" for m in members):
                continue  # marker rows stay pinned at every wave
            for m in members:
                m.status = "equal"
                m.class_id = f"lambda[{ind}]"


def _observed_as_latent(spec, lat):
    """Single indicator with pinned loading and pinned residual variance."""
    inds = spec.indicators[lat]
    if len(inds) != 1:
        return False
    ind = inds[0]
    loading_pinned = spec.identification == "marker" or any(
        f.target == "lambda" and f.names == (ind,) for f in spec.fixed_values
    )
    resid_pinned = any(
        f.target == "theta" and f.names == (ind,) for f in spec.fixed_values
    )
    return loading_pinned and resid_pinned


def _add_intercept_classes(spec, entries, exempt):
    if spec.waves < 2:
        return
    exempt = set(exempt)
    by_name = _index(entries)
    for lat in spec.latents:
        if lat in exempt or _observed_as_latent(spec, lat):
            continue
        for ind in spec.indicators[lat]:
            members = [by_name[f"mu[{ind}]@{t}"] for t in range(1, spec.waves + 1)]
            if any(m.status == "fixed" for m in members):
                continue
            for m in members:
                m.status = "equal"
                m.class_id = f"mu[{ind}]"


def _apply_user_fixes(spec, entries):
    for fix in spec.fixed_values:
        matched = []
        for e in entries:
            if e.target != fix.target:
                continue
            if fix.wave is not None and e.wave != fix.wave:
                continue
            if not _names_match(e, fix):
                continue
            matched.append(e)
        if not matched:
            wave = "*" if fix.wave is None else fix.wave
            raise AsmError(
                f"fix {fix.target}({','.join(fix.names)})@{wave} matches no model cell"
            )
        for e in matched:
            e.status, e.value = "fixed", fix.value


def _names_match(entry, fix):
    if fix.target in ("lambda", "theta", "mu"):
        ind = fix.names[0]
        return entry.name.startswith(f"{fix.target}[{ind}]")
    if fix.target == "psi":
        return entry.wave is not None and entry.name == f"psi[{fix.names[0]}]@{entry.wave}"
    if fix.target == "beta":
        src, dst = fix.names
        return entry.name.startswith(f"beta[{src}->{dst}]")
    return False


def _check_class_conflicts(entries):
    # a fixed member makes its whole class fixed (the class says "equal", the
    # fix says "this value", so every member takes it); two members pinned to
    # different values contradict each other.
    by_class = {}
    for e in entries:
        if e.class_id is not None:
            by_class.setdefault(e.class_id, []).append(e)
    for class_id, members in by_class.items():
        values = {m.value for m in members if m.status == "fixed"}
        if len(values) > 1:
            raise ConstraintConflictError(
                f"equality class {class_id} pinned to conflicting values "
                f"{sorted(values)}"
            )
        if values:
            value = values.pop()
            for m in members:
                m.status, m.value, m.class_id = "fixed", value, None


def _assign_slots(entries):
    slot_names = []
    class_slots = {}
    count = 0
    for e in entries:
        if e.status == "fixed":
            e.slot = None
        elif e.status == "equal":
            if e.class_id not in class_slots:
                class_slots[e.class_id] = count
                slot_names.append(f"{e.class_id}@*")
                count += 1
            e.slot = class_slots[e.class_id]
        else:
            e.slot = count
            slot_names.append(e.name)
            count += 1
    return slot_names, count


def _compile_scatter(table):
    """Static index arrays for fast assembly and gradient gathering."""
    layout = table.layout
    shapes = {
        "mu": (layout.n_obs,),
        "lam": (layout.n_obs, layout.n_lat),
        "gamma": (layout.n_lat, layout.n_lat),
        "psi": (layout.n_lat, layout.n_lat),
        "theta_resid": (layout.n_obs, layout.n_obs),
    }
    compiled = {}
    for array, shape in shapes.items():
        fixed_pos, fixed_val = [], []
        free_pos, free_slot, free_weight = [], [], []
        for e in table.entries:
            if e.array != array:
                continue
            positions = [(e.si, e.sj)]
            if e.symmetric:
                positions.append((e.sj, e.si))
            flat = [
                i * shape[1] + j if len(shape) == 2 else i for i, j in positions
            ]
            if e.status == "fixed":
                fixed_pos.extend(flat)
                fixed_val.extend([e.value] * len(flat))
            else:
                free_pos.extend(flat)
                free_slot.extend([e.slot] * len(flat))
        grad_pos, grad_slot, grad_weight = [], [], []
        for e in table.entries:
            if e.array != array or e.status == "fixed":
                continue
            flat = e.si * shape[1] + e.sj if len(shape) == 2 else e.si
            grad_pos.append(flat)
            grad_slot.append(e.slot)
            grad_weight.append(2.0 if e.symmetric else 1.0)
        compiled[array] = {
            "shape": shape,
            "fixed_pos": np.asarray(fixed_pos, dtype=np.intp),
            "fixed_val": np.asarray(fixed_val, dtype=float),
            "free_pos": np.asarray(free_pos, dtype=np.intp),
            "free_slot": np.asarray(free_slot, dtype=np.intp),
            "grad_pos": np.asarray(grad_pos, dtype=np.intp),
            "grad_slot": np.asarray(grad_slot, dtype=np.intp),
            "grad_weight": np.asarray(grad_weight, dtype=float),
        }
    return compiled


def theta_to_matrices(table, theta):
    """Fill the stacked matrices from a free-parameter vector.

    Cells not named by any entry are structurally zero, except the unit
    loadings and zero residuals that tie covariate columns to their
    exogenous latents (assembly constants, not parameters).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (table.free_count,):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({table.free_count},)"
        )
    layout = table.layout
    arrays = {
        "mu": np.zeros(layout.n_obs),
        "lam": np.zeros((layout.n_obs, layout.n_lat)),
        "gamma": np.zeros((layout.n_lat, layout.n_lat)),
        "psi": np.zeros((layout.n_lat, layout.n_lat)),
        "theta_resid": np.zeros((layout.n_obs, layout.n_obs)),
    }
    for name, arr in arrays.items():
        sc = table._scatter[name]
        flat = arr.reshape(-1)
        if sc["fixed_pos"].size:
            flat[sc["fixed_pos"]] = sc["fixed_val"]
        if sc["free_pos"].size:
            flat[sc["free_pos"]] = theta[sc["free_slot"]]
    # covariate columns load 1.0 on their latent with zero residual
    for cov in table.spec.covariate_names:
        arrays["lam"][layout.cov_obs_index(cov), layout.cov_lat_index(cov)] = 1.0
    return AssembledMatrices(
        layout=layout,
        mu=arrays["mu"],
        lam=arrays["lam"],
        gamma=arrays["gamma"],
        psi=arrays["psi"],
        theta_resid=arrays["theta_resid"],
    )


def gather_gradient(table, grads):
    """Accumulate per-matrix gradient arrays into the free-slot vector.

    ``grads`` maps array name -> dF/d(array cell); symmetric off-diagonal
    entries pick up weight 2 since only the lower cell is gathered.
    """
    out = np.zeros(table.free_count)
    for name, arr in grads.items():
        if arr is None:
            continue
        sc = table._scatter[name]
        if sc["grad_pos"].size:
            vals = arr.reshape(-1)[sc["grad_pos"]] * sc["grad_weight"]
            np.add.at(out, sc["grad_slot"], vals)
    return out


def compute_starts(table, moments=None):
    """Starting values for the free slots.

    Without moments: the table's defaults (loadings 1, variances 1,
    coefficients 0, intercepts 0). With moments: intercepts start at sample
    means, variances at half the sample variance of the marker (or own)
    column, covariate covariances at their sample values.
    """
    if moments is None:
        return table.default_starts()
    spec, layout = table.spec, table.layout
    S, ybar = moments.S, moments.ybar
    starts = np.zeros(table.free_count)
    counts = np.zeros(table.free_count)
    for e in table.entries:
        if e.slot is None:
            continue
        if e.target == "mu":
            val = ybar[e.si]
        elif e.target == "psi" and e.wave is not None:
            lat = spec.latents[e.row]
            marker = layout.obs_index(spec.indicators[lat][0], e.wave)
            val = max(0.5 * S[marker, marker], 0.05)
        elif e.target == "psi":
            val = S[layout.cov_obs_index(spec.covariate_names[e.row]),
                    layout.cov_obs_index(spec.covariate_names[e.col])]
            if e.row == e.col:
                val = max(val, 0.05)
        elif e.target == "theta":
            val = max(0.5 * S[e.si, e.si], 0.05)
        elif e.target == "lambda":
            val = 1.0
        else:
            val = 0.0
        starts[e.slot] += val
        counts[e.slot] += 1
    return starts / np.maximum(counts, 1)
