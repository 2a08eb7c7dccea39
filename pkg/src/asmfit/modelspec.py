"""Parsing and validation of the textual model-specification language.

A spec file describes the per-wave template of an autoregressive structural
model: latent variables with their indicators, directed within-wave paths,
time-invariant covariates, the number of waves, the autoregressive order,
the invariance level, and user-pinned parameter values.

Grammar (one statement per line; ``;`` also terminates a statement; ``#``
starts a comment):

    latent <name> by <indicator> ...
    path <source> -> <target>
    covariate <name> -> <latent> ...
    waves <T>
    ar <k>
    invariance <configural|weak|strong> [except <latent> ...]
    identify <marker|variance>
    fix <target>@<wave> = <value>

``fix`` targets are ``lambda(<indicator>)``, ``theta(<indicator>)``,
``mu(<indicator>)``, ``psi(<latent>)`` and ``beta(<source>,<target>)``;
``<wave>`` is a 1-based wave number or ``*`` for every wave.

Wave-indexed observed names are generated, never declared: indicator ``y``
at wave ``t`` is column ``y.t`` in data files, and covariate columns keep
their bare names.
"""

from dataclasses import dataclass, replace

from .errors import SpecSyntaxError

INVARIANCE_LEVELS = ("configural", "weak", "strong")
IDENTIFICATION_METHODS = ("marker", "variance")
FIX_TARGETS = ("lambda", "theta", "mu", "psi", "beta")


@dataclass(frozen=True)
class FixedValue:
    """A user-pinned matrix cell: ``fix lambda(y1)@2 = 1``.

    ``wave`` is a 1-based wave number, or None for "every wave".
    ``names`` holds the indicator / latent / (source, target) names.
    """

    target: str
    names: tuple
    wave: int | None
    value: float


@dataclass(frozen=True)
class ModelSpec:
    """Canonical description of the template model.

    latents/indicators keep declaration order; the first indicator of each
    latent is its marker. ``covariates`` maps each covariate to the latents
    it affects. ``invariance_exempt`` names latents excluded from the top
    invariance level's added equality constraints.
    """

    latents: tuple
    indicators: dict
    structural_edges: tuple
    waves: int
    ar_order: int = 1
    covariates: tuple = ()
    invariance: str = "configural"
    invariance_exempt: tuple = ()
    fixed_values: tuple = ()
    identification: str = "marker"

    @property
    def n_latents(self):
        return len(self.latents)

    @property
    def indicator_names(self):
        """Template observed order: indicators grouped by latent declaration."""
        out = []
        for lat in self.latents:
            out.extend(self.indicators[lat])
        return tuple(out)

    @property
    def n_indicators(self):
        return len(self.indicator_names)

    @property
    def covariate_names(self):
        return tuple(name for name, _ in self.covariates)

    def latent_of(self, indicator):
        for lat, inds in self.indicators.items():
            if indicator in inds:
                return lat
        raise KeyError(indicator)

    def observed_columns(self):
        """Data-file column order: wave-indexed indicators, then covariates."""
        cols = []
        for t in range(1, self.waves + 1):
            cols.extend(f"{ind}.{t}" for ind in self.indicator_names)
        cols.extend(self.covariate_names)
        return tuple(cols)

    def topological_latents(self):
        """Latents sorted so every structural edge points forward.

        Stable: among available nodes, declaration order wins. Raises
        ValueError naming the latents on a cycle.
        """
        children = {lat: [] for lat in self.latents}
        indegree = {lat: 0 for lat in self.latents}
        for src, dst in self.structural_edges:
            children[src].append(dst)
            indegree[dst] += 1
        order = []
        ready = [lat for lat in self.latents if indegree[lat] == 0]
        while ready:
            node = ready.pop(0)
            order.append(node)
            for child in children[node]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
            ready.sort(key=self.latents.index)
        if len(order) != len(self.latents):
            cyclic = sorted(set(self.latents) - set(order), key=self.latents.index)
            raise ValueError(
                "structural paths form a cycle involving: " + ", ".join(cyclic)
            )
        return tuple(order)


@dataclass
class _Statement:
    line: int
    tokens: list  # (text, col) pairs


def _tokenize(text):
    """Split source into statements of (token, col) pairs.

    Statements end at newlines or ';'. Comments run from '#' to end of line.
    """
    statements = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        hash_pos = raw.find("#")
        if hash_pos >= 0:
            raw = raw[:hash_pos]
        for chunk_start, chunk in _split_semicolons(raw):
            tokens = []
            col = chunk_start
            for piece in chunk.split(" "):
                if piece:
                    tokens.append((piece, col + 1))
                col += len(piece) + 1
            if tokens:
                statements.append(_Statement(lineno, tokens))
    return statements


def _split_semicolons(line):
    start = 0
    for i, ch in enumerate(line):
        if ch == ";":
            yield start, line[start:i]
            start = i + 1
    yield start, line[start:]


class _Parser:
    def __init__(self, text, filename=None):
        self.filename = filename
        self.statements = _tokenize(text)
        self.latents = []
        self.indicators = {}
        self.edges = []
        self.covariates = []
        self.waves = None
        self.ar = None
        self.invariance = None
        self.exempt = ()
        self.fixes = []
        self.identification = None
        self.seen_names = {}

    def fail(self, message, line, col):
        raise SpecSyntaxError(message, line, col, self.filename)

    def parse(self):
        handlers = {
            "latent": self.stmt_latent,
            "path": self.stmt_path,
            "covariate": self.stmt_covariate,
            "waves": self.stmt_waves,
            "ar": self.stmt_ar,
            "invariance": self.stmt_invariance,
            "identify": self.stmt_identify,
            "fix": self.stmt_fix,
        }
        for stmt in self.statements:
            keyword, col = stmt.tokens[0]
            handler = handlers.get(keyword)
            if handler is None:
                self.fail(f"unknown statement '{keyword}'", stmt.line, col)
            handler(stmt)
        return self.finish()

    def declare(self, name, kind, line, col):
        if name in self.seen_names:
            self.fail(
                f"duplicate declaration of '{name}' "
                f"(already a {self.seen_names[name]})",
                line,
                col,
            )
        self.seen_names[name] = kind

    def stmt_latent(self, stmt):
        toks = stmt.tokens
        if len(toks) < 4 or toks[2][0] != "by":
            where = toks[min(2, len(toks) - 1)]
            self.fail("expected 'latent <name> by <indicator>...'", stmt.line, where[1])
        name, col = toks[1]
        self.declare(name, "latent", stmt.line, col)
        inds = []
        for tok, tcol in toks[3:]:
            self.declare(tok, "indicator", stmt.line, tcol)
            inds.append(tok)
        self.latents.append(name)
        self.indicators[name] = tuple(inds)

    def stmt_path(self, stmt):
        toks = stmt.tokens
        if len(toks) != 4 or toks[2][0] != "->":
            self.fail("expected 'path <source> -> <target>'", stmt.line, toks[0][1])
        src, scol = toks[1]
        dst, dcol = toks[3]
        self.require_latent(src, stmt.line, scol)
        self.require_latent(dst, stmt.line, dcol)
        if (src, dst) in self.edges:
            self.fail(f"duplicate path {src} -> {dst}", stmt.line, scol)
        self.edges.append((src, dst))

    def stmt_covariate(self, stmt):
        toks = stmt.tokens
        if len(toks) < 4 or toks[2][0] != "->":
            self.fail("expected 'covariate <name> -> <latent>...'", stmt.line, toks[0][1])
        name, col = toks[1]
        self.declare(name, "covariate", stmt.line, col)
        targets = []
        for tok, tcol in toks[3:]:
            self.require_latent(tok, stmt.line, tcol)
            if tok in targets:
                self.fail(f"duplicate covariate target '{tok}'", stmt.line, tcol)
            targets.append(tok)
        self.covariates.append((name, tuple(targets)))

    def stmt_waves(self, stmt):
        self.waves = self.scalar_int(stmt, "waves", minimum=1)

    def stmt_ar(self, stmt):
        self.ar = self.scalar_int(stmt, "ar", minimum=0)

    def scalar_int(self, stmt, keyword, minimum):
        toks = stmt.tokens
        if len(toks) != 2:
            self.fail(f"expected '{keyword} <integer>'", stmt.line, toks[0][1])
        if getattr(self, keyword) is not None:
            self.fail(f"duplicate '{keyword}' statement", stmt.line, toks[0][1])
        text, col = toks[1]
        try:
            value = int(text)
        except ValueError:
            self.fail(f"'{keyword}' takes an integer, got '{text}'", stmt.line, col)
        if value < minimum:
            self.fail(f"'{keyword}' must be >= {minimum}", stmt.line, col)
        return value

    def stmt_invariance(self, stmt):
        toks = stmt.tokens
        if self.invariance is not None:
            self.fail("duplicate 'invariance' statement", stmt.line, toks[0][1])
        if len(toks) < 2:
            self.fail("expected 'invariance <level>'", stmt.line, toks[0][1])
        level, col = toks[1]
        if level not in INVARIANCE_LEVELS:
            self.fail(
                f"invariance level must be one of {'/'.join(INVARIANCE_LEVELS)}",
                stmt.line,
                col,
            )
        exempt = []
        if len(toks) > 2:
            kw, kcol = toks[2]
            if kw != "except":
                self.fail("expected 'except <latent>...'", stmt.line, kcol)
            if len(toks) < 4:
                self.fail("'except' needs at least one latent", stmt.line, kcol)
            for tok, tcol in toks[3:]:
                self.require_latent(tok, stmt.line, tcol)
                exempt.append(tok)
        self.invariance = level
        self.exempt = tuple(exempt)

    def stmt_identify(self, stmt):
        toks = stmt.tokens
        if self.identification is not None:
            self.fail("duplicate 'identify' statement", stmt.line, toks[0][1])
        if len(toks) != 2 or toks[1][0] not in IDENTIFICATION_METHODS:
            self.fail(
                f"expected 'identify <{'|'.join(IDENTIFICATION_METHODS)}>'",
                stmt.line,
                toks[-1][1],
            )
        self.identification = toks[1][0]

    def stmt_fix(self, stmt):
        # fix lambda(y1)@2 = 0.5   (tokens: fix, lambda(y1)@2, =, 0.5)
        toks = stmt.tokens
        if len(toks) != 4 or toks[2][0] != "=":
            self.fail("expected 'fix <target>@<wave> = <value>'", stmt.line, toks[0][1])
        spec_tok, scol = toks[1]
        val_tok, vcol = toks[3]
        if "@" not in spec_tok:
            self.fail("fix target needs '@<wave>'", stmt.line, scol)
        target_part, wave_part = spec_tok.rsplit("@", 1)
        if wave_part == "*":
            wave = None
        else:
            try:
                wave = int(wave_part)
            except ValueError:
                self.fail(f"bad wave '{wave_part}'", stmt.line, scol)
            if wave < 1:
                self.fail("wave numbers are 1-based", stmt.line, scol)
        if "(" not in target_part or not target_part.endswith(")"):
            self.fail("fix target looks like 'lambda(<name>)'", stmt.line, scol)
        matrix, arg = target_part[:-1].split("(", 1)
        if matrix not in FIX_TARGETS:
            self.fail(
                f"fix target must be one of {', '.join(FIX_TARGETS)}", stmt.line, scol
            )
        names = tuple(a.strip() for a in arg.split(","))
        if matrix == "beta":
            if len(names) != 2:
                self.fail("beta fix needs '(source,target)'", stmt.line, scol)
            self.require_latent(names[0], stmt.line, scol)
            self.require_latent(names[1], stmt.line, scol)
        elif matrix == "psi":
            if len(names) != 1:
                self.fail("psi fix names one latent", stmt.line, scol)
            self.require_latent(names[0], stmt.line, scol)
        else:
            if len(names) != 1:
                self.fail(f"{matrix} fix names one indicator", stmt.line, scol)
            self.require_indicator(names[0], stmt.line, scol)
        try:
            value = float(val_tok)
        except ValueError:
            self.fail(f"bad numeric value '{val_tok}'", stmt.line, vcol)
        self.fixes.append(FixedValue(matrix, names, wave, value))

    def require_latent(self, name, line, col):
        if self.seen_names.get(name) != "latent":
            self.fail(f"unknown latent '{name}'", line, col)

    def require_indicator(self, name, line, col):
        if self.seen_names.get(name) != "indicator":
            self.fail(f"unknown indicator '{name}'", line, col)

    def finish(self):
        if not self.latents:
            self.fail("spec declares no latent variables", 1, 1)
        if self.waves is None:
            self.fail("missing 'waves' statement", 1, 1)
        ar = self.ar if self.ar is not None else min(1, self.waves - 1)
        if ar >= self.waves:
            self.fail(f"ar order {ar} must be smaller than waves {self.waves}", 1, 1)
        if self.invariance is None:
            self.invariance = "configural"
        spec = ModelSpec(
            latents=tuple(self.latents),
            indicators=dict(self.indicators),
            structural_edges=tuple(self.edges),
            waves=self.waves,
            ar_order=ar,
            covariates=tuple(self.covariates),
            invariance=self.invariance,
            invariance_exempt=self.exempt,
            fixed_values=tuple(self.fixes),
            identification=self.identification or "marker",
        )
        for fix in spec.fixed_values:
            if fix.wave is not None and fix.wave > spec.waves:
                self.fail(
                    f"fix wave {fix.wave} exceeds waves {spec.waves}", 1, 1
                )
        try:
            spec.topological_latents()
        except ValueError as exc:
            self.fail(str(exc), 1, 1)
        return spec


def parse_model_spec(text, filename=None):
    """Parse spec source into a ModelSpec.

    Raises SpecSyntaxError (with line/column) on malformed input, unknown or
    duplicate names, ar >= waves, or a within-wave path cycle.
    """
    return _Parser(text, filename).parse()


def validate_template(spec):
    """Check identification-level template rules.

    Returns a list of diagnostic strings; empty means the template is usable.
    Unlike parsing, this never raises: programmatically built ModelSpecs get
    their problems reported as values.
    """
    diags = []
    try:
        spec.topological_latents()
    except ValueError as exc:
        diags.append(str(exc))
    for lat in spec.latents:
        inds = spec.indicators.get(lat, ())
        if len(inds) == 0:
            diags.append(f"latent '{lat}' has no indicators")
        elif len(inds) == 1:
            ind = inds[0]
            if not _loading_pinned(spec, lat, ind):
                diags.append(
                    f"single-indicator latent '{lat}' needs its loading fixed "
                    f"(marker identification fixes it automatically)"
                )
            if not _has_fix(spec, "theta", (ind,)):
                diags.append(
                    f"single-indicator latent '{lat}' needs the residual "
                    f"variance of '{ind}' fixed, e.g. 'fix theta({ind})@* = 0'"
                )
    for name in spec.invariance_exempt:
        if name not in spec.latents:
            diags.append(f"invariance exemption names unknown latent '{name}'")
    if spec.ar_order >= spec.waves:
        diags.append(
            f"ar order {spec.ar_order} must be smaller than waves {spec.waves}"
        )
    seen = {}
    for lat in spec.latents:
        for ind in spec.indicators.get(lat, ()):
            if ind in seen:
                diags.append(
                    f"indicator '{ind}' belongs to both '{seen[ind]}' and '{lat}'"
                )
            seen[ind] = lat
    return diags


def _has_fix(spec, matrix, names):
    return any(f.target == matrix and f.names == names for f in spec.fixed_values)


def _loading_pinned(spec, latent, indicator):
    if _has_fix(spec, "lambda", (indicator,)):
        return True
    # marker identification pins the first indicator of every latent
    return (
        spec.identification == "marker"
        and spec.indicators[latent][0] == indicator
    )


def pretty_print_model_spec(spec):
    """Render a ModelSpec back to canonical spec source.

    parse -> pretty-print -> parse is a fixed point; all defaults are made
    explicit so the canonical text is self-contained.
    """
    lines = []
    for lat in spec.latents:
        lines.append(f"latent {lat} by " + " ".join(spec.indicators[lat]))
    for src, dst in spec.structural_edges:
        lines.append(f"path {src} -> {dst}")
    for name, targets in spec.covariates:
        lines.append(f"covariate {name} -> " + " ".join(targets))
    lines.append(f"waves {spec.waves}")
    lines.append(f"ar {spec.ar_order}")
    inv = f"invariance {spec.invariance}"
    if spec.invariance_exempt:
        inv += " except " + " ".join(spec.invariance_exempt)
    lines.append(inv)
    lines.append(f"identify {spec.identification}")
    for fix in spec.fixed_values:
        wave = "*" if fix.wave is None else str(fix.wave)
        lines.append(f"fix {fix.target}({','.join(fix.names)})@{wave} = {fix.value:g}")
    return "\n".join(lines) + "\n"


def with_invariance(spec, level, exempt=None):
    """Copy of spec at a different invariance level (ladder plumbing)."""
    return replace(
        spec,
        invariance=level,
        invariance_exempt=spec.invariance_exempt if exempt is None else tuple(exempt),
    )
