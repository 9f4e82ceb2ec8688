"""SMPS reader/writer for two-stage problems with independent discrete randomness.

Supported subset:

* CORE: NAME, ROWS (N/E/L/G), COLUMNS, RHS, BOUNDS (UP, and LO 0).
* TIME: two periods, implicit (column/row markers) or ``PERIODS EXPLICIT``.
* STOCH: ``INDEP DISCRETE`` on right-hand sides, stage-2 objective
  coefficients and technology-matrix entries.

Everything else (RANGES, SCENARIOS, BLOCKS, other distributions,
multistage TIME files, random recourse) raises UnsupportedFeature.
Lines are tokenized on whitespace, so names may not contain blanks; the
emitter writes the conventional fixed-column layout.

Inequality rows become equalities with slack columns. A slack belongs
to the stage of its row: stage-1 slacks are appended to x (zero cost,
zero technology column), stage-2 slacks to y.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import (
    FirstStage,
    RandomEntry,
    SampledSpec,
    ScenarioData,
    TwoStageProblem,
    ValidationError,
    apply_outcomes,
    sample_instance,
    _fix_probabilities,
)

DEFAULT_SCENARIO_CAP = 10**6


class SmpsError(ValidationError):
    def __init__(self, msg: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        where = ""
        if file is not None:
            where = f"{file}" + (f" line {line}" if line is not None else "") + ": "
        super().__init__(where + msg)


class UnsupportedFeature(SmpsError):
    pass


class ScenarioExplosion(SmpsError):
    pass


@dataclass
class Core:
    name: str
    objective: str
    rows: list            # [(sense, name)] constraint rows in file order
    columns: list         # column names in file order
    coeffs: dict          # column -> [(row, value)] in file order
    rhs_name: str = "RHS"
    rhs: list = field(default_factory=list)      # [(row, value)]
    bound_name: str = "BND"
    bounds: list = field(default_factory=list)   # [(kind, column, value)]


@dataclass
class Time:
    name: str
    periods: list         # [(period, column marker, row marker)] for implicit files
    explicit: bool = False
    col_period: dict = field(default_factory=dict)
    row_period: dict = field(default_factory=dict)
    period_names: list = field(default_factory=list)


@dataclass
class StochEntry:
    column: str           # a column name or the RHS set name
    row: str
    outcomes: list        # [(value, period, prob)]
    line: int = 0


@dataclass
class Stoch:
    name: str
    entries: list


@dataclass
class SmpsBundle:
    core: Core
    time: Time
    stoch: Stoch
    base: TwoStageProblem = None
    random: tuple = ()

    @property
    def outcome_counts(self) -> list[int]:
        return [len(e.values) for e in self.random]


# -- tokenizing -------------------------------------------------------------

def _lines(text: str):
    for no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        yield no, raw, raw[0] not in " \t", raw.split()


def _num(tok: str, file: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise SmpsError(f"expected a number, got {tok!r}", file, line) from None
    if not math.isfinite(v):
        raise SmpsError(f"non-finite number {tok!r}", file, line)
    return v


def _fmt(v: float) -> str:
    return format(v, ".12g")


def _data(f2="", f3="", f4="", f5="", f6="") -> str:
    s = f"    {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        s += f"   {f5:<8}  {f6:>12}"
    return s.rstrip()


# -- CORE -------------------------------------------------------------------

def parse_core(text: str) -> Core:
    F = "CORE"
    name = None
    section = None
    objective = None
    rows: list = []
    senses: dict = {}
    columns: list = []
    coeffs: dict = {}
    rhs_name, rhs = None, []
    bound_name, bounds = None, []
    ended = False
    for no, raw, header, tok in _lines(text):
        if ended:
            raise SmpsError("content after ENDATA", F, no)
        if header:
            key = tok[0].upper()
            if key == "NAME":
                name = tok[1] if len(tok) > 1 else ""
                section = "NAME"
            elif key in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
                section = key
            elif key == "ENDATA":
                ended = True
            elif key in ("RANGES", "OBJSENSE", "OBJSENCE", "SOS", "QUADOBJ", "QMATRIX", "MARKER"):
                raise UnsupportedFeature(f"section {key} is not supported", F, no)
            else:
                raise SmpsError(f"unknown section {tok[0]!r}", F, no)
            continue
        if section == "ROWS":
            if len(tok) != 2:
                raise SmpsError("ROWS entries are '<sense> <name>'", F, no)
            sense, rname = tok[0].upper(), tok[1]
            if rname in senses or rname == objective:
                raise SmpsError(f"duplicate row {rname!r}", F, no)
            if sense == "N":
                if objective is not None:
                    raise UnsupportedFeature("more than one objective row", F, no)
                objective = rname
            elif sense in ("E", "L", "G"):
                senses[rname] = sense
                rows.append((sense, rname))
            else:
                raise SmpsError(f"unknown row sense {tok[0]!r}", F, no)
        elif section == "COLUMNS":
            if "'MARKER'" in tok:
                raise UnsupportedFeature("integer markers are not supported", F, no)
            if len(tok) not in (3, 5):
                raise SmpsError("COLUMNS entries are '<col> <row> <value> [<row> <value>]'", F, no)
            col = tok[0]
            if col not in coeffs:
                columns.append(col)
                coeffs[col] = []
            elif col != columns[-1]:
                raise SmpsError(f"column {col!r} is not contiguous", F, no)
            for rname, v in zip(tok[1::2], tok[2::2]):
                if rname != objective and rname not in senses:
                    raise SmpsError(f"unknown row {rname!r}", F, no)
                coeffs[col].append((rname, _num(v, F, no)))
        elif section == "RHS":
            if len(tok) not in (3, 5):
                raise SmpsError("RHS entries are '<set> <row> <value> [<row> <value>]'", F, no)
            if rhs_name is None:
                rhs_name = tok[0]
            elif tok[0] != rhs_name:
                raise UnsupportedFeature("more than one RHS set", F, no)
            for rname, v in zip(tok[1::2], tok[2::2]):
                if rname == objective:
                    raise UnsupportedFeature("objective constants are not supported", F, no)
                if rname not in senses:
                    raise SmpsError(f"unknown row {rname!r}", F, no)
                rhs.append((rname, _num(v, F, no)))
        elif section == "BOUNDS":
            if len(tok) != 4:
                raise SmpsError("BOUNDS entries are '<type> <set> <col> <value>'", F, no)
            kind, bset, col = tok[0].upper(), tok[1], tok[2]
            if col not in coeffs:
                raise SmpsError(f"unknown column {col!r}", F, no)
            if bound_name is None:
                bound_name = bset
            elif bset != bound_name:
                raise UnsupportedFeature("more than one BOUNDS set", F, no)
            v = _num(tok[3], F, no)
            if kind == "UP" and v >= 0:
                bounds.append((kind, col, v))
            elif kind == "LO" and v == 0:
                bounds.append((kind, col, v))
            else:
                raise UnsupportedFeature(f"bound {kind} {tok[3]} (only UP >= 0 and LO 0)", F, no)
        else:
            raise SmpsError("data line outside a section", F, no)
    if name is None:
        raise SmpsError("missing NAME", F)
    if objective is None:
        raise SmpsError("missing objective (N) row", F)
    if not ended:
        raise SmpsError("missing ENDATA", F)
    if not columns:
        raise SmpsError("no columns", F)
    return Core(name=name, objective=objective, rows=rows, columns=columns, coeffs=coeffs,
                rhs_name=rhs_name or "RHS", rhs=rhs, bound_name=bound_name or "BND", bounds=bounds)


def emit_core(core: Core) -> str:
    out = [f"NAME          {core.name}".rstrip(), "ROWS", f" N  {core.objective}"]
    out += [f" {s}  {r}" for s, r in core.rows]
    out.append("COLUMNS")
    for col in core.columns:
        out += [_data(col, r, _fmt(v)) for r, v in core.coeffs[col]]
    out.append("RHS")
    out += [_data(core.rhs_name, r, _fmt(v)) for r, v in core.rhs]
    if core.bounds:
        out.append("BOUNDS")
        out += [f" {k} {core.bound_name:<8}  {c:<8}  {_fmt(v):>12}" for k, c, v in core.bounds]
    out.append("ENDATA")
    return "\n".join(out) + "\n"


# -- TIME -------------------------------------------------------------------

def parse_time(text: str) -> Time:
    F = "TIME"
    name = None
    section = None
    explicit = False
    periods: list = []
    col_period: dict = {}
    row_period: dict = {}
    order: list = []
    ended = False
    for no, raw, header, tok in _lines(text):
        if ended:
            raise SmpsError("content after ENDATA", F, no)
        if header:
            key = tok[0].upper()
            if key == "TIME":
                name = tok[1] if len(tok) > 1 else ""
            elif key == "PERIODS":
                mode = tok[1].upper() if len(tok) > 1 else "IMPLICIT"
                if mode not in ("IMPLICIT", "EXPLICIT"):
                    raise SmpsError(f"unknown PERIODS mode {tok[1]!r}", F, no)
                explicit = mode == "EXPLICIT"
                section = "PERIODS"
            elif key in ("ROWS", "COLUMNS") and explicit:
                section = key
            elif key == "ENDATA":
                ended = True
            else:
                raise SmpsError(f"unknown section {tok[0]!r}", F, no)
            continue
        if section == "PERIODS" and not explicit:
            if len(tok) != 3:
                raise SmpsError("implicit periods are '<col> <row> <period>'", F, no)
            periods.append((tok[2], tok[0], tok[1]))
        elif section == "PERIODS":
            if len(tok) != 1:
                raise SmpsError("explicit PERIODS lists one period name per line", F, no)
            order.append(tok[0])
        elif section in ("ROWS", "COLUMNS"):
            if len(tok) != 2:
                raise SmpsError(f"{section} entries are '<name> <period>'", F, no)
            target = row_period if section == "ROWS" else col_period
            target[tok[0]] = tok[1]
        else:
            raise SmpsError("data line outside a section", F, no)
    if name is None:
        raise SmpsError("missing TIME header", F)
    if not ended:
        raise SmpsError("missing ENDATA", F)
    n_periods = len(order) if explicit else len(periods)
    if n_periods != 2:
        raise UnsupportedFeature(f"{n_periods} periods; only two-stage problems are supported", F)
    return Time(name=name, periods=periods, explicit=explicit, col_period=col_period,
                row_period=row_period, period_names=order if explicit else [p[0] for p in periods])


def emit_time(time: Time) -> str:
    out = [f"TIME          {time.name}".rstrip()]
    if time.explicit:
        out.append("PERIODS       EXPLICIT")
        out += [f"    {p}" for p in time.period_names]
        out.append("COLUMNS")
        out += [f"    {c:<8}  {p}" for c, p in time.col_period.items()]
        out.append("ROWS")
        out += [f"    {r:<8}  {p}" for r, p in time.row_period.items()]
    else:
        out.append("PERIODS")
        out += [f"    {c:<8}  {r:<8}  {p}" for p, c, r in time.periods]
    out.append("ENDATA")
    return "\n".join(out) + "\n"


# -- STOCH ------------------------------------------------------------------

def parse_stoch(text: str) -> Stoch:
    F = "STOCH"
    name = None
    section = None
    entries: list = []
    ended = False
    for no, raw, header, tok in _lines(text):
        if ended:
            raise SmpsError("content after ENDATA", F, no)
        if header:
            key = tok[0].upper()
            if key == "STOCH":
                name = tok[1] if len(tok) > 1 else ""
            elif key == "INDEP":
                dist = tok[1].upper() if len(tok) > 1 else ""
                if dist != "DISCRETE":
                    raise UnsupportedFeature(f"INDEP {dist or '(none)'}; only DISCRETE is supported", F, no)
                section = "INDEP"
            elif key in ("BLOCKS", "SCENARIOS", "SCENARIO"):
                raise UnsupportedFeature(f"section {key} is not supported", F, no)
            elif key == "ENDATA":
                ended = True
            else:
                raise SmpsError(f"unknown section {tok[0]!r}", F, no)
            continue
        if section != "INDEP":
            raise SmpsError("data line outside a section", F, no)
        if len(tok) != 5:
            raise SmpsError("INDEP entries are '<col> <row> <value> <period> <prob>'", F, no)
        col, row = tok[0], tok[1]
        v, prob = _num(tok[2], F, no), _num(tok[4], F, no)
        if prob < 0:
            raise SmpsError("negative probability", F, no)
        if entries and entries[-1].column == col and entries[-1].row == row:
            entries[-1].outcomes.append((v, tok[3], prob))
        else:
            if any(e.column == col and e.row == row for e in entries):
                raise SmpsError(f"outcomes of ({col}, {row}) are not contiguous", F, no)
            entries.append(StochEntry(col, row, [(v, tok[3], prob)], line=no))
    if name is None:
        raise SmpsError("missing STOCH header", F)
    if not ended:
        raise SmpsError("missing ENDATA", F)
    for e in entries:
        total = math.fsum(p for _, _, p in e.outcomes)
        if abs(total - 1.0) > 1e-9:
            raise SmpsError(f"probabilities of ({e.column}, {e.row}) sum to {total:.12g}, not 1", F, e.line)
    return Stoch(name=name, entries=entries)


def emit_stoch(stoch: Stoch) -> str:
    out = [f"STOCH         {stoch.name}".rstrip(), "INDEP         DISCRETE"]
    for e in stoch.entries:
        out += [_data(e.column, e.row, _fmt(v), per, _fmt(p)) for v, per, p in e.outcomes]
    out.append("ENDATA")
    return "\n".join(out) + "\n"


# -- assembling -------------------------------------------------------------

def _stage_split(core: Core, time: Time):
    """Return (stage-1 column set, stage-1 row set)."""
    cols = core.columns
    rnames = [r for _, r in core.rows]
    if time.explicit:
        p1, p2 = time.period_names
        for c in cols:
            if time.col_period.get(c) not in (p1, p2):
                raise SmpsError(f"column {c!r} has no valid period", "TIME")
        for r in rnames:
            if time.row_period.get(r) not in (p1, p2):
                raise SmpsError(f"row {r!r} has no valid period", "TIME")
        c1 = {c for c in cols if time.col_period[c] == p1}
        r1 = {r for r in rnames if time.row_period[r] == p1}
    else:
        (_, c1m, r1m), (_, c2m, r2m) = time.periods
        if c1m not in cols or c2m not in cols:
            raise SmpsError("period column marker not in CORE", "TIME")
        if c1m != cols[0]:
            raise SmpsError("first period must start at the first column", "TIME")
        if r2m not in rnames:
            raise SmpsError("stage-2 row marker not in CORE", "TIME")
        k2 = rnames.index(r2m)
        # stage 1 may start at the first row, or be empty (marker shared or on the objective)
        if r1m not in (r2m, core.objective) and (not rnames or r1m != rnames[0]):
            raise SmpsError("stage-1 row marker must be the first row", "TIME")
        c1 = set(cols[: cols.index(c2m)])
        r1 = set(rnames[:k2])
    if not c1:
        raise SmpsError("stage 1 has no columns", "TIME")
    if len(c1) == len(cols):
        raise SmpsError("stage 2 has no columns", "TIME")
    if len(r1) == len(rnames):
        raise SmpsError("stage 2 has no rows", "TIME")
    return c1, r1


def _assemble(core: Core, time: Time, stoch: Stoch):
    c1, r1 = _stage_split(core, time)
    x_cols = [c for c in core.columns if c in c1]
    y_cols = [c for c in core.columns if c not in c1]
    rows1 = [(s, r) for s, r in core.rows if r in r1]
    rows2 = [(s, r) for s, r in core.rows if r not in r1]
    ups = {c: v for k, c, v in core.bounds if k == "UP"}
    # upper bounds become rows of their column's stage
    rows1 += [("L", ("UP", c)) for c in x_cols if c in ups]
    rows2 += [("L", ("UP", c)) for c in y_cols if c in ups]
    xi = {c: k for k, c in enumerate(x_cols)}
    yi = {c: k for k, c in enumerate(y_cols)}
    ri1 = {r: k for k, (_, r) in enumerate(rows1)}
    ri2 = {r: k for k, (_, r) in enumerate(rows2)}
    s1 = [k for k, (s, _) in enumerate(rows1) if s != "E"]
    s2 = [k for k, (s, _) in enumerate(rows2) if s != "E"]
    n, n2 = len(x_cols) + len(s1), len(y_cols) + len(s2)
    m1, m2 = len(rows1), len(rows2)
    c = np.zeros(n)
    A = np.zeros((m1, n))
    b = np.zeros(m1)
    q = np.zeros(n2)
    W = np.zeros((m2, n2))
    h = np.zeros(m2)
    T = np.zeros((m2, n))
    for col in core.columns:
        for rname, v in core.coeffs[col]:
            if rname == core.objective:
                if col in xi:
                    c[xi[col]] += v
                else:
                    q[yi[col]] += v
            elif rname in ri1:
                if col in yi:
                    raise SmpsError(f"stage-2 column {col!r} appears in stage-1 row {rname!r}", "CORE")
                A[ri1[rname], xi[col]] += v
            elif col in xi:
                T[ri2[rname], xi[col]] += v
            else:
                W[ri2[rname], yi[col]] += v
    for rname, v in core.rhs:
        if rname in ri1:
            b[ri1[rname]] = v
        else:
            h[ri2[rname]] = v
    for col, u in ups.items():
        if col in xi:
            A[ri1[("UP", col)], xi[col]] = 1.0
            b[ri1[("UP", col)]] = u
        else:
            W[ri2[("UP", col)], yi[col]] = 1.0
            h[ri2[("UP", col)]] = u
    for j, k in enumerate(s1):
        A[k, len(x_cols) + j] = 1.0 if rows1[k][0] == "L" else -1.0
    for j, k in enumerate(s2):
        W[k, len(y_cols) + j] = 1.0 if rows2[k][0] == "L" else -1.0

    random = []
    for e in stoch.entries:
        line = e.line
        pers = {per for _, per, _ in e.outcomes}
        if len(pers) != 1:
            raise SmpsError("outcomes of one entry name different periods", "STOCH", line)
        if e.row != core.objective and e.row not in ri2:
            if e.row in ri1:
                raise SmpsError(f"random entry on stage-1 row {e.row!r}", "STOCH", line)
            raise SmpsError(f"unknown row {e.row!r}", "STOCH", line)
        vals = tuple(v for v, _, _ in e.outcomes)
        probs = np.array([p for _, _, p in e.outcomes])
        probs = tuple(float(p) for p in probs / probs.sum())
        if e.column in (core.rhs_name, "RHS") and e.column not in xi and e.column not in yi:
            if e.row == core.objective:
                raise UnsupportedFeature("random objective constant", "STOCH", line)
            random.append(RandomEntry("h", (ri2[e.row],), vals, probs))
        elif e.column in yi:
            if e.row == core.objective:
                random.append(RandomEntry("q", (yi[e.column],), vals, probs))
            else:
                raise UnsupportedFeature(f"random recourse entry ({e.column}, {e.row})", "STOCH", line)
        elif e.column in xi:
            if e.row == core.objective:
                raise SmpsError(f"random cost on stage-1 column {e.column!r}", "STOCH", line)
            random.append(RandomEntry("T", (ri2[e.row], xi[e.column]), vals, probs))
        else:
            raise SmpsError(f"unknown column {e.column!r}", "STOCH", line)
    base = TwoStageProblem(first=FirstStage(c=c, A=A, b=b), W=W,
                           scenarios=[ScenarioData(p=1.0, q=q, h=h, T=T)])
    return base, tuple(random)


def parse(core_text: str, time_text: str, stoch_text: str) -> SmpsBundle:
    for label, txt in (("CORE", core_text), ("TIME", time_text), ("STOCH", stoch_text)):
        if not txt or not txt.strip():
            raise SmpsError("empty file", label)
    core = parse_core(core_text)
    time = parse_time(time_text)
    stoch = parse_stoch(stoch_text)
    base, random = _assemble(core, time, stoch)
    return SmpsBundle(core=core, time=time, stoch=stoch, base=base, random=random)


def read(core_path, time_path, stoch_path) -> SmpsBundle:
    return parse(Path(core_path).read_text(), Path(time_path).read_text(), Path(stoch_path).read_text())


def emit(bundle: SmpsBundle) -> tuple[str, str, str]:
    return emit_core(bundle.core), emit_time(bundle.time), emit_stoch(bundle.stoch)


def scenario_count(bundle: SmpsBundle) -> int:
    return math.prod(bundle.outcome_counts)


def realize_full(bundle: SmpsBundle, cap: int = DEFAULT_SCENARIO_CAP) -> TwoStageProblem:
    """Enumerate the cross product of all independent entries."""
    total = scenario_count(bundle)
    if total > cap:
        raise ScenarioExplosion(f"{total:.3g} scenarios exceed the cap of {cap}")
    base = bundle.base.scenarios[0]
    scen = []
    for choice in itertools.product(*(range(k) for k in bundle.outcome_counts)):
        p = math.prod(e.probs[k] for e, k in zip(bundle.random, choice))
        if p > 0:
            scen.append(apply_outcomes(base, bundle.random, choice, p))
    _fix_probabilities(scen)
    return TwoStageProblem(first=bundle.base.first, W=bundle.base.W, scenarios=scen)


def realize_sampled(bundle: SmpsBundle, N: int, seed: int) -> TwoStageProblem:
    """N iid draws with weight 1/N, deterministic per seed."""
    return sample_instance(SampledSpec(base=bundle.base, entries=bundle.random, N=N, seed=seed))
