"""MATPOWER case files: parsing, per-unit network model, bus admittance matrix."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CaseFormatError, InvalidModel, MalformedRow, MissingBlock, NoSlackBus

REQUIRED_TABLES = ("bus", "gen", "branch", "gencost")

# minimum column counts for the fields we read
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VMAX, VMIN = 11, 12
GEN_BUS, QMAX, QMIN, GEN_STATUS, PMAX, PMIN = 0, 3, 4, 7, 8, 9
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A = 0, 1, 2, 3, 4, 5
TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = 8, 9, 10, 11, 12

_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n%]+)")


@dataclass(frozen=True)
class RawCase:
    """Tables of a MATPOWER case exactly as read (MW, MVAr, degrees)."""

    base_mva: float
    bus: tuple
    gen: tuple
    branch: tuple
    gencost: tuple
    name: str = "case"


def _parse_number(tok: str, line: int) -> float:
    low = tok.lower()
    if low in ("inf", "+inf"):
        return float("inf")
    if low == "-inf":
        return float("-inf")
    try:
        return float(tok)
    except ValueError:
        raise MalformedRow(f"non-numeric token {tok!r}", line) from None


def _parse_table(body: str, first_line: int) -> tuple:
    rows = []
    for offset, raw_line in enumerate(body.split("\n")):
        line_no = first_line + offset
        text = raw_line.split("%", 1)[0]
        for chunk in text.split(";"):
            toks = chunk.replace(",", " ").split()
            if toks:
                rows.append(tuple(_parse_number(t, line_no) for t in toks))
    return tuple(rows)


def parse_matpower(text: str, name: str = "case") -> RawCase:
    """Parse MATPOWER ``.m`` case text.

    Only ``mpc.baseMVA`` and the ``bus``, ``gen``, ``branch`` and ``gencost``
    matrices are interpreted; other blocks are ignored.
    """
    # blank out comments but keep line structure so error lines stay right
    stripped = "\n".join(l.split("%", 1)[0] for l in text.split("\n"))
    m = _SCALAR_RE.search(stripped)
    if m is None:
        raise MissingBlock("mpc.baseMVA not found")
    base_mva = _parse_number(m.group(1).strip(), stripped.count("\n", 0, m.start()) + 1)
    if not base_mva > 0:
        raise CaseFormatError(f"baseMVA must be positive, got {base_mva}")

    tables = {}
    for m in _BLOCK_RE.finditer(stripped):
        key = m.group(1)
        if key in REQUIRED_TABLES:
            first_line = stripped.count("\n", 0, m.start(2)) + 1
            tables[key] = _parse_table(m.group(2), first_line)
    for key in REQUIRED_TABLES:
        if key not in tables:
            raise MissingBlock(f"mpc.{key} not found")
        for row in tables[key]:
            if len(row) < _MIN_COLS[key]:
                raise MalformedRow(f"mpc.{key} row has {len(row)} columns, need {_MIN_COLS[key]}")

    return RawCase(base_mva, tables["bus"], tables["gen"], tables["branch"], tables["gencost"], name)


def read_case(path) -> RawCase:
    path = Path(path)
    return parse_matpower(path.read_text(), name=path.stem)


def format_matpower(raw: RawCase) -> str:
    """Serialize a RawCase back to MATPOWER text (numbers in repr form)."""

    def num(v):
        return repr(float(v)).replace("inf", "Inf")

    out = [f"function mpc = {raw.name}", "mpc.version = '2';", f"mpc.baseMVA = {num(raw.base_mva)};"]
    for key in REQUIRED_TABLES:
        out.append(f"mpc.{key} = [")
        out.extend("\t" + "\t".join(num(v) for v in row) + ";" for row in getattr(raw, key))
        out.append("];")
    return "\n".join(out) + "\n"


def bundled_case(name: str) -> Path:
    """Path of a case file shipped with the package (``case5`` or ``case14``)."""
    aliases = {"case5": "pglib_opf_case5_pjm.m", "case14": "case14_ieee.m"}
    fname = aliases.get(name, name if name.endswith(".m") else name + ".m")
    path = Path(__file__).parent / "data" / fname
    if not path.exists():
        raise FileNotFoundError(f"no bundled case {name!r}")
    return path


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Per-unit network. Buses, generators and branches are indexed 0..n-1.

    Cost coefficients are converted so that ``a*p**2 + b*p + c`` gives the
    cost in currency/hr for ``p`` in per unit.
    """

    name: str
    base_mva: float
    bus_ids: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    slack: int
    gen_ids: np.ndarray        # 1-based row numbers in the case file
    gen_bus: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    f_bus: np.ndarray
    t_bus: np.ndarray
    br_r: np.ndarray
    br_x: np.ndarray
    br_b: np.ndarray
    rate: np.ndarray           # 0 means unlimited
    tap: np.ndarray
    shift: np.ndarray          # rad
    angmin: np.ndarray         # rad, -inf when unconstrained
    angmax: np.ndarray
    load_bus: np.ndarray
    pd0: np.ndarray
    qd0: np.ndarray
    fingerprint: str
    warnings: tuple = field(default=())

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)

    @property
    def n_branch(self) -> int:
        return len(self.f_bus)

    @property
    def n_load(self) -> int:
        return len(self.load_bus)

    @property
    def gen_buses(self) -> np.ndarray:
        """Sorted distinct bus indices carrying at least one generator."""
        return np.unique(self.gen_bus)

    @property
    def total_pmax(self) -> float:
        return float(self.pmax.sum())

    def load_vector(self) -> np.ndarray:
        """Nominal load as the input vector ``(p_l..., q_l...)``."""
        return np.concatenate([self.pd0, self.qd0])

    def branch_admittances(self):
        """Pi-model two-port entries ``(Yff, Yft, Ytf, Ytt)`` per branch."""
        ys = 1.0 / (self.br_r + 1j * self.br_x)
        bc = self.br_b
        t = self.tap * np.exp(1j * self.shift)
        ytt = ys + 0.5j * bc
        yff = ytt / (t * np.conj(t))
        yft = -ys / np.conj(t)
        ytf = -ys / t
        return yff, yft, ytf, ytt


def _content_hash(raw: RawCase) -> str:
    h = hashlib.sha256()
    h.update(repr(float(raw.base_mva)).encode())
    for key in REQUIRED_TABLES:
        for row in getattr(raw, key):
            h.update(",".join(repr(float(v)) for v in row).encode())
            h.update(b";")
    return h.hexdigest()[:16]


def build_model(raw: RawCase) -> NetworkModel:
    """Validate a RawCase and convert it to a per-unit NetworkModel."""
    base = float(raw.base_mva)
    bus = np.array([r[:13] for r in raw.bus], dtype=float)
    ids = bus[:, BUS_I].astype(int)
    index = {b: i for i, b in enumerate(ids)}
    if len(index) != len(ids):
        raise InvalidModel("duplicate bus ids")

    def lookup(bid, what):
        try:
            return index[int(bid)]
        except KeyError:
            raise InvalidModel(f"{what} references unknown bus {int(bid)}") from None

    slack = np.flatnonzero(bus[:, BUS_TYPE] == 3)
    if len(slack) != 1:
        raise NoSlackBus(f"expected exactly one type-3 bus, found {len(slack)}")
    vmin, vmax = bus[:, VMIN], bus[:, VMAX]
    if np.any(vmin > vmax):
        raise InvalidModel("vmin > vmax at some bus")

    if len(raw.gencost) < len(raw.gen):
        raise InvalidModel("gencost has fewer rows than gen")
    gen_rows, gens, costs = [], [], []
    for k, (g, cst) in enumerate(zip(raw.gen, raw.gencost)):
        if int(cst[0]) != 2 or int(cst[3]) != 3:
            raise InvalidModel(f"gencost row {k + 1}: only quadratic polynomial costs (model 2, n=3) are supported")
        if g[GEN_STATUS] <= 0:
            continue
        gen_rows.append(k + 1)
        gens.append(g)
        costs.append(cst[4:7])
    if not gens:
        raise InvalidModel("no in-service generators")
    gen = np.array([g[:10] for g in gens], dtype=float)
    cost = np.array(costs, dtype=float).reshape(-1, 3)
    gen_bus = np.array([lookup(b, "gen") for b in gen[:, GEN_BUS]], dtype=int)
    pmin, pmax = gen[:, PMIN] / base, gen[:, PMAX] / base
    qmin, qmax = gen[:, QMIN] / base, gen[:, QMAX] / base
    if np.any(pmin > pmax) or np.any(qmin > qmax):
        raise InvalidModel("generator limits inverted")

    brs = [r for r in raw.branch if r[BR_STATUS] > 0]
    br = np.array([list(r[:13]) + [0.0] * (13 - len(r[:13])) for r in brs], dtype=float).reshape(-1, 13)
    if len(br) and np.any(br[:, BR_R] ** 2 + br[:, BR_X] ** 2 <= 0):
        raise InvalidModel("branch with zero impedance")
    f_bus = np.array([lookup(b, "branch") for b in br[:, F_BUS]], dtype=int)
    t_bus = np.array([lookup(b, "branch") for b in br[:, T_BUS]], dtype=int)
    tap = br[:, TAP].copy()
    tap[tap == 0] = 1.0
    angmin = np.deg2rad(br[:, ANGMIN])
    angmax = np.deg2rad(br[:, ANGMAX])
    # MATPOWER: a zero entry or one beyond +/-360 deg disables that side
    angmin[(br[:, ANGMIN] == 0) | (br[:, ANGMIN] <= -360)] = -np.inf
    angmax[(br[:, ANGMAX] == 0) | (br[:, ANGMAX] >= 360)] = np.inf

    loaded = np.flatnonzero((bus[:, PD] != 0) | (bus[:, QD] != 0))

    warnings = []
    touched = set(f_bus) | set(t_bus) | set(gen_bus)
    for i, b in enumerate(ids):
        if i not in touched:
            warnings.append(f"IslandedBus: bus {b} has no branch and no generator")
    if slack[0] not in set(gen_bus):
        warnings.append(f"slack bus {ids[slack[0]]} has no in-service generator")

    return NetworkModel(
        name=raw.name,
        base_mva=base,
        bus_ids=ids,
        gs=bus[:, GS] / base,
        bs=bus[:, BS] / base,
        vmin=vmin.copy(),
        vmax=vmax.copy(),
        slack=int(slack[0]),
        gen_ids=np.array(gen_rows, dtype=int),
        gen_bus=gen_bus,
        pmin=pmin,
        pmax=pmax,
        qmin=qmin,
        qmax=qmax,
        cost_a=cost[:, 0] * base**2,
        cost_b=cost[:, 1] * base,
        cost_c=cost[:, 2].copy(),
        f_bus=f_bus,
        t_bus=t_bus,
        br_r=br[:, BR_R].copy(),
        br_x=br[:, BR_X].copy(),
        br_b=br[:, BR_B].copy(),
        rate=br[:, RATE_A] / base,
        tap=tap,
        shift=np.deg2rad(br[:, SHIFT]),
        angmin=angmin,
        angmax=angmax,
        load_bus=loaded,
        pd0=bus[loaded, PD] / base,
        qd0=bus[loaded, QD] / base,
        fingerprint=f"{raw.name}:{_content_hash(raw)}",
        warnings=tuple(warnings),
    )


def load_model(path) -> NetworkModel:
    return build_model(read_case(path))


def admittance(model: NetworkModel) -> np.ndarray:
    """Dense complex bus admittance matrix (per unit)."""
    n = model.n_bus
    Y = np.zeros((n, n), dtype=complex)
    yff, yft, ytf, ytt = model.branch_admittances()
    f, t = model.f_bus, model.t_bus
    np.add.at(Y, (f, f), yff)
    np.add.at(Y, (f, t), yft)
    np.add.at(Y, (t, f), ytf)
    np.add.at(Y, (t, t), ytt)
    Y[np.diag_indices(n)] += model.gs + 1j * model.bs
    return Y
