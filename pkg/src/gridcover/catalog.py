"""Abstract scenarios (A-then-B grid configurations), the scenario space, and the DSL.

A scenario asks for a trace in which car1/car2 first occupy cells ``first`` and,
at a strictly later step, cells ``second``. Grammar, one scenario per statement::

    # comment
    scenario s22_64 : reach { car1@2, car2@2 } then { car1@6, car2@4 }
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterator, Sequence

from .model import GridCell


@dataclass(frozen=True, order=True)
class GridConfig:
    car1_cell: GridCell
    car2_cell: GridCell

    def __post_init__(self):
        for name in ("car1_cell", "car2_cell"):
            cell = GridCell(getattr(self, name))
            if cell is GridCell.OUTSIDE:
                raise ValueError("a grid configuration cannot use OUTSIDE")
            object.__setattr__(self, name, cell)

    @classmethod
    def of(cls, a: int, b: int) -> "GridConfig":
        return cls(GridCell(a), GridCell(b))

    def as_pair(self) -> list[int]:
        return [int(self.car1_cell), int(self.car2_cell)]

    def holds(self, car1_cells, car2_cells) -> bool:
        return self.car1_cell in car1_cells and self.car2_cell in car2_cells


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    first: GridConfig
    second: GridConfig

    @property
    def key(self) -> tuple[GridConfig, GridConfig]:
        return (self.first, self.second)

    def to_dsl(self) -> str:
        a, b = self.first, self.second
        return (f"scenario {self.id} : reach {{ car1@{int(a.car1_cell)}, car2@{int(a.car2_cell)} }}"
                f" then {{ car1@{int(b.car1_cell)}, car2@{int(b.car2_cell)} }}")

    def to_json(self) -> dict:
        return {"id": self.id, "first": self.first.as_pair(), "second": self.second.as_pair()}

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioSpec":
        return cls(d["id"], GridConfig.of(*d["first"]), GridConfig.of(*d["second"]))


def spec_id(first: GridConfig, second: GridConfig) -> str:
    return "s{}{}_{}{}".format(*first.as_pair(), *second.as_pair())


def make_spec(a1: int, a2: int, b1: int, b2: int, id: str | None = None) -> ScenarioSpec:
    first, second = GridConfig.of(a1, a2), GridConfig.of(b1, b2)
    return ScenarioSpec(id or spec_id(first, second), first, second)


class DuplicateId(ValueError):
    pass


class DuplicateScenario(ValueError):
    pass


class ScenarioCatalog(Sequence[ScenarioSpec]):
    """Ordered, immutable collection of scenarios with unique ids and unique (A, B) pairs."""

    def __init__(self, specs=()):
        specs = tuple(specs)
        ids, keys = set(), set()
        for s in specs:
            if s.id in ids:
                raise DuplicateId(s.id)
            if s.key in keys:
                raise DuplicateScenario(f"{s.id} repeats an earlier (first, second) pair")
            ids.add(s.id)
            keys.add(s.key)
        self._specs = specs
        self._by_id = {s.id: s for s in specs}

    def __getitem__(self, i):
        return self._specs[i]

    def __len__(self) -> int:
        return len(self._specs)

    def __iter__(self) -> Iterator[ScenarioSpec]:
        return iter(self._specs)

    def __eq__(self, other) -> bool:
        return isinstance(other, ScenarioCatalog) and self._specs == other._specs

    def __hash__(self):
        return hash(self._specs)

    def __repr__(self) -> str:
        return f"ScenarioCatalog({len(self)} specs)"

    def by_id(self, sid: str) -> ScenarioSpec:
        return self._by_id[sid]

    def keys(self) -> set:
        return {s.key for s in self._specs}

    def to_dsl(self) -> str:
        return "".join(s.to_dsl() + "\n" for s in self._specs)

    def to_json(self) -> str:
        return json.dumps([s.to_json() for s in self._specs], indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioCatalog":
        return cls(ScenarioSpec.from_json(d) for d in json.loads(text))


def enumerate_all() -> ScenarioCatalog:
    """All 8**4 = 4096 (A1, A2, B1, B2) combinations in lexicographic order."""
    cells = range(1, 9)
    return ScenarioCatalog(make_spec(*c) for c in itertools.product(cells, repeat=4))


def mirror(cfg: GridConfig) -> GridConfig:
    """Swap left and right: car1's mirrored cell becomes car2's and vice versa."""
    m = {1: 3, 2: 2, 3: 1, 4: 5, 5: 4, 6: 8, 7: 7, 8: 6}
    return GridConfig.of(m[int(cfg.car2_cell)], m[int(cfg.car1_cell)])


# Starting configurations: 8 side/front pairs closed under mirroring, then 4
# same-cell configurations (three fronts and the rear-center).
DEFAULT_STARTS = [
    (4, 5), (1, 3), (1, 5), (4, 3), (2, 5), (4, 2), (2, 3), (1, 2),
    (1, 1), (2, 2), (3, 3), (7, 7),
]
# End configurations, also closed under mirroring.
DEFAULT_ENDS = [
    (6, 4), (5, 8), (6, 8), (4, 5), (7, 2), (2, 7),
    (6, 5), (4, 8), (1, 3), (3, 1), (7, 7), (2, 2),
]


def default_catalog() -> ScenarioCatalog:
    """The 144-scenario coverage set: every default start crossed with every default end.

    One reasonable choice among many; ``data/default_catalog.scn`` holds the
    same list.
    """
    return ScenarioCatalog(
        make_spec(a1, a2, b1, b2) for (a1, a2) in DEFAULT_STARTS for (b1, b2) in DEFAULT_ENDS
    )


def shipped_catalog_text() -> str:
    return resources.files("gridcover").joinpath("data/default_catalog.scn").read_text("utf-8")


# --- DSL ---------------------------------------------------------------------------------

class DslSyntaxError(SyntaxError):
    def __init__(self, msg: str, line: int, col: int, text: str = ""):
        super().__init__(f"{msg} at line {line}, column {col}")
        self.msg_only = msg
        self.lineno = line
        self.offset = col
        self.text = text


class CellOutOfRange(DslSyntaxError):
    pass


class DslDuplicateId(DslSyntaxError, DuplicateId):
    pass


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<num>\d+) | (?P<name>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<punct>[:{},@])
  | (?P<err>.)
""", re.VERBOSE)


def _tokens(text: str):
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        kind = m.lastgroup
        col = m.start() - line_start + 1
        if kind == "nl":
            line, line_start = line + 1, m.end()
            continue
        if kind in ("ws", "comment"):
            continue
        if kind == "err":
            raise DslSyntaxError(f"unexpected character {m.group()!r}", line, col)
        yield kind, m.group(), line, col
    yield "eof", "", line, len(text) - line_start + 1


class _Parser:
    def __init__(self, text: str):
        self.toks = list(_tokens(text))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            got = repr(tok[1]) if tok[0] != "eof" else "end of input"
            raise DslSyntaxError(f"expected {want}, got {got}", tok[2], tok[3])
        self.i += 1
        return tok

    def config(self) -> GridConfig:
        self.take("punct", "{")
        cells = {}
        for n in range(2):
            if n:
                self.take("punct", ",")
            _, car, line, col = self.take("name")
            if car not in ("car1", "car2"):
                raise DslSyntaxError(f"expected car1 or car2, got {car!r}", line, col)
            if car in cells:
                raise DslSyntaxError(f"{car} given twice", line, col)
            self.take("punct", "@")
            _, num, line, col = self.take("num")
            if not 1 <= int(num) <= 8:
                raise CellOutOfRange(f"cell {num} out of range 1..8", line, col)
            cells[car] = int(num)
        self.take("punct", "}")
        return GridConfig.of(cells["car1"], cells["car2"])

    def catalog(self) -> ScenarioCatalog:
        specs, seen = [], set()
        while self.peek()[0] != "eof":
            self.take("name", "scenario")
            _, sid, line, col = self.take("name")
            if sid in seen:
                raise DslDuplicateId(f"duplicate scenario id {sid!r}", line, col)
            seen.add(sid)
            self.take("punct", ":")
            self.take("name", "reach")
            first = self.config()
            self.take("name", "then")
            second = self.config()
            specs.append(ScenarioSpec(sid, first, second))
        return ScenarioCatalog(specs)


def parse_scenario_dsl(text: str) -> ScenarioCatalog:
    """Parse scenario DSL text into a catalog, preserving file order.

    Raises :class:`DslSyntaxError` (line/column), :class:`CellOutOfRange` or
    :class:`DslDuplicateId`.
    """
    return _Parser(text).catalog()


def parse_inline_spec(text: str) -> ScenarioSpec:
    """``"a1,a2->b1,b2"`` shorthand for a single scenario."""
    m = re.fullmatch(r"\s*(\d)\s*,\s*(\d)\s*->\s*(\d)\s*,\s*(\d)\s*", text)
    if not m:
        raise ValueError(f"bad inline scenario {text!r}; expected 'a1,a2->b1,b2'")
    nums = [int(g) for g in m.groups()]
    if not all(1 <= n <= 8 for n in nums):
        raise ValueError("cells must be in 1..8")
    return make_spec(*nums)


# --- objectives --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReachObjective:
    """Two-phase reachability: ``first`` at some step i, ``second`` at some step j > i.

    Predicates use cell-set membership, so an observation is a pair of cell sets.
    """
    first: GridConfig
    second: GridConfig

    def phase1(self, car1_cells, car2_cells) -> bool:
        return self.first.holds(car1_cells, car2_cells)

    def phase2(self, car1_cells, car2_cells) -> bool:
        return self.second.holds(car1_cells, car2_cells)

    def earliest(self, observations) -> tuple[int, int] | None:
        """Earliest (i, j) with phase 1 at i and phase 2 at j > i, or None."""
        i = None
        for k, (c1, c2) in enumerate(observations):
            if i is not None and self.phase2(c1, c2):
                return (i, k)
            if i is None and self.phase1(c1, c2):
                i = k
        return None

    def satisfied_by(self, observations) -> bool:
        return self.earliest(observations) is not None


def spec_to_objective(spec: ScenarioSpec) -> ReachObjective:
    return ReachObjective(spec.first, spec.second)
