"""Symbolic problem representation: panels, rules, annotations, oracle.

A problem is a 3x3 matrix of panels (last one missing) plus 8 candidate
panels. Panels are described symbolically by per-group attribute values;
the oracle never looks at pixels, it checks rule consistency on the
stored panel specs.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import AmbiguousAnswerError, ConfigError, NoAnswerError, RuleRangeError

# ---------------------------------------------------------------------------
# attribute / rule inventory
# ---------------------------------------------------------------------------

ATTRIBUTES = ("number", "position", "type", "size", "color")

SHAPE_TYPES = ("triangle", "square", "pentagon", "hexagon", "circle")
N_TYPES = len(SHAPE_TYPES)
N_SIZES = 6
N_COLORS = 10
LINE_KINDS = ("horizontal", "vertical", "diag_down", "diag_up")
N_LINE_KINDS = len(LINE_KINDS)

RULE_NA = "na"
PROGRESSION_DELTAS = {
    "progression_plus_one": 1,
    "progression_minus_one": -1,
    "progression_plus_two": 2,
    "progression_minus_two": -2,
}
ORDINAL_RULES = ("constant", *PROGRESSION_DELTAS, "arithmetic_plus",
                 "arithmetic_minus", "distribute_three")
SET_RULES = ("constant", "distribute_three", "xor", "or", "and")
RULES = ("constant", *PROGRESSION_DELTAS, "arithmetic_plus",
         "arithmetic_minus", "distribute_three", "xor", "or", "and", RULE_NA)

Value = Union[int, frozenset]


class NonDeterministic:
    """Sentinel returned by apply_rule for NA (randomly changing) records."""

    _instance: Optional["NonDeterministic"] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NonDeterministic"


NON_DETERMINISTIC = NonDeterministic()


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupLayout:
    """Placement of one entity group inside an 80x80 panel."""

    name: str
    kind: str  # "shape" | "line"
    slots: tuple  # ((x, y), ...) slot centers
    radius: float = 0.0
    outline_only: bool = False

    @property
    def capacity(self) -> int:
        return len(self.slots)


def _grid(nx: int, ny: int, x0: float, y0: float, x1: float, y1: float):
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    return tuple((float(x), float(y)) for y in ys for x in xs)


LINE_GROUP = GroupLayout("line", "line", slots=((40.0, 40.0),))

CONFIGURATIONS: dict[str, tuple[GroupLayout, ...]] = {
    "center": (
        GroupLayout("shape", "shape", ((40.0, 40.0),), radius=26.0),
    ),
    "grid2x2": (
        GroupLayout("shape", "shape", _grid(2, 2, 20, 20, 60, 60), radius=13.0),
    ),
    "grid3x3": (
        GroupLayout("shape", "shape",
                    _grid(3, 3, 80 / 6, 80 / 6, 400 / 6, 400 / 6), radius=9.0),
    ),
    "left_right": (
        GroupLayout("left", "shape", ((20.0, 40.0),), radius=13.0),
        GroupLayout("right", "shape", ((60.0, 40.0),), radius=13.0),
    ),
    "up_down": (
        GroupLayout("up", "shape", ((40.0, 20.0),), radius=13.0),
        GroupLayout("down", "shape", ((40.0, 60.0),), radius=13.0),
    ),
    "out_in_center": (
        GroupLayout("out", "shape", ((40.0, 40.0),), radius=32.0,
                    outline_only=True),
        GroupLayout("in", "shape", ((40.0, 40.0),), radius=12.0),
    ),
    "out_in_grid": (
        GroupLayout("out", "shape", ((40.0, 40.0),), radius=32.0,
                    outline_only=True),
        GroupLayout("in", "shape", _grid(2, 2, 29, 29, 51, 51), radius=7.0),
    ),
}

TWO_GROUP_CONFIGURATIONS = ("left_right", "up_down", "out_in_center",
                            "out_in_grid")


def layout_groups(config: str, family: str) -> tuple[GroupLayout, ...]:
    """Group layouts for a configuration; pgm_like adds background lines."""
    if config not in CONFIGURATIONS:
        raise ConfigError(f"unknown configuration {config!r}")
    groups = CONFIGURATIONS[config]
    if family == "pgm_like":
        groups = groups + (LINE_GROUP,)
    elif family != "raven_like":
        raise ConfigError(f"unknown family {family!r}")
    return groups


def group_layout(config: str, family: str, name: str) -> GroupLayout:
    for g in layout_groups(config, family):
        if g.name == name:
            return g
    raise ConfigError(f"no group {name!r} in configuration {config!r}")


# ---------------------------------------------------------------------------
# panel specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupSpec:
    """Attribute values of one entity group in one panel.

    Shape groups: all entities in the group share type/size/color; the
    occupied slots carry number and position. Line groups: ``line_set`` is
    the set of line kinds present; number follows from its size.
    """

    kind: str = "shape"
    positions: frozenset = frozenset({0})
    shape_type: int = 0
    size: int = 3
    color: int = 5
    line_set: frozenset = frozenset()

    def attr(self, attribute: str) -> Optional[Value]:
        if self.kind == "shape":
            return {
                "number": len(self.positions),
                "position": self.positions,
                "type": self.shape_type,
                "size": self.size,
                "color": self.color,
            }[attribute]
        return {
            "number": len(self.line_set),
            "position": None,
            "type": self.line_set,
            "size": None,
            "color": self.color,
        }[attribute]


@dataclass(frozen=True)
class PanelSpec:
    """One panel: configuration tag plus per-group attribute values."""

    config: str
    family: str
    groups: tuple  # ((name, GroupSpec), ...)

    def __post_init__(self):
        for name, spec in self.groups:
            layout = group_layout(self.config, self.family, name)
            if spec.kind == "shape":
                if not spec.positions:
                    raise ConfigError(f"group {name!r} has no entities")
                if len(spec.positions) > layout.capacity:
                    raise ConfigError(
                        f"group {name!r}: {len(spec.positions)} entities "
                        f"exceed capacity {layout.capacity}")
                if any(not 0 <= p < layout.capacity for p in spec.positions):
                    raise ConfigError(f"group {name!r}: slot out of range")
                if not 0 <= spec.shape_type < N_TYPES:
                    raise ConfigError(f"group {name!r}: bad type")
                if not 0 <= spec.size < N_SIZES:
                    raise ConfigError(f"group {name!r}: bad size")
            if not 0 <= spec.color < N_COLORS:
                raise ConfigError(f"group {name!r}: bad color")
            if spec.kind == "line":
                if any(not 0 <= k < N_LINE_KINDS for k in spec.line_set):
                    raise ConfigError(f"group {name!r}: bad line kind")

    def group(self, name: str) -> GroupSpec:
        for gname, spec in self.groups:
            if gname == name:
                return spec
        raise ConfigError(f"panel has no group {name!r}")

    def attr(self, group: str, attribute: str) -> Optional[Value]:
        return self.group(group).attr(attribute)

    def replace_group(self, name: str, spec: GroupSpec) -> "PanelSpec":
        groups = tuple((n, spec if n == name else s) for n, s in self.groups)
        return PanelSpec(self.config, self.family, groups)


def empty_panel(config: str, family: str) -> PanelSpec:
    """Panel with no drawable content (used by rendering tests)."""
    return PanelSpec(config, family, groups=())


# ---------------------------------------------------------------------------
# value domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrdinalDomain:
    lo: int
    hi: int  # inclusive

    def contains(self, v) -> bool:
        return isinstance(v, int) and self.lo <= v <= self.hi

    def values(self) -> tuple:
        return tuple(range(self.lo, self.hi + 1))


@dataclass(frozen=True)
class SetDomain:
    universe: tuple
    min_size: int = 1

    def contains(self, v) -> bool:
        return (isinstance(v, frozenset) and len(v) >= self.min_size
                and v <= set(self.universe))

    def values(self) -> tuple:
        # all subsets meeting min_size; universes here are <= 9 elements
        out = []
        n = len(self.universe)
        for mask in range(1 << n):
            s = frozenset(self.universe[i] for i in range(n)
                          if mask >> i & 1)
            if len(s) >= self.min_size:
                out.append(s)
        return tuple(out)


def value_domain(config: str, family: str, group: str,
                 attribute: str) -> Optional[Union[OrdinalDomain, SetDomain]]:
    """Legal value range for (group, attribute); None if not applicable."""
    layout = group_layout(config, family, group)
    if layout.kind == "line":
        return {
            "number": OrdinalDomain(1, N_LINE_KINDS),
            "position": None,
            "type": SetDomain(tuple(range(N_LINE_KINDS))),
            "size": None,
            "color": OrdinalDomain(0, N_COLORS - 1),
        }[attribute]
    return {
        "number": OrdinalDomain(1, layout.capacity),
        "position": SetDomain(tuple(range(layout.capacity))),
        "type": OrdinalDomain(0, N_TYPES - 1),
        "size": OrdinalDomain(0, N_SIZES - 1),
        "color": OrdinalDomain(0, N_COLORS - 1),
    }[attribute]


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RuleRecord:
    """One (group, attribute, rule) record; params holds e.g. the
    distribute-three triple."""

    group: str
    attribute: str
    rule: str
    params: tuple = ()

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}")
        if self.attribute not in ATTRIBUTES:
            raise ConfigError(f"unknown attribute {self.attribute!r}")

    @property
    def is_na(self) -> bool:
        return self.rule == RULE_NA

    def clause(self) -> str:
        return f"{self.group} {self.attribute} {self.rule}"


def apply_rule(record: RuleRecord, v1: Value, v2: Value, domain):
    """Third value implied by the rule given the first two in a row.

    Returns NON_DETERMINISTIC for NA records. Raises RuleRangeError when
    the first two values are incompatible with the rule or the implied
    value leaves the attribute's domain (the generator resamples on this).
    """
    rule = record.rule
    if rule == RULE_NA:
        return NON_DETERMINISTIC
    if rule == "constant":
        if v1 != v2:
            raise RuleRangeError(f"constant rule broken: {v1} != {v2}")
        return v1
    if rule in PROGRESSION_DELTAS:
        delta = PROGRESSION_DELTAS[rule]
        if not (isinstance(v1, int) and isinstance(v2, int)):
            raise RuleRangeError("progression needs ordinal values")
        if v2 - v1 != delta:
            raise RuleRangeError(f"progression step {v2 - v1} != {delta}")
        v3 = v2 + delta
    elif rule in ("arithmetic_plus", "arithmetic_minus"):
        if not (isinstance(v1, int) and isinstance(v2, int)):
            raise RuleRangeError("arithmetic needs ordinal values")
        v3 = v1 + v2 if rule == "arithmetic_plus" else v1 - v2
    elif rule == "distribute_three":
        triple = record.params
        if len(triple) != 3 or len(set(triple)) != 3:
            raise ConfigError("distribute_three needs a triple of distinct "
                              "values in params")
        if v1 == v2 or v1 not in triple or v2 not in triple:
            raise RuleRangeError("row values incompatible with the triple")
        (v3,) = (v for v in triple if v != v1 and v != v2)
    elif rule in ("xor", "or", "and"):
        if not (isinstance(v1, frozenset) and isinstance(v2, frozenset)):
            raise RuleRangeError("set rules need set values")
        if rule == "xor":
            v3 = v1 ^ v2
        elif rule == "or":
            v3 = v1 | v2
        else:
            v3 = v1 & v2
    else:  # pragma: no cover
        raise ConfigError(f"unhandled rule {rule!r}")
    if domain is not None and not domain.contains(v3):
        raise RuleRangeError(f"implied value {v3!r} out of range for "
                             f"{record.group}.{record.attribute}")
    return v3


# ---------------------------------------------------------------------------
# annotations and sentences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RuleAnnotation:
    """Complete rule assignment: every (group, attribute) appears once."""

    records: tuple  # (RuleRecord, ...)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            key = (rec.group, rec.attribute)
            if key in seen:
                raise ConfigError(f"duplicate record for {key}")
            seen.add(key)

    def record(self, group: str, attribute: str) -> RuleRecord:
        for rec in self.records:
            if rec.group == group and rec.attribute == attribute:
                return rec
        raise ConfigError(f"no record for ({group}, {attribute})")

    def active(self) -> tuple:
        return tuple(r for r in self.records if not r.is_na)

    def groups(self) -> tuple:
        out = []
        for rec in self.records:
            if rec.group not in out:
                out.append(rec.group)
        return tuple(out)


def _sorted_active(records) -> list:
    return sorted((r for r in records if not r.is_na),
                  key=lambda r: (r.group, ATTRIBUTES.index(r.attribute)))


def canonical_sentence(annotation: RuleAnnotation) -> str:
    """Lowercase clauses "group attribute rule" in fixed group-then-attribute
    order; NA records omitted; "none" when nothing is governed."""
    active = _sorted_active(annotation.records)
    if not active:
        return "none"
    return " ".join(rec.clause() for rec in active)


def group_sentence(annotation: RuleAnnotation, group: str) -> str:
    active = _sorted_active(r for r in annotation.records if r.group == group)
    if not active:
        return "none"
    return " ".join(rec.clause() for rec in active)


# ---------------------------------------------------------------------------
# problem instances
# ---------------------------------------------------------------------------

_GUARD_DEPTH = 0


@contextmanager
def answer_access_guard():
    """While active, any read of ProblemInstance.answer_index raises.

    Test builds wrap model scoring in this guard to audit that evaluation
    never peeks at the answer before scores are produced.
    """
    global _GUARD_DEPTH
    _GUARD_DEPTH += 1
    try:
        yield
    finally:
        _GUARD_DEPTH -= 1


class ProblemInstance:
    """One problem: 8 ordered context panels, 8 candidates, annotation.

    Images are rendered lazily from the panel specs and the instance seed,
    so symbolic-only consumers (oracle, generator audits) never pay for
    rasterization. ``answer_index`` is zero-based.
    """

    IMAGE_COUNT = 16  # 8 context + 8 candidates

    def __init__(self, config: str, family: str, context: tuple,
                 candidates: tuple, answer_index: int,
                 annotation: RuleAnnotation, seed: int,
                 images: Optional[np.ndarray] = None):
        if len(context) != 8 or len(candidates) != 8:
            raise ConfigError("a problem needs 8 context and 8 candidate "
                              "panels")
        if not 0 <= answer_index < 8:
            raise ConfigError("answer_index must be in 0..7")
        self.config = config
        self.family = family
        self.context = tuple(context)
        self.candidates = tuple(candidates)
        self.annotation = annotation
        self.seed = seed
        self._answer_index = answer_index
        self._images = images

    @property
    def answer_index(self) -> int:
        if _GUARD_DEPTH:
            raise RuntimeError(
                "answer_index was read inside answer_access_guard()")
        return self._answer_index

    @property
    def images(self) -> np.ndarray:
        """uint8 [16, 80, 80]: context panels 0-7 then candidates 8-15."""
        if self._images is None:
            from .render import render

            panels = self.context + self.candidates
            stack = np.empty((self.IMAGE_COUNT, 80, 80), dtype=np.uint8)
            for i, panel in enumerate(panels):
                stack[i] = render(panel, self.seed * self.IMAGE_COUNT + i)
            self._images = stack
        return self._images

    @property
    def context_images(self) -> np.ndarray:
        return self.images[:8]

    @property
    def candidate_images(self) -> np.ndarray:
        return self.images[8:]

    def completed_images(self) -> np.ndarray:
        """Context plus the correct candidate: the full 3x3 matrix."""
        return np.concatenate(
            [self.images[:8], self.images[8 + self._answer_index:9 + self._answer_index]])


def _row3_consistent(problem: ProblemInstance, rec: RuleRecord,
                     candidate: PanelSpec, first: int, second: int) -> bool:
    v1 = problem.context[first].attr(rec.group, rec.attribute)
    v2 = problem.context[second].attr(rec.group, rec.attribute)
    v3 = candidate.attr(rec.group, rec.attribute)
    domain = value_domain(problem.config, problem.family, rec.group,
                          rec.attribute)
    try:
        implied = apply_rule(rec, v1, v2, domain)
    except RuleRangeError:
        return False
    return implied == v3


def candidate_consistent(problem: ProblemInstance, index: int) -> bool:
    """Does candidate ``index`` satisfy every non-NA record on row 3 (and on
    column 3 for pgm-like problems)?"""
    candidate = problem.candidates[index]
    for rec in problem.annotation.active():
        if not _row3_consistent(problem, rec, candidate, 6, 7):
            return False
        if problem.family == "pgm_like":
            if not _row3_consistent(problem, rec, candidate, 2, 5):
                return False
    return True


def oracle_solve(problem: ProblemInstance) -> int:
    """Index of the unique rule-consistent candidate (zero-based).

    Raises NoAnswerError / AmbiguousAnswerError when the pool has zero or
    several consistent candidates.
    """
    consistent = [i for i in range(8) if candidate_consistent(problem, i)]
    if not consistent:
        raise NoAnswerError("no candidate satisfies the annotation")
    if len(consistent) > 1:
        raise AmbiguousAnswerError(
            f"candidates {consistent} all satisfy the annotation")
    return consistent[0]


# ---------------------------------------------------------------------------
# json codecs
# ---------------------------------------------------------------------------

def value_to_json(v):
    if isinstance(v, frozenset):
        return sorted(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    raise ConfigError(f"unserializable value {v!r}")


def value_from_json(x):
    if isinstance(x, list):
        return frozenset(x)
    return int(x)


def record_to_json(rec: RuleRecord) -> dict:
    return {"group": rec.group, "attribute": rec.attribute, "rule": rec.rule,
            "params": [value_to_json(p) for p in rec.params]}


def record_from_json(d: dict) -> RuleRecord:
    return RuleRecord(d["group"], d["attribute"], d["rule"],
                      tuple(value_from_json(p) for p in d["params"]))


def panel_to_json(panel: PanelSpec) -> dict:
    groups = []
    for name, g in panel.groups:
        groups.append({
            "name": name, "kind": g.kind,
            "positions": sorted(g.positions),
            "type": g.shape_type, "size": g.size, "color": g.color,
            "line_set": sorted(g.line_set),
        })
    return {"config": panel.config, "family": panel.family, "groups": groups}


def panel_from_json(d: dict) -> PanelSpec:
    groups = tuple(
        (g["name"], GroupSpec(kind=g["kind"],
                              positions=frozenset(g["positions"]),
                              shape_type=g["type"], size=g["size"],
                              color=g["color"],
                              line_set=frozenset(g["line_set"])))
        for g in d["groups"])
    return PanelSpec(d["config"], d["family"], groups)


def annotation_to_json(annotation: RuleAnnotation) -> list:
    return [record_to_json(r) for r in annotation.records]


def annotation_from_json(records: list) -> RuleAnnotation:
    return RuleAnnotation(tuple(record_from_json(r) for r in records))
