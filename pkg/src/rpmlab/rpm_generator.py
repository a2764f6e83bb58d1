"""Procedural problem sampler with bias-free candidate pools.

raven_like problems encode rules row-wise only; pgm_like problems are
constructed from a free 2x2 block so that every governed rule holds on all
three rows and all three columns simultaneously. Candidate pools come from
an attribute-bisection tree, so no single attribute value statistically
marks the answer.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import (AmbiguousAnswerError, ConfigError, CorpusError,
                     GenerationExhausted, NoAnswerError, RuleRangeError)
from .rpm_core import (ATTRIBUTES, N_COLORS, N_SIZES, N_TYPES,
                       PROGRESSION_DELTAS, RULE_NA, GroupLayout, GroupSpec,
                       NonDeterministic, OrdinalDomain, PanelSpec,
                       ProblemInstance, RuleAnnotation, RuleRecord, SetDomain,
                       annotation_from_json, annotation_to_json,
                       apply_rule, canonical_sentence, group_sentence,
                       layout_groups, oracle_solve, panel_from_json,
                       panel_to_json, value_domain)

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "problems.jsonl"
IMAGES_NAME = "images.npy"
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    family: str = "raven_like"  # raven_like | pgm_like
    configuration: str = "center"
    count: int = 100
    seed: int = 0
    rule_whitelist: tuple = ()  # entries "group.attr:rule" | "attr:rule" | "rule"
    rule_blacklist: tuple = ()
    exclude_values: dict = field(default_factory=dict)  # attr -> forbidden values
    require_values: dict = field(default_factory=dict)  # attr -> >=1 governed value
    pinned_rules: dict = field(default_factory=dict)  # "group.attr" -> rule
    rule_count_range: tuple = ()  # (lo, hi) bounds on governed records, () = free
    max_attempts: int = 300

    def validate(self) -> "GeneratorConfig":
        if self.count <= 0:
            raise ConfigError("count must be positive")
        layout_groups(self.configuration, self.family)  # raises on bad names
        overlap = set(self.rule_whitelist) & set(self.rule_blacklist)
        if overlap:
            raise ConfigError(f"whitelist and blacklist overlap: {overlap}")
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        d["rule_whitelist"] = list(self.rule_whitelist)
        d["rule_blacklist"] = list(self.rule_blacklist)
        d["rule_count_range"] = list(self.rule_count_range)
        d["exclude_values"] = {k: list(v) for k, v in self.exclude_values.items()}
        d["require_values"] = {k: list(v) for k, v in self.require_values.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GeneratorConfig":
        return cls(
            family=d["family"], configuration=d["configuration"],
            count=d["count"], seed=d["seed"],
            rule_whitelist=tuple(d.get("rule_whitelist", ())),
            rule_blacklist=tuple(d.get("rule_blacklist", ())),
            exclude_values={k: tuple(v) for k, v in d.get("exclude_values", {}).items()},
            require_values={k: tuple(v) for k, v in d.get("require_values", {}).items()},
            pinned_rules=dict(d.get("pinned_rules", {})),
            rule_count_range=tuple(d.get("rule_count_range", ())),
            max_attempts=d.get("max_attempts", 300),
        )


def rule_allowed(cfg: GeneratorConfig, group: str, attribute: str,
                 rule: str) -> bool:
    keys = (f"{group}.{attribute}:{rule}", f"{attribute}:{rule}", rule)
    if any(k in cfg.rule_blacklist for k in keys):
        return False
    if cfg.rule_whitelist and not any(k in cfg.rule_whitelist for k in keys):
        return False
    return True


# ---------------------------------------------------------------------------
# rule menus
# ---------------------------------------------------------------------------

def _rule_menu(layout: GroupLayout, attribute: str, family: str) -> tuple:
    """Rules structurally available for (group kind, attribute)."""
    pgm = family == "pgm_like"
    reach = 4 if pgm else 2  # progression span used by the value grid

    if layout.kind == "line":
        if attribute == "type":
            return ("constant", "distribute_three", "xor", "or", "and")
        if attribute == "color":
            menu = ["constant", "distribute_three"]
            for rule, d in PROGRESSION_DELTAS.items():
                if abs(d) * reach <= N_COLORS - 1:
                    menu.append(rule)
            menu += ["arithmetic_plus", "arithmetic_minus"]
            return tuple(menu)
        return ()

    cap = layout.capacity
    if attribute in ("number", "position") and cap < 2:
        return ()
    if attribute == "position":
        return ("constant", "distribute_three", "xor", "or", "and")

    spans = {"number": cap - 1, "type": N_TYPES - 1, "size": N_SIZES - 1,
             "color": N_COLORS - 1}
    span = spans[attribute]
    menu = ["constant"]
    if span >= 2:
        menu.append("distribute_three")
    for rule, d in PROGRESSION_DELTAS.items():
        if abs(d) * reach <= span:
            menu.append(rule)
    if attribute == "number" and cap >= (4 if pgm else 2):
        menu += ["arithmetic_plus", "arithmetic_minus"]
    if attribute == "color":
        menu += ["arithmetic_plus", "arithmetic_minus"]
    return tuple(menu)


def _governable(layout: GroupLayout, outline_only_color_na: bool = True):
    if layout.kind == "line":
        return ("type", "color")
    attrs = ["type", "size", "color"]
    if layout.outline_only and outline_only_color_na:
        attrs.remove("color")  # fill is invisible on outline-only groups
    if layout.capacity > 1:
        attrs = ["number", "position"] + attrs
    return tuple(attrs)


def _alternative_count(domain, current) -> int:
    if isinstance(domain, OrdinalDomain):
        return domain.hi - domain.lo
    # any nonempty subset other than the current one can serve
    return 2 ** len(domain.universe) - 2


# ---------------------------------------------------------------------------
# value grid sampling
# ---------------------------------------------------------------------------

def _pick(rng, values):
    values = list(values)
    if not values:
        raise RuleRangeError("no feasible values")
    return values[int(rng.integers(len(values)))]


def _ordinal_values(domain, exclude):
    return [v for v in domain.values() if v not in exclude]


def _sample_sets(rng, domain: SetDomain, k: int = 1):
    universe = list(domain.universe)
    out = []
    for _ in range(k):
        n = int(rng.integers(domain.min_size, len(universe) + 1))
        members = rng.choice(len(universe), size=n, replace=False)
        out.append(frozenset(universe[i] for i in members))
    return out


def _rotations(triple_order):
    a, b, c = triple_order
    return [(a, b, c), (c, a, b), (b, c, a)]


def _sample_grid_raven(rec: RuleRecord, domain, rng, exclude) -> list:
    """3 independent rows, each satisfying the rule left-to-right."""
    rows = []
    for _ in range(3):
        for _ in range(40):
            try:
                rows.append(_sample_row(rec, domain, rng, exclude))
                break
            except RuleRangeError:
                continue
        else:
            raise RuleRangeError(f"cannot instantiate {rec.rule} row")
    return rows


def _sample_row(rec: RuleRecord, domain, rng, exclude) -> tuple:
    rule = rec.rule
    if rule == "constant":
        if isinstance(domain, SetDomain):
            v = _sample_sets(rng, domain)[0]
        else:
            v = _pick(rng, _ordinal_values(domain, exclude))
        return (v, v, v)
    if rule in PROGRESSION_DELTAS:
        d = PROGRESSION_DELTAS[rule]
        starts = [v for v in _ordinal_values(domain, exclude)
                  if domain.contains(v + d) and domain.contains(v + 2 * d)
                  and (v + d) not in exclude and (v + 2 * d) not in exclude]
        s = _pick(rng, starts)
        return (s, s + d, s + 2 * d)
    if rule in ("arithmetic_plus", "arithmetic_minus"):
        vals = _ordinal_values(domain, exclude)
        for _ in range(60):
            v1, v2 = _pick(rng, vals), _pick(rng, vals)
            v3 = apply_rule_or_none(rec, v1, v2, domain)
            if v3 is not None and v3 not in exclude:
                return (v1, v2, v3)
        raise RuleRangeError("no feasible arithmetic row")
    if rule == "distribute_three":
        triple = rec.params
        order = list(triple)
        rng.shuffle(order)
        return tuple(order)
    if rule in ("xor", "or", "and"):
        for _ in range(60):
            v1, v2 = _sample_sets(rng, domain, 2)
            v3 = apply_rule_or_none(rec, v1, v2, domain)
            if v3 is not None:
                return (v1, v2, v3)
        raise RuleRangeError("no feasible set-rule row")
    raise ConfigError(f"unhandled rule {rule}")


def apply_rule_or_none(rec, v1, v2, domain):
    try:
        out = apply_rule(rec, v1, v2, domain)
    except RuleRangeError:
        return None
    return None if isinstance(out, NonDeterministic) else out


def _sample_grid_pgm(rec: RuleRecord, domain, rng, exclude) -> list:
    """3x3 grid on which the rule holds along every row and every column."""
    rule = rec.rule
    if rule == "constant":
        row = _sample_row(rec, domain, rng, exclude)
        return [row, row, row]
    if rule in PROGRESSION_DELTAS:
        d = PROGRESSION_DELTAS[rule]
        starts = [v for v in _ordinal_values(domain, exclude)
                  if all(domain.contains(v + k * d) and (v + k * d) not in exclude
                         for k in range(5))]
        s = _pick(rng, starts)
        return [tuple(s + (i + j) * d for j in range(3)) for i in range(3)]
    if rule == "distribute_three":
        triple = list(rec.params)
        rng.shuffle(triple)
        rots = _rotations(tuple(triple))
        order = list(rng.permutation(3))
        return [rots[k] for k in order]
    if rule in ("arithmetic_plus", "arithmetic_minus", "xor", "or", "and"):
        for _ in range(120):
            try:
                if rule in ("xor", "or", "and"):
                    a, b, d_, e = _sample_sets(rng, domain, 4)
                else:
                    vals = _ordinal_values(domain, exclude)
                    a, b, d_, e = (_pick(rng, vals) for _ in range(4))
                r1 = (a, b, apply_rule(rec, a, b, domain))
                r2 = (d_, e, apply_rule(rec, d_, e, domain))
                r3 = tuple(apply_rule(rec, r1[j], r2[j], domain)
                           for j in range(3))
            except RuleRangeError:
                continue
            cells = [v for row in (r1, r2, r3) for v in row]
            if any(isinstance(v, int) and v in exclude for v in cells):
                continue
            return [r1, r2, r3]
        raise RuleRangeError(f"no feasible {rule} grid")
    raise ConfigError(f"unhandled rule {rule}")


# ---------------------------------------------------------------------------
# annotation sampling
# ---------------------------------------------------------------------------

_SINGLE_RULE_MIN_ALTERNATIVES = 7


def _choose_governed(cfg: GeneratorConfig, layouts, rng) -> dict:
    """Map group -> tuple of governed attribute names."""
    if cfg.pinned_rules:
        governed: dict = {g.name: [] for g in layouts}
        for key in cfg.pinned_rules:
            group, attr = key.split(".")
            if group not in governed:
                raise ConfigError(f"pinned rule for unknown group {group!r}")
            governed[group].append(attr)
        return {g: tuple(a) for g, a in governed.items()}

    governed = {}
    if cfg.family == "raven_like":
        for layout in layouts:
            attrs = list(_governable(layout))
            if "number" in attrs:
                # exactly one of number/position carries the rule; the
                # other changes freely and acts as a distractor
                drop = "position" if rng.integers(2) == 0 else "number"
                attrs.remove(drop)
            governed[layout.name] = tuple(attrs)
        return governed

    # pgm_like: any attribute may be a distractor; sample the governed
    # subset per problem with at least one rule overall
    lo, hi = cfg.rule_count_range or (1, 10 ** 6)
    for _ in range(200):
        governed = {}
        total = []
        for layout in layouts:
            attrs = [a for a in _governable(layout) if rng.random() < 0.5]
            if "number" in attrs and "position" in attrs:
                attrs.remove("position" if rng.integers(2) == 0 else "number")
            governed[layout.name] = tuple(attrs)
            total += [(layout, a) for a in attrs]
        if not lo <= len(total) <= hi:
            continue
        if len(total) == 1:
            layout, attr = total[0]
            domain = value_domain(cfg.configuration, cfg.family, layout.name,
                                  attr)
            if isinstance(domain, OrdinalDomain):
                if domain.hi - domain.lo < _SINGLE_RULE_MIN_ALTERNATIVES:
                    continue
            elif len(domain.universe) < 4:
                continue
        return governed
    raise GenerationExhausted("could not pick a governed attribute subset")


def _sample_annotation(cfg: GeneratorConfig, layouts, rng) -> RuleAnnotation:
    governed = _choose_governed(cfg, layouts, rng)
    records = []
    for layout in layouts:
        for attr in ATTRIBUTES:
            domain = value_domain(cfg.configuration, cfg.family, layout.name,
                                  attr)
            if attr not in governed.get(layout.name, ()) or domain is None:
                records.append(RuleRecord(layout.name, attr, RULE_NA))
                continue
            pinned = cfg.pinned_rules.get(f"{layout.name}.{attr}")
            if pinned is not None:
                menu = [pinned] if pinned in _rule_menu(layout, attr, cfg.family) \
                    else []
            else:
                menu = [r for r in _rule_menu(layout, attr, cfg.family)
                        if rule_allowed(cfg, layout.name, attr, r)]
            if not menu:
                raise GenerationExhausted(
                    f"no admissible rule for {layout.name}.{attr}")
            rule = menu[int(rng.integers(len(menu)))]
            params: tuple = ()
            if rule == "distribute_three":
                exclude = set(cfg.exclude_values.get(attr, ()))
                if isinstance(domain, SetDomain):
                    pool = _distinct_sets(rng, domain, 3)
                else:
                    vals = _ordinal_values(domain, exclude)
                    if len(vals) < 3:
                        raise GenerationExhausted(
                            f"distribute_three needs 3 values for {attr}")
                    picks = rng.choice(len(vals), size=3, replace=False)
                    pool = [vals[i] for i in picks]
                params = tuple(pool)
            records.append(RuleRecord(layout.name, attr, rule, params))
    return RuleAnnotation(tuple(records))


def _distinct_sets(rng, domain: SetDomain, k: int):
    out: list = []
    for _ in range(200):
        (s,) = _sample_sets(rng, domain, 1)
        if s not in out:
            out.append(s)
        if len(out) == k:
            return out
    raise RuleRangeError("could not sample distinct sets")


# ---------------------------------------------------------------------------
# panel assembly
# ---------------------------------------------------------------------------

def _resolve_group(layout: GroupLayout, governed_values: dict,
                   rng) -> GroupSpec:
    if layout.kind == "line":
        line_domain = SetDomain(tuple(range(4)))
        line_set = governed_values.get("type")
        if line_set is None:
            line_set = _sample_sets(rng, line_domain)[0]
        color = governed_values.get("color")
        if color is None:
            color = int(rng.integers(N_COLORS))
        return GroupSpec(kind="line", positions=frozenset(),
                         line_set=line_set, color=color)

    cap = layout.capacity
    if "position" in governed_values:
        positions = governed_values["position"]
    elif "number" in governed_values:
        n = governed_values["number"]
        positions = frozenset(
            int(i) for i in rng.choice(cap, size=n, replace=False))
    elif cap == 1:
        positions = frozenset({0})
    else:
        n = int(rng.integers(1, cap + 1))
        positions = frozenset(
            int(i) for i in rng.choice(cap, size=n, replace=False))
    shape_type = governed_values.get("type")
    if shape_type is None:
        shape_type = int(rng.integers(N_TYPES))
    size = governed_values.get("size")
    if size is None:
        size = int(rng.integers(N_SIZES))
    color = governed_values.get("color")
    if color is None:
        color = int(rng.integers(N_COLORS))
    return GroupSpec(kind="shape", positions=positions, shape_type=shape_type,
                     size=size, color=color)


def _set_group_attr(panel: PanelSpec, group: str, attribute: str, value,
                    rng) -> PanelSpec:
    layout = group_layout_of(panel, group)
    g = panel.group(group)
    if g.kind == "line":
        if attribute == "type":
            g = GroupSpec(kind="line", line_set=value, color=g.color,
                          positions=frozenset())
        elif attribute == "color":
            g = GroupSpec(kind="line", line_set=g.line_set, color=value,
                          positions=frozenset())
        else:
            raise ConfigError(f"cannot set {attribute} on a line group")
        return panel.replace_group(group, g)
    fields = {"positions": g.positions, "shape_type": g.shape_type,
              "size": g.size, "color": g.color}
    if attribute == "position":
        fields["positions"] = value
    elif attribute == "number":
        fields["positions"] = frozenset(
            int(i) for i in rng.choice(layout.capacity, size=value,
                                       replace=False))
    elif attribute == "type":
        fields["shape_type"] = value
    elif attribute == "size":
        fields["size"] = value
    elif attribute == "color":
        fields["color"] = value
    return panel.replace_group(group, GroupSpec(kind="shape", **fields))


def group_layout_of(panel: PanelSpec, group: str) -> GroupLayout:
    from .rpm_core import group_layout

    return group_layout(panel.config, panel.family, group)


# ---------------------------------------------------------------------------
# candidate pools
# ---------------------------------------------------------------------------

def _alternatives(panel: PanelSpec, group: str, attribute: str, k: int,
                  rng) -> list:
    """k distinct in-range values different from the panel's current one."""
    domain = value_domain(panel.config, panel.family, group, attribute)
    current = panel.attr(group, attribute)
    if isinstance(domain, OrdinalDomain):
        pool = [v for v in domain.values() if v != current]
    else:
        # prefer same-cardinality subsets (less conspicuous distractors),
        # widen to every other nonempty subset when there are too few
        pool = [frozenset(c) for c in
                itertools.combinations(domain.universe, len(current))]
        pool = [s for s in pool if s != current]
        if len(pool) < k:
            pool = [s for s in domain.values() if s != current]
    if len(pool) < k:
        raise GenerationExhausted(
            f"not enough alternatives for {group}.{attribute}")
    picks = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in picks]


def make_candidates(correct: PanelSpec, annotation: RuleAnnotation,
                    rng) -> tuple:
    """Bias-free 8-candidate pool; returns (candidates, answer_index).

    Depth-3 attribute bisection when >=3 governed attributes can be
    perturbed: flipping attribute k on half the leaves gives every
    perturbed value a 4/4 split over the pool. With 2 perturbable
    attributes one tree level re-flips the first attribute to further
    alternatives (2/2/2/2 + 4/4); with a single one the pool holds 8
    distinct values of it. Exactly one leaf equals the correct panel.
    """
    perturbable = []
    for rec in annotation.active():
        domain = value_domain(correct.config, correct.family, rec.group,
                              rec.attribute)
        current = correct.attr(rec.group, rec.attribute)
        count = _alternative_count(domain, current)
        if count >= 1:
            perturbable.append((rec.group, rec.attribute, count))
    if not perturbable:
        raise GenerationExhausted("no perturbable attribute for candidates")

    leaves = [correct] * 8
    if len(perturbable) >= 3:
        picks = rng.choice(len(perturbable), size=3, replace=False)
        chosen = [perturbable[int(i)] for i in picks]
        for level, (group, attr, _) in enumerate(chosen):
            (alt,) = _alternatives(correct, group, attr, 1, rng)
            for leaf in range(8):
                if leaf >> level & 1:
                    leaves[leaf] = _set_group_attr(leaves[leaf], group, attr,
                                                   alt, rng)
    elif len(perturbable) == 2:
        perturbable.sort(key=lambda t: -t[2])
        (ga, aa, ca), (gb, ab, _) = perturbable
        if ca < 3:
            raise GenerationExhausted("2-attribute pool needs 3 alternatives")
        alts_a = _alternatives(correct, ga, aa, 3, rng)
        (alt_b,) = _alternatives(correct, gb, ab, 1, rng)
        for leaf in range(8):
            a_index = (leaf & 1) + 2 * (leaf >> 2 & 1)
            if a_index > 0:
                leaves[leaf] = _set_group_attr(leaves[leaf], ga, aa,
                                               alts_a[a_index - 1], rng)
            if leaf >> 1 & 1:
                leaves[leaf] = _set_group_attr(leaves[leaf], gb, ab, alt_b,
                                               rng)
    else:
        (group, attr, count) = perturbable[0]
        if count < 7:
            raise GenerationExhausted("single-attribute pool needs 7 "
                                      "alternatives")
        alts = _alternatives(correct, group, attr, 7, rng)
        for leaf in range(1, 8):
            leaves[leaf] = _set_group_attr(leaves[leaf], group, attr,
                                           alts[leaf - 1], rng)

    order = [int(i) for i in rng.permutation(8)]
    candidates = tuple(leaves[i] for i in order)
    answer_index = order.index(0)
    return candidates, answer_index


def candidate_bias_report(instance: ProblemInstance) -> dict:
    """Value histograms of every governed attribute across the pool.

    ok=True when each governed attribute's histogram matches one of the
    documented pool layouts: untouched (8 of one value), bisected (4/4),
    re-flipped (4/4 or 2/2/2/2), or all-distinct.
    """
    report = {}
    ok = True
    for rec in instance.annotation.active():
        values = [c.attr(rec.group, rec.attribute)
                  for c in instance.candidates]
        hist: dict = {}
        for v in values:
            key = tuple(sorted(v)) if isinstance(v, frozenset) else v
            hist[key] = hist.get(key, 0) + 1
        counts = sorted(hist.values(), reverse=True)
        valid = counts in ([8], [4, 4], [2, 2, 2, 2], [1] * 8)
        ok = ok and valid
        report[f"{rec.group}.{rec.attribute}"] = {
            "histogram": counts, "valid": valid}
    return {"ok": ok, "attributes": report}


# ---------------------------------------------------------------------------
# problem generation
# ---------------------------------------------------------------------------

def _build_problem(cfg: GeneratorConfig, index: int, rng) -> ProblemInstance:
    layouts = layout_groups(cfg.configuration, cfg.family)
    annotation = _sample_annotation(cfg, layouts, rng)

    grids = {}
    for rec in annotation.active():
        domain = value_domain(cfg.configuration, cfg.family, rec.group,
                              rec.attribute)
        exclude = set(cfg.exclude_values.get(rec.attribute, ()))
        if cfg.family == "pgm_like":
            grids[(rec.group, rec.attribute)] = _sample_grid_pgm(
                rec, domain, rng, exclude)
        else:
            grids[(rec.group, rec.attribute)] = _sample_grid_raven(
                rec, domain, rng, exclude)

    if cfg.require_values:
        for attr, wanted in cfg.require_values.items():
            hit = any(
                key[1] == attr and any(v in wanted for row in grid for v in row)
                for key, grid in grids.items())
            if not hit:
                raise RuleRangeError(f"required values for {attr} missing")

    panels = []
    for i in range(3):
        for j in range(3):
            groups = []
            for layout in layouts:
                governed_values = {
                    attr: grids[(layout.name, attr)][i][j]
                    for (gname, attr) in grids
                    if gname == layout.name}
                groups.append((layout.name,
                               _resolve_group(layout, governed_values, rng)))
            panels.append(PanelSpec(cfg.configuration, cfg.family,
                                    tuple(groups)))

    context, correct = tuple(panels[:8]), panels[8]
    candidates, answer_index = make_candidates(correct, annotation, rng)
    instance = ProblemInstance(
        config=cfg.configuration, family=cfg.family, context=context,
        candidates=candidates, answer_index=answer_index,
        annotation=annotation, seed=cfg.seed * 1_000_003 + index)
    if oracle_solve(instance) != answer_index:
        raise NoAnswerError("oracle disagrees with the constructed answer")
    return instance


def generate(cfg: GeneratorConfig) -> list:
    """Corpus of oracle-verified problem instances; deterministic in cfg."""
    cfg.validate()
    corpus = []
    for index in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, index])
        last_error = None
        for _ in range(cfg.max_attempts):
            try:
                corpus.append(_build_problem(cfg, index, rng))
                break
            except (RuleRangeError, GenerationExhausted, NoAnswerError,
                    AmbiguousAnswerError) as err:
                last_error = err
        else:
            raise GenerationExhausted(
                f"problem {index}: {cfg.max_attempts} attempts failed "
                f"(last: {last_error})")
    return corpus


def split(corpus: list, fractions, seed: int = 0) -> list:
    """Disjoint seed-deterministic partition with exact sizes."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(corpus)
    counts = [int(f * n) for f in fractions]
    for i in range(n - sum(counts)):
        counts[i % len(counts)] += 1
    if any(c == 0 for c in counts):
        raise ConfigError(f"empty split part: {counts}")
    order = np.random.default_rng(seed).permutation(n)
    parts = []
    at = 0
    for c in counts:
        parts.append([corpus[int(i)] for i in order[at:at + c]])
        at += c
    return parts


# ---------------------------------------------------------------------------
# corpus storage
# ---------------------------------------------------------------------------

def corpus_sentences(corpus) -> dict:
    whole = sorted({canonical_sentence(p.annotation) for p in corpus})
    per_group = sorted({group_sentence(p.annotation, g)
                        for p in corpus for g in p.annotation.groups()})
    return {"sentences": whole, "group_sentences": per_group}


def save_corpus(corpus: list, directory, generator_config=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = corpus[0]
    rules = sorted({r.rule for p in corpus for r in p.annotation.records})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "family": first.family,
        "configuration": first.config,
        "count": len(corpus),
        "seeds": [p.seed for p in corpus],
        "rule_inventory": rules,
        **corpus_sentences(corpus),
    }
    if generator_config is not None:
        manifest["generator_config"] = generator_config.to_json()
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))

    with open(directory / RECORDS_NAME, "w") as f:
        for i, p in enumerate(corpus):
            rec = {
                "index": i,
                "seed": p.seed,
                "config": p.config,
                "family": p.family,
                "answer_index": p.answer_index,
                "annotation": annotation_to_json(p.annotation),
                "sentence": canonical_sentence(p.annotation),
                "group_sentences": {g: group_sentence(p.annotation, g)
                                    for g in p.annotation.groups()},
                "context": [panel_to_json(x) for x in p.context],
                "candidates": [panel_to_json(x) for x in p.candidates],
            }
            f.write(json.dumps(rec) + "\n")

    images = np.stack([p.images for p in corpus])
    np.save(directory / IMAGES_NAME, images)


def load_corpus(directory) -> list:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorpusError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise CorpusError(
            f"unsupported corpus schema {manifest.get('schema_version')}")
    images = np.load(directory / IMAGES_NAME, mmap_mode="r")
    corpus = []
    with open(directory / RECORDS_NAME) as f:
        for line in f:
            rec = json.loads(line)
            corpus.append(ProblemInstance(
                config=rec["config"], family=rec["family"],
                context=tuple(panel_from_json(x) for x in rec["context"]),
                candidates=tuple(panel_from_json(x)
                                 for x in rec["candidates"]),
                answer_index=rec["answer_index"],
                annotation=annotation_from_json(rec["annotation"]),
                seed=rec["seed"],
                images=images[rec["index"]]))
    if len(corpus) != manifest["count"]:
        raise CorpusError(
            f"manifest count {manifest['count']} != {len(corpus)} records")
    return corpus


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise CorpusError(f"no {MANIFEST_NAME} in {directory}")
    return json.loads(path.read_text())
