"""PPDDL emission and parsing for grounded models.

The dialect is a small subset: zero-arity predicates (one per vocabulary
symbol, plus ``notfailed``), one numeric fluent ``partition`` holding the
current partition label, and parameterless actions whose effects are either
a conjunction or a ``probabilistic`` choice between conjunctions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .ground import GroundedModel

DOMAIN_NAME = "portsym"
PROB_DIGITS = 6


class PPDDLParseError(ValueError):
    def __init__(self, line: int, column: int, expected: str, found: str):
        super().__init__(f"line {line}, column {column}: expected {expected}, found {found}")
        self.line, self.column, self.expected, self.found = line, column, expected, found


@dataclass(frozen=True)
class PEffect:
    probability: float
    add: tuple[str, ...]
    delete: tuple[str, ...]
    partition: int | None


@dataclass(frozen=True)
class PAction:
    name: str
    partition: int
    # conjunction of disjunctions of predicate names
    precondition: tuple[tuple[str, ...], ...]
    effects: tuple[PEffect, ...]


@dataclass(frozen=True)
class PDomain:
    name: str
    predicates: tuple[str, ...]
    actions: tuple[PAction, ...]


# -- structure of a grounded model --------------------------------------------

def _pred(gm: GroundedModel, sid: int) -> str:
    return gm.portable.vocabulary[sid].name


def domain_structure(gm: GroundedModel) -> PDomain:
    """The PPDDL structure a grounded model emits to."""
    vocab = gm.portable.vocabulary
    preds = ("notfailed",) + tuple(s.name for s in vocab)
    actions = []
    for op in gm.operators:
        pre_syms = {s for clause in op.precondition for s in clause}
        effects = []
        for out in op.outcomes:
            mask = set(out.mask)
            add = tuple(_pred(gm, s) for s in sorted(out.symbols))
            # precondition symbols whose variables the outcome overwrites become false
            delete = tuple(_pred(gm, s) for s in sorted(pre_syms - set(out.symbols))
                           if mask & set(vocab[s].mask))
            effects.append(PEffect(round(float(out.probability), PROB_DIGITS), add, delete, int(out.end_label)))
        precondition = tuple(tuple(_pred(gm, s) for s in clause) for clause in op.precondition)
        actions.append(PAction(op.name, int(op.start_label), precondition, tuple(effects)))
    return PDomain(DOMAIN_NAME, preds, tuple(actions))


# -- emission ------------------------------------------------------------------

def _fmt_prob(p: float) -> str:
    text = f"{p:.{PROB_DIGITS}f}".rstrip("0")
    return text + "0" if text.endswith(".") else text


def _conj(items: list[str]) -> str:
    return "(and" + "".join(" " + i for i in items) + ")"


def _effect_text(e: PEffect) -> str:
    items = [f"({a})" for a in e.add] + [f"(not ({d}))" for d in e.delete]
    if e.partition is not None:
        items.append(f"(assign (partition) {e.partition})")
    return _conj(items)


def emit_domain(dom: PDomain) -> str:
    lines = [f"(define (domain {dom.name})",
             "  (:requirements :strips :probabilistic-effects :fluents)",
             "  (:predicates"]
    lines += [f"    ({p})" for p in dom.predicates]
    lines[-1] += ")"
    lines.append("  (:functions (partition))")
    for act in dom.actions:
        pre = ["(notfailed)", f"(= (partition) {act.partition})"]
        for clause in act.precondition:
            pre.append(f"({clause[0]})" if len(clause) == 1 else "(or" + "".join(f" ({c})" for c in clause) + ")")
        lines += [f"  (:action {act.name}",
                  "    :parameters ()",
                  f"    :precondition {_conj(pre)}"]
        if len(act.effects) == 1:
            lines.append(f"    :effect {_effect_text(act.effects[0])})")
        elif not act.effects:
            lines.append("    :effect (and))")
        else:
            lines.append("    :effect (probabilistic")
            lines += [f"      {_fmt_prob(e.probability)} {_effect_text(e)}" for e in act.effects]
            lines[-1] += "))"
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_ppddl(gm: GroundedModel) -> str:
    return emit_domain(domain_structure(gm))


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s()]+")


@dataclass
class _Tok:
    text: str
    line: int
    col: int


@dataclass
class _List:
    items: list
    line: int
    col: int


def _tokens(text: str) -> list[_Tok]:
    out, line, col = [], 1, 1
    for m in _TOKEN.finditer(text):
        s = m.group()
        if not s.isspace() and not s.startswith(";"):
            out.append(_Tok(s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
    return out


def _read(text: str):
    toks = _tokens(text)
    if not toks:
        raise PPDDLParseError(1, 1, "'('", "end of input")
    stack: list[_List] = []
    root = None
    for t in toks:
        if t.text == "(":
            stack.append(_List([], t.line, t.col))
        elif t.text == ")":
            if not stack:
                raise PPDDLParseError(t.line, t.col, "'(' or end of input", "')'")
            node = stack.pop()
            if stack:
                stack[-1].items.append(node)
            elif root is None:
                root = node
            else:
                raise PPDDLParseError(node.line, node.col, "end of input", "'('")
        else:
            if not stack:
                raise PPDDLParseError(t.line, t.col, "'('", repr(t.text))
            stack[-1].items.append(t)
        if root is not None and stack:
            raise PPDDLParseError(stack[0].line, stack[0].col, "end of input", "'('")
    if stack:
        last = toks[-1]
        raise PPDDLParseError(last.line, last.col + len(last.text), "')'", "end of input")
    return root


def _where(node) -> tuple[int, int]:
    return node.line, node.col


def _desc(node) -> str:
    if node is None:
        return "end of list"
    return repr(node.text) if isinstance(node, _Tok) else "'('"


def _expect_word(items: list, i: int, parent: _List, word: str | None = None, what: str = "a name") -> str:
    node = items[i] if i < len(items) else None
    if not isinstance(node, _Tok) or (word is not None and node.text != word):
        line, col = _where(node) if node is not None else (parent.line, parent.col)
        raise PPDDLParseError(line, col, repr(word) if word else what, _desc(node))
    return node.text


def _expect_list(items: list, i: int, parent: _List, what: str) -> _List:
    node = items[i] if i < len(items) else None
    if not isinstance(node, _List):
        line, col = _where(node) if node is not None else (parent.line, parent.col)
        raise PPDDLParseError(line, col, what, _desc(node))
    return node


def _expect_end(items: list, n: int, parent: _List) -> None:
    if len(items) > n:
        line, col = _where(items[n])
        raise PPDDLParseError(line, col, "')'", _desc(items[n]))


def _atom(node: _List) -> str:
    _expect_word(node.items, 0, node, what="a predicate name")
    _expect_end(node.items, 1, node)
    return node.items[0].text


def _int(items: list, i: int, parent: _List) -> int:
    text = _expect_word(items, i, parent, what="an integer")
    if not re.fullmatch(r"-?\d+", text):
        raise PPDDLParseError(*_where(items[i]), "an integer", repr(text))
    return int(text)


def _is_partition_ref(node) -> bool:
    return isinstance(node, _List) and len(node.items) == 1 and isinstance(node.items[0], _Tok) \
        and node.items[0].text == "partition"


def _precondition(node: _List) -> tuple[int, tuple[tuple[str, ...], ...]]:
    items = node.items
    _expect_word(items, 0, node, "and")
    first = _expect_list(items, 1, node, "'(notfailed)'")
    if _atom(first) != "notfailed":
        raise PPDDLParseError(*_where(first.items[0]), "'notfailed'", repr(first.items[0].text))
    eq = _expect_list(items, 2, node, "'(= (partition) N)'")
    _expect_word(eq.items, 0, eq, "=")
    ref = eq.items[1] if len(eq.items) > 1 else None
    if not _is_partition_ref(ref):
        raise PPDDLParseError(*(_where(ref) if ref is not None else _where(eq)), "'(partition)'", _desc(ref))
    label = _int(eq.items, 2, eq)
    _expect_end(eq.items, 3, eq)
    clauses = []
    for sub in items[3:]:
        if not isinstance(sub, _List):
            raise PPDDLParseError(*_where(sub), "a condition", _desc(sub))
        head = sub.items[0] if sub.items else None
        if isinstance(head, _Tok) and head.text == "or":
            lits = []
            for lit in sub.items[1:]:
                if not isinstance(lit, _List):
                    raise PPDDLParseError(*_where(lit), "a predicate", _desc(lit))
                lits.append(_atom(lit))
            if len(lits) < 2:
                raise PPDDLParseError(*_where(sub), "at least two disjuncts", str(len(lits)))
            clauses.append(tuple(lits))
        else:
            clauses.append((_atom(sub),))
    return label, tuple(clauses)


def _conjunction(node: _List, probability: float) -> PEffect:
    items = node.items
    _expect_word(items, 0, node, "and")
    add, delete, partition = [], [], None
    for sub in items[1:]:
        if not isinstance(sub, _List) or not sub.items:
            raise PPDDLParseError(*_where(sub), "an effect", _desc(sub))
        head = sub.items[0]
        if isinstance(head, _Tok) and head.text == "not":
            inner = _expect_list(sub.items, 1, sub, "a predicate")
            _expect_end(sub.items, 2, sub)
            delete.append(_atom(inner))
        elif isinstance(head, _Tok) and head.text == "assign":
            ref = sub.items[1] if len(sub.items) > 1 else None
            if not _is_partition_ref(ref):
                raise PPDDLParseError(*(_where(ref) if ref is not None else _where(sub)), "'(partition)'", _desc(ref))
            if partition is not None:
                raise PPDDLParseError(*_where(sub), "one partition assignment", "a second one")
            partition = _int(sub.items, 2, sub)
            _expect_end(sub.items, 3, sub)
        else:
            add.append(_atom(sub))
    return PEffect(probability, tuple(add), tuple(delete), partition)


def _effects(node: _List) -> tuple[PEffect, ...]:
    head = node.items[0] if node.items else None
    if isinstance(head, _Tok) and head.text == "probabilistic":
        rest = node.items[1:]
        if len(rest) < 2 or len(rest) % 2:
            raise PPDDLParseError(*_where(node), "probability/effect pairs", f"{len(rest)} items")
        out = []
        for k in range(0, len(rest), 2):
            p_tok = rest[k]
            if not isinstance(p_tok, _Tok):
                raise PPDDLParseError(*_where(p_tok), "a probability", _desc(p_tok))
            try:
                p = float(p_tok.text)
            except ValueError:
                raise PPDDLParseError(*_where(p_tok), "a probability", repr(p_tok.text)) from None
            if not 0.0 <= p <= 1.0:
                raise PPDDLParseError(*_where(p_tok), "a probability in [0, 1]", repr(p_tok.text))
            out.append(_conjunction(_expect_list(rest, k + 1, node, "an effect"), p))
        return tuple(out)
    if isinstance(head, _Tok) and head.text == "and" and len(node.items) == 1:
        return ()
    return (_conjunction(node, 1.0),)


def _action(node: _List) -> PAction:
    items = node.items
    name = _expect_word(items, 1, node, what="an action name")
    fields = {}
    i = 2
    while i < len(items):
        key = _expect_word(items, i, node, what="':parameters', ':precondition' or ':effect'")
        if key not in (":parameters", ":precondition", ":effect") or key in fields:
            raise PPDDLParseError(*_where(items[i]), "':parameters', ':precondition' or ':effect'", repr(key))
        fields[key] = _expect_list(items, i + 1, node, f"a list after {key}")
        i += 2
    for key in (":parameters", ":precondition", ":effect"):
        if key not in fields:
            raise PPDDLParseError(*_where(node), key, "end of action")
    if fields[":parameters"].items:
        raise PPDDLParseError(*_where(fields[":parameters"].items[0]), "'()'", _desc(fields[":parameters"].items[0]))
    label, pre = _precondition(fields[":precondition"])
    return PAction(name, label, pre, _effects(fields[":effect"]))


def parse_ppddl(text: str) -> PDomain:
    """Parse the subset :func:`emit_ppddl` writes."""
    root = _read(text)
    items = root.items
    _expect_word(items, 0, root, "define")
    head = _expect_list(items, 1, root, "'(domain NAME)'")
    _expect_word(head.items, 0, head, "domain")
    name = _expect_word(head.items, 1, head, what="a domain name")
    _expect_end(head.items, 2, head)
    preds: tuple[str, ...] | None = None
    actions = []
    for sec in items[2:]:
        if not isinstance(sec, _List):
            raise PPDDLParseError(*_where(sec), "a section", _desc(sec))
        key = _expect_word(sec.items, 0, sec, what="a section keyword")
        if key == ":requirements":
            continue
        if key == ":predicates":
            preds = tuple(_atom(p) if isinstance(p, _List) else _expect_list([p], 0, sec, "a predicate")
                          for p in sec.items[1:])
        elif key == ":functions":
            if len(sec.items) != 2 or not _is_partition_ref(sec.items[1]):
                bad = sec.items[1] if len(sec.items) > 1 else None
                raise PPDDLParseError(*(_where(bad) if bad is not None else _where(sec)), "'(partition)'", _desc(bad))
        elif key == ":action":
            actions.append(_action(sec))
        else:
            raise PPDDLParseError(*_where(sec.items[0]), "':requirements', ':predicates', ':functions' or ':action'",
                                  repr(key))
    if preds is None:
        raise PPDDLParseError(root.line, root.col, "a ':predicates' section", "none")
    if "notfailed" not in preds:
        raise PPDDLParseError(root.line, root.col, "'notfailed' among the predicates", "none")
    known = set(preds)
    for act in actions:
        used = {p for c in act.precondition for p in c} | {p for e in act.effects for p in e.add + e.delete}
        missing = sorted(used - known)
        if missing:
            raise PPDDLParseError(root.line, root.col, "declared predicates", f"undeclared {missing[0]!r} in {act.name}")
    return PDomain(name, preds, tuple(actions))
