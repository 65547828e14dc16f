"""Canonical text form of policy templates.

A template file is a header of slot declarations followed by one
s-expression between EVOLVE-BLOCK markers::

    [hyperparam]: tiny, int, 2, 41
    [init]: tiny, 10
    ; EVOLVE-BLOCK-START
    (lt (feat callee_raw_count) (param tiny))
    ; EVOLVE-BLOCK-END

Other lines starting with ``;`` are comments. ``[init]`` lines are optional
and default the slot to its lower bound. Expression forms::

    <int> | true | false | acc
    (param NAME) | (feat NAME) | (arg NAME)
    (neg X) | (not X)
    (OP A B)        OP in add sub mul div shr min max lt le eq and or
    (if C T E) | (argfold INIT STEP)
"""

from __future__ import annotations

import re
from typing import Iterator

from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    Acc,
    ArgFeat,
    ArgFold,
    Binary,
    BoolConst,
    Const,
    DepthLimit,
    Expr,
    Feat,
    HyperParamSlot,
    If,
    MalformedTemplate,
    Param,
    PolicyTemplate,
    TemplateError,
    Unary,
    children,
)
from .features import ALL_FEATURES, ARG_FEATURES

BLOCK_START = "; EVOLVE-BLOCK-START"
BLOCK_END = "; EVOLVE-BLOCK-END"
LINE_WIDTH = 88

_SLOT_RE = re.compile(r"\[hyperparam\]:\s*([^,\s]+)\s*,\s*int\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*$")
_INIT_RE = re.compile(r"\[init\]:\s*([^,\s]+)\s*,\s*(-?\d+)\s*$")
_TOKEN_RE = re.compile(r"(\()|(\))|(-?\d+)(?![\w.-])|([A-Za-z_][\w.-]*)")


class TemplateSyntaxError(TemplateError):
    def __init__(self, msg: str, line: int, column: int) -> None:
        super().__init__(f"{line}:{column}: {msg}")
        self.line = line
        self.column = column


def _tokens(text: str, first_line: int) -> Iterator[tuple[str, str, int, int]]:
    for ln, line in enumerate(text.split("\n"), start=first_line):
        code = line.split(";", 1)[0]
        pos = 0
        while True:
            while pos < len(code) and code[pos].isspace():
                pos += 1
            if pos >= len(code):
                break
            m = _TOKEN_RE.match(code, pos)
            if not m:
                raise TemplateSyntaxError(f"unexpected character {code[pos]!r}", ln, pos + 1)
            kind = ("open", "close", "int", "name")[m.lastindex - 1]
            yield kind, m.group(m.lastindex), ln, pos + 1
            pos = m.end()


class _Parser:
    def __init__(self, toks: list[tuple[str, str, int, int]], slots: set[str], end: tuple[int, int]):
        self.toks = toks
        self.i = 0
        self.slots = slots
        self.end = end

    def peek(self) -> tuple[str, str, int, int]:
        if self.i >= len(self.toks):
            return ("eof", "", *self.end)
        return self.toks[self.i]

    def take(self) -> tuple[str, str, int, int]:
        t = self.peek()
        if t[0] == "eof":
            raise TemplateSyntaxError("unexpected end of template", t[2], t[3])
        self.i += 1
        return t

    def expect_close(self) -> None:
        kind, val, ln, col = self.take()
        if kind != "close":
            raise TemplateSyntaxError(f"expected ')', got {val!r}", ln, col)

    def name(self) -> tuple[str, int, int]:
        kind, val, ln, col = self.take()
        if kind != "name":
            raise TemplateSyntaxError(f"expected a name, got {val!r}", ln, col)
        return val, ln, col

    def expr(self) -> Expr:
        kind, val, ln, col = self.take()
        if kind == "int":
            return Const(int(val))
        if kind == "name":
            if val == "true":
                return BoolConst(True)
            if val == "false":
                return BoolConst(False)
            if val == "acc":
                return Acc()
            raise TemplateSyntaxError(f"bare name {val!r}", ln, col)
        if kind == "close":
            raise TemplateSyntaxError("unexpected ')'", ln, col)
        head, hl, hc = self.name()
        if head == "param":
            n, nl, nc = self.name()
            if n not in self.slots:
                raise TemplateSyntaxError(f"slot {n!r} has no [hyperparam] declaration", nl, nc)
            out: Expr = Param(n)
        elif head == "feat":
            n, nl, nc = self.name()
            if n not in ALL_FEATURES:
                raise TemplateSyntaxError(f"unknown feature {n!r}", nl, nc)
            out = Feat(n)
        elif head == "arg":
            n, nl, nc = self.name()
            if n not in ARG_FEATURES:
                raise TemplateSyntaxError(f"unknown argument feature {n!r}", nl, nc)
            out = ArgFeat(n)
        elif head in UNARY_OPS:
            out = Unary(head, self.expr())
        elif head in BINARY_OPS:
            out = Binary(head, self.expr(), self.expr())
        elif head == "if":
            out = If(self.expr(), self.expr(), self.expr())
        elif head == "argfold":
            out = ArgFold(self.expr(), self.expr())
        else:
            raise TemplateSyntaxError(f"unknown form {head!r}", hl, hc)
        self.expect_close()
        return out


def parse_template(text: str) -> PolicyTemplate:
    lines = text.split("\n")
    slots: dict[str, HyperParamSlot] = {}
    inits: dict[str, tuple[int, int]] = {}
    body_start = body_end = None
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("[hyperparam]"):
            if body_start is not None:
                raise TemplateSyntaxError("slot declaration inside the evolve block", ln, 1)
            m = _SLOT_RE.match(line)
            if not m:
                raise TemplateSyntaxError("expected '[hyperparam]: <name>, int, <lo>, <hi>'", ln, 1)
            name, lo, hi = m.group(1), int(m.group(2)), int(m.group(3))
            if lo > hi:
                raise TemplateSyntaxError(f"slot {name}: lo {lo} > hi {hi}", ln, 1)
            if name in slots:
                raise TemplateSyntaxError(f"slot {name} declared twice", ln, 1)
            slots[name] = HyperParamSlot(name, lo, hi, lo)
        elif line.startswith("[init]"):
            m = _INIT_RE.match(line)
            if not m:
                raise TemplateSyntaxError("expected '[init]: <name>, <value>'", ln, 1)
            inits[m.group(1)] = (int(m.group(2)), ln)
        elif line == BLOCK_START:
            if body_start is not None:
                raise TemplateSyntaxError("second EVOLVE-BLOCK-START", ln, 1)
            body_start = ln
        elif line == BLOCK_END:
            if body_start is None or body_end is not None:
                raise TemplateSyntaxError("unbalanced EVOLVE-BLOCK-END", ln, 1)
            body_end = ln
    if body_start is not None and body_end is None:
        raise TemplateSyntaxError("missing EVOLVE-BLOCK-END", len(lines), 1)

    for name, (value, ln) in inits.items():
        if name not in slots:
            raise TemplateSyntaxError(f"[init] for undeclared slot {name!r}", ln, 1)
        s = slots[name]
        if not s.lo <= value <= s.hi:
            raise TemplateSyntaxError(f"slot {name}: init {value} outside [{s.lo}, {s.hi}]", ln, 1)
        slots[name] = HyperParamSlot(name, s.lo, s.hi, value)

    if body_start is None:
        first = 1
        body_lines = [l if not l.strip().startswith("[") else "" for l in lines]
    else:
        first = body_start + 1
        body_lines = lines[body_start:body_end - 1]
    toks = list(_tokens("\n".join(body_lines), first))
    end = (first + max(len(body_lines) - 1, 0), 1)
    p = _Parser(toks, set(slots), end)
    if not toks:
        raise TemplateSyntaxError("empty template body", *end)
    try:
        root = p.expr()
    except RecursionError:
        raise TemplateSyntaxError("expression nested too deeply", *end) from None
    if p.i < len(toks):
        _, val, ln, col = toks[p.i]
        raise TemplateSyntaxError(f"trailing input {val!r}", ln, col)
    try:
        return PolicyTemplate(root, tuple(slots.values()))
    except MalformedTemplate:
        raise
    except RecursionError:
        raise DepthLimit("expression nested too deeply") from None


def print_expr(e: Expr, indent: int = 0) -> str:
    flat = _flat(e)
    if indent + len(flat) <= LINE_WIDTH or not isinstance(e, (Unary, Binary, If, ArgFold)):
        return flat
    head = e.op if isinstance(e, (Unary, Binary)) else "if" if isinstance(e, If) else "argfold"
    pad = " " * (indent + 2)
    parts = [pad + print_expr(k, indent + 2) for k in children(e)]
    return f"({head}\n" + "\n".join(parts) + ")"


def _flat(e: Expr) -> str:
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, BoolConst):
        return "true" if e.value else "false"
    if isinstance(e, Acc):
        return "acc"
    if isinstance(e, Param):
        return f"(param {e.name})"
    if isinstance(e, Feat):
        return f"(feat {e.name})"
    if isinstance(e, ArgFeat):
        return f"(arg {e.name})"
    if isinstance(e, Unary):
        return f"({e.op} {_flat(e.x)})"
    if isinstance(e, Binary):
        return f"({e.op} {_flat(e.a)} {_flat(e.b)})"
    if isinstance(e, If):
        return f"(if {_flat(e.cond)} {_flat(e.then)} {_flat(e.other)})"
    if isinstance(e, ArgFold):
        return f"(argfold {_flat(e.init)} {_flat(e.step)})"
    raise MalformedTemplate(f"not an expression: {e!r}")


def print_template(t: PolicyTemplate) -> str:
    lines = []
    for s in t.slots:
        lines.append(f"[hyperparam]: {s.name}, int, {s.lo}, {s.hi}")
        lines.append(f"[init]: {s.name}, {s.default}")
    lines.append(BLOCK_START)
    lines.append(print_expr(t.root))
    lines.append(BLOCK_END)
    return "\n".join(lines) + "\n"


def canonical(text: str) -> str:
    return print_template(parse_template(text))
