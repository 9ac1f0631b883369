"""Textual firmware IR: types, instructions, parser, validator and serializer.

A firmware file is line oriented.  Header directives (``modes``, ``modeid``,
``entry``, ``switcher``, ``record``, ``global``) may appear anywhere at top
level; functions are written as ``fn NAME(params) -> type { ... }`` with one
instruction per line.  ``#`` starts a comment.

Function names are the identities used everywhere else in the toolkit; there
is no separate address layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class FirmwareError(Exception):
    """Base class for IR errors.  ``line``/``col`` are 1-based, 0 if unknown."""

    kind = "error"

    def __init__(self, message: str, line: int = 0, col: int = 0, diagnostics=None):
        self.message = message
        self.line = line
        self.col = col
        self.diagnostics = list(diagnostics or [])
        loc = f"{line}:{col}: " if line else ""
        super().__init__(f"{loc}{self.kind}: {message}")


class IRSyntaxError(FirmwareError):
    kind = "SyntaxError"


class IRResolutionError(FirmwareError):
    kind = "ResolutionError"


class IRTypeError(FirmwareError):
    kind = "TypeError"


class InvalidModule(FirmwareError):
    kind = "InvalidModule"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prim:
    name: str  # void | int | float | bool

    def __str__(self) -> str:
        return self.name


VOID = Prim("void")
INT = Prim("int")
FLOAT = Prim("float")
BOOL = Prim("bool")
_PRIMS = {p.name: p for p in (VOID, INT, FLOAT, BOOL)}


@dataclass(frozen=True)
class Signature:
    params: tuple
    ret: "TypeDesc"

    def __str__(self) -> str:
        return f"({','.join(str(p) for p in self.params)})->{self.ret}"


@dataclass(frozen=True)
class FuncRef:
    sig: Signature

    def __str__(self) -> str:
        return f"fnref{self.sig}"


@dataclass(frozen=True)
class RecordType:
    name: str
    fields: tuple  # ((field name, TypeDesc), ...)

    def __str__(self) -> str:
        return self.name

    def field_type(self, name: str):
        for fname, ftype in self.fields:
            if fname == name:
                return ftype
        return None


TypeDesc = Union[Prim, FuncRef, RecordType]

MAX_RETURN_NESTING = 2


def return_nesting(sig: Signature) -> int:
    """Number of FuncRef levels along the return chain of ``sig``."""
    depth = 0
    t = sig.ret
    while isinstance(t, FuncRef):
        depth += 1
        t = t.sig.ret
    return depth


def iter_signatures(t) -> Iterator[Signature]:
    if isinstance(t, Signature):
        yield t
        for p in t.params:
            yield from iter_signatures(p)
        yield from iter_signatures(t.ret)
    elif isinstance(t, FuncRef):
        yield from iter_signatures(t.sig)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    dst: str
    src: str


@dataclass(frozen=True)
class AddrOf:
    dst: str
    func: str


@dataclass(frozen=True)
class FieldStore:
    base: str
    field: str
    src: str


@dataclass(frozen=True)
class FieldLoad:
    dst: str
    base: str
    field: str


@dataclass(frozen=True)
class CallDirect:
    callee: str
    args: tuple = ()
    dst: str | None = None


@dataclass(frozen=True)
class CallIndirect:
    ref: str
    args: tuple
    dst: str | None
    declared: Signature


@dataclass(frozen=True)
class Return:
    value: str | None = None


@dataclass(frozen=True)
class SetMode:
    mode_var: str


@dataclass(frozen=True)
class Effect:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class CondGoto:
    cond: str
    label: str


@dataclass(frozen=True)
class Goto:
    label: str


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class ConstInt:
    dst: str
    value: int


@dataclass(frozen=True)
class Eq:
    """``%c = eq %a, %b``: bool result, used to feed ``ifgoto``."""

    dst: str
    lhs: str
    rhs: str


@dataclass(frozen=True)
class Input:
    """``%x = input NAME``: reads a mission-controlled input register."""

    dst: str
    name: str


# instrumentation-only kinds


@dataclass(frozen=True)
class TrampolineModeEntry:
    new_mode_var: str


@dataclass(frozen=True)
class TrampolineLogFn:
    func: str


@dataclass(frozen=True)
class MonitoredCall:
    ref: str
    args: tuple
    dst: str | None
    declared: Signature


@dataclass(frozen=True)
class MonitoredReturn:
    value: str | None = None


MARKER_KINDS = (TrampolineModeEntry, TrampolineLogFn, MonitoredCall, MonitoredReturn)
INDIRECT_CALLS = (CallIndirect, MonitoredCall)
RETURNS = (Return, MonitoredReturn)

Instruction = Union[
    Assign, AddrOf, FieldStore, FieldLoad, CallDirect, CallIndirect, Return, SetMode,
    Effect, CondGoto, Goto, Label, ConstInt, Eq, Input,
    TrampolineModeEntry, TrampolineLogFn, MonitoredCall, MonitoredReturn,
]


def uses(inst) -> tuple:
    """Variables read by ``inst`` (global record bases excluded)."""
    if isinstance(inst, Assign):
        return (inst.src,)
    if isinstance(inst, FieldStore):
        return (inst.src,)
    if isinstance(inst, CallDirect):
        return tuple(inst.args)
    if isinstance(inst, INDIRECT_CALLS):
        return (inst.ref, *inst.args)
    if isinstance(inst, RETURNS):
        return (inst.value,) if inst.value else ()
    if isinstance(inst, SetMode):
        return (inst.mode_var,)
    if isinstance(inst, Effect):
        return tuple(inst.args)
    if isinstance(inst, CondGoto):
        return (inst.cond,)
    if isinstance(inst, Eq):
        return (inst.lhs, inst.rhs)
    if isinstance(inst, TrampolineModeEntry):
        return (inst.new_mode_var,)
    return ()


def defines(inst) -> str | None:
    if isinstance(inst, (Assign, AddrOf, FieldLoad, ConstInt, Eq, Input)):
        return inst.dst
    if isinstance(inst, (CallDirect, CallIndirect, MonitoredCall)):
        return inst.dst
    return None


# ---------------------------------------------------------------------------
# Functions and modules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple  # ((var, TypeDesc), ...)
    ret: TypeDesc
    body: tuple
    locals: dict = field(default_factory=dict)  # var -> TypeDesc, params excluded
    is_mode_switcher: bool = False
    line: int = field(default=0, compare=False)

    @property
    def signature(self) -> Signature:
        return Signature(tuple(t for _, t in self.params), self.ret)

    @property
    def param_names(self) -> tuple:
        return tuple(n for n, _ in self.params)

    def var_type(self, var: str):
        for n, t in self.params:
            if n == var:
                return t
        return self.locals.get(var)


@dataclass(frozen=True)
class FirmwareModule:
    functions: dict  # name -> FunctionDef, in declaration order
    entry: str
    mode_switchers: frozenset
    mode_names: tuple
    mode_ids: dict  # int -> mode name
    records: dict = field(default_factory=dict)  # name -> RecordType
    globals: dict = field(default_factory=dict)  # %name -> record name
    name: str = field(default="firmware", compare=False)

    def mode_id(self, mode: str) -> int:
        for k, v in self.mode_ids.items():
            if v == mode:
                return k
        raise KeyError(mode)

    def global_field_type(self, base: str, fname: str):
        rec = self.records.get(self.globals.get(base, ""))
        return rec.field_type(fname) if rec else None

    def is_instrumented(self) -> bool:
        return any(isinstance(i, MARKER_KINDS) for f in self.functions.values() for i in f.body)


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<var>%[A-Za-z_]\w*)|(?P<int>-?\d+)"
    r"|(?P<ident>[A-Za-z_]\w*)|(?P<punct>[(){}:,=.]))"
)
_IDENT = re.compile(r"[A-Za-z_]\w*\Z")
_MODE_NAME = re.compile(r"[A-Z][A-Z0-9_]*\Z")
RESERVED_MODES = frozenset({"INIT"})


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, lineno: int) -> list:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise IRSyntaxError(f"unexpected character {text[col - 1]!r}", lineno, col)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    return toks


class _Line:
    """Cursor over the tokens of one source line."""

    def __init__(self, toks, lineno, raw):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.raw = raw

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at_end(self) -> bool:
        return self.i >= len(self.toks)

    def col(self) -> int:
        t = self.peek()
        return t.col if t else len(self.raw.rstrip()) + 1

    def error(self, msg: str, cls=IRSyntaxError):
        return cls(msg, self.lineno, self.col())

    def take(self, kind: str, text: str | None = None) -> _Tok:
        t = self.peek()
        if t is None or t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text if t else "end of line"
            raise self.error(f"expected {want}, got {got}")
        self.i += 1
        return t

    def accept(self, kind: str, text: str | None = None):
        t = self.peek()
        if t is not None and t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def done(self):
        if not self.at_end():
            raise self.error(f"unexpected trailing {self.peek().text!r}")


def _strip_comment(line: str) -> str:
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


@dataclass
class _RawFunction:
    name: str
    params: list
    ret: object
    lines: list  # [(_Line)]
    line: int


class _Parser:
    def __init__(self, text: str, name: str):
        self.text = text
        self.name = name
        self.modes: list | None = None
        self.mode_ids: dict = {}
        self.entry: str | None = None
        self.entry_line = 0
        self.switchers: list = []
        self.records: dict = {}
        self.record_lines: dict = {}
        self.globals: dict = {}
        self.raw_functions: list = []

    # -- types ------------------------------------------------------------
    def parse_type(self, ln: _Line):
        t = ln.peek()
        if t is None or t.kind != "ident":
            raise ln.error("expected a type")
        if t.text == "fnref":
            ln.take("ident")
            return FuncRef(self.parse_sig(ln))
        ln.take("ident")
        if t.text in _PRIMS:
            return _PRIMS[t.text]
        if t.text in self.records:
            return self.records[t.text]
        raise IRResolutionError(f"unknown type {t.text!r}", ln.lineno, t.col)

    def parse_sig(self, ln: _Line) -> Signature:
        ln.take("punct", "(")
        params = []
        if not ln.accept("punct", ")"):
            while True:
                params.append(self.parse_type(ln))
                if ln.accept("punct", ")"):
                    break
                ln.take("punct", ",")
        ln.take("arrow")
        ret = self.parse_type(ln)
        sig = Signature(tuple(params), ret)
        self.check_sig(sig, ln)
        return sig

    def check_sig(self, sig: Signature, ln: _Line):
        for s in iter_signatures(sig):
            if any(p == VOID for p in s.params):
                raise IRTypeError("void parameter type", ln.lineno, ln.col())
            if return_nesting(s) > MAX_RETURN_NESTING:
                raise IRTypeError("fnref return nested more than 2 deep", ln.lineno, ln.col())

    # -- top level --------------------------------------------------------
    def run(self) -> FirmwareModule:
        lines = self.text.splitlines()
        i = 0
        while i < len(lines):
            lineno = i + 1
            raw = _strip_comment(lines[i])
            i += 1
            toks = _tokenize(raw, lineno)
            if not toks:
                continue
            ln = _Line(toks, lineno, raw)
            head = ln.peek()
            if head.kind != "ident":
                raise ln.error(f"unexpected {head.text!r} at top level")
            word = head.text
            if word == "modes":
                self.parse_modes(ln, raw)
            elif word == "modeid":
                ln.take("ident")
                num = int(ln.take("int").text)
                mode = ln.take("ident").text
                ln.done()
                if num in self.mode_ids:
                    raise IRTypeError(f"duplicate modeid {num}", lineno, head.col)
                self.mode_ids[num] = mode
            elif word == "entry":
                ln.take("ident")
                self.entry = ln.take("ident").text
                self.entry_line = lineno
                ln.done()
            elif word == "switcher":
                ln.take("ident")
                self.switchers.append((ln.take("ident").text, lineno))
                ln.done()
            elif word == "record":
                self.parse_record(ln)
            elif word == "global":
                ln.take("ident")
                gname = ln.take("var").text
                ln.take("punct", ":")
                rt = ln.take("ident")
                if rt.text not in self.records:
                    raise IRResolutionError(f"unknown record {rt.text!r}", lineno, rt.col)
                ln.done()
                if gname in self.globals:
                    raise IRTypeError(f"duplicate global {gname}", lineno, head.col)
                self.globals[gname] = rt.text
            elif word == "fn":
                i = self.parse_function(ln, lines, i)
            else:
                raise ln.error(f"unknown directive {word!r}")
        return self.finish()

    def parse_modes(self, ln: _Line, raw: str):
        ln.take("ident")
        names = []
        while True:
            t = ln.take("ident")
            names.append(t.text)
            if ln.at_end():
                break
            ln.take("punct", ",")
        if self.modes is not None:
            raise IRSyntaxError("duplicate modes directive", ln.lineno, 1)
        self.modes = names

    def parse_record(self, ln: _Line):
        ln.take("ident")
        name = ln.take("ident").text
        if name in self.records or name in _PRIMS or name == "fnref":
            raise IRTypeError(f"duplicate or reserved record name {name!r}", ln.lineno, ln.col())
        ln.take("punct", "{")
        fields = []
        seen = set()
        if not ln.accept("punct", "}"):
            while True:
                ftok = ln.take("ident")
                if ftok.text in seen:
                    raise IRTypeError(f"duplicate field {ftok.text!r} in record {name}", ln.lineno, ftok.col)
                seen.add(ftok.text)
                ln.take("punct", ":")
                ftype = self.parse_type(ln)
                if ftype == VOID:
                    raise IRTypeError("void record field", ln.lineno, ftok.col)
                fields.append((ftok.text, ftype))
                if ln.accept("punct", "}"):
                    break
                ln.take("punct", ",")
        ln.done()
        self.records[name] = RecordType(name, tuple(fields))

    def parse_function(self, ln: _Line, lines: list, i: int) -> int:
        start = ln.lineno
        ln.take("ident", "fn")
        name = ln.take("ident").text
        ln.take("punct", "(")
        params = []
        if not ln.accept("punct", ")"):
            while True:
                v = ln.take("var")
                ln.take("punct", ":")
                t = self.parse_type(ln)
                if t == VOID:
                    raise IRTypeError("void parameter type", ln.lineno, v.col)
                if isinstance(t, RecordType):
                    raise IRTypeError("record-typed parameters are not supported", ln.lineno, v.col)
                params.append((v.text, t))
                if ln.accept("punct", ")"):
                    break
                ln.take("punct", ",")
        ln.take("arrow")
        ret = self.parse_type(ln)
        if isinstance(ret, RecordType):
            raise IRTypeError("record-typed returns are not supported", ln.lineno, ln.col())
        self.check_sig(Signature(tuple(t for _, t in params), ret), ln)
        ln.take("punct", "{")
        ln.done()
        body_lines = []
        while True:
            if i >= len(lines):
                raise IRSyntaxError(f"unterminated function {name}", start, 1)
            lineno = i + 1
            raw = _strip_comment(lines[i])
            i += 1
            toks = _tokenize(raw, lineno)
            if not toks:
                continue
            if len(toks) == 1 and toks[0].text == "}":
                break
            body_lines.append(_Line(toks, lineno, raw))
        self.raw_functions.append(_RawFunction(name, params, ret, body_lines, start))
        return i

    # -- resolution -------------------------------------------------------
    def finish(self) -> FirmwareModule:
        sigs = {}
        for rf in self.raw_functions:
            if rf.name in sigs:
                raise IRResolutionError(f"duplicate function {rf.name!r}", rf.line, 1)
            sigs[rf.name] = Signature(tuple(t for _, t in rf.params), rf.ret)
        switchers = {n for n, _ in self.switchers}
        for n, lineno in self.switchers:
            if n not in sigs:
                raise IRResolutionError(f"unknown switcher function {n!r}", lineno, 1)
        functions = {}
        for rf in self.raw_functions:
            functions[rf.name] = self.build_function(rf, sigs, rf.name in switchers)
        if self.modes is None:
            raise IRSyntaxError("missing modes directive", 1, 1)
        if self.entry is None:
            raise IRSyntaxError("missing entry directive", 1, 1)
        if self.entry not in functions:
            raise IRResolutionError(f"unknown entry function {self.entry!r}", self.entry_line, 1)
        mode_ids = dict(self.mode_ids) if self.mode_ids else {i: m for i, m in enumerate(self.modes)}
        module = FirmwareModule(
            functions=functions,
            entry=self.entry,
            mode_switchers=frozenset(switchers),
            mode_names=tuple(self.modes),
            mode_ids=mode_ids,
            records=dict(self.records),
            globals=dict(self.globals),
            name=self.name,
        )
        diags = validate(module)
        if diags:
            first = diags[0]
            raise IRTypeError(first.message, first.line, first.col, diagnostics=diags)
        return module

    def build_function(self, rf: _RawFunction, sigs: dict, is_switcher: bool) -> FunctionDef:
        env = dict(rf.params)
        local_types: dict = {}
        body = []
        labels = set()
        for ln in rf.lines:
            if ln.peek().text == "label":
                labels.add(ln.peek(1).text if ln.peek(1) else "")

        def vtype(tok: _Tok):
            if tok.text in self.globals:
                raise IRTypeError(f"global {tok.text} used as a value", ln.lineno, tok.col)
            if tok.text not in env:
                raise IRResolutionError(f"unknown variable {tok.text}", ln.lineno, tok.col)
            return env[tok.text]

        def define(tok: _Tok, t):
            if tok.text in self.globals:
                raise IRTypeError(f"cannot assign global {tok.text}", ln.lineno, tok.col)
            if t == VOID:
                raise IRTypeError(f"cannot bind void result to {tok.text}", ln.lineno, tok.col)
            old = env.get(tok.text)
            if old is not None and old != t:
                raise IRTypeError(f"{tok.text} redefined with type {t}, was {old}", ln.lineno, tok.col)
            if old is None:
                env[tok.text] = t
                local_types[tok.text] = t

        def field_of(ln: _Line):
            base = ln.take("var")
            ln.take("punct", ".")
            fld = ln.take("ident")
            if base.text not in self.globals:
                raise IRResolutionError(f"unknown global {base.text}", ln.lineno, base.col)
            ft = self.records[self.globals[base.text]].field_type(fld.text)
            if ft is None:
                raise IRResolutionError(f"record {self.globals[base.text]} has no field {fld.text}", ln.lineno, fld.col)
            return base.text, fld.text, ft

        def arglist(ln: _Line):
            ln.take("punct", "(")
            args = []
            if not ln.accept("punct", ")"):
                while True:
                    args.append(ln.take("var"))
                    if ln.accept("punct", ")"):
                        break
                    ln.take("punct", ",")
            return args

        def check_args(args, params, what, col):
            if len(args) != len(params):
                raise IRTypeError(f"{what} expects {len(params)} arguments, got {len(args)}", ln.lineno, col)
            for a, p in zip(args, params):
                if vtype(a) != p:
                    raise IRTypeError(f"argument {a.text} has type {vtype(a)}, expected {p}", ln.lineno, a.col)

        def direct_call(ln: _Line, dst):
            ctok = ln.take("ident")
            if ctok.text not in sigs:
                raise IRResolutionError(f"unknown function {ctok.text!r}", ln.lineno, ctok.col)
            sig = sigs[ctok.text]
            args = arglist(ln)
            ln.done()
            check_args(args, sig.params, ctok.text, ctok.col)
            if dst is not None:
                if sig.ret == VOID:
                    raise IRTypeError(f"{ctok.text} returns void", ln.lineno, ctok.col)
                define(dst, sig.ret)
            return CallDirect(ctok.text, tuple(a.text for a in args), dst.text if dst else None)

        def indirect_call(ln: _Line, dst, cls):
            ref = ln.take("var")
            rt = vtype(ref)
            args = arglist(ln)
            ln.take("punct", ":")
            declared = self.parse_sig(ln)
            ln.done()
            if not isinstance(rt, FuncRef):
                raise IRTypeError(f"indirect call through {ref.text} of non-fnref type {rt}", ln.lineno, ref.col)
            if rt.sig != declared:
                raise IRTypeError(f"declared signature {declared} does not match {ref.text}: {rt}", ln.lineno, ref.col)
            check_args(args, declared.params, ref.text, ref.col)
            if dst is not None:
                if declared.ret == VOID:
                    raise IRTypeError("indirect call result bound but declared return is void", ln.lineno, ref.col)
                define(dst, declared.ret)
            return cls(ref.text, tuple(a.text for a in args), dst.text if dst else None, declared)

        def ret(ln: _Line, cls):
            v = ln.accept("var")
            ln.done()
            if v is None:
                if rf.ret != VOID:
                    raise IRTypeError(f"ret without value in function returning {rf.ret}", ln.lineno, 1)
                return cls(None)
            if rf.ret == VOID:
                raise IRTypeError("ret with value in void function", ln.lineno, v.col)
            if vtype(v) != rf.ret:
                raise IRTypeError(f"returning {vtype(v)} from function returning {rf.ret}", ln.lineno, v.col)
            return cls(v.text)

        for ln in rf.lines:
            t0 = ln.peek()
            if t0.kind == "var" and ln.peek(1) is not None and ln.peek(1).text == ".":
                base, fname, ft = field_of(ln)
                ln.take("punct", "=")
                src = ln.take("var")
                ln.done()
                st = vtype(src)
                if st != ft and not (isinstance(st, FuncRef) and isinstance(ft, FuncRef)):
                    raise IRTypeError(f"cannot store {st} into field {fname}: {ft}", ln.lineno, src.col)
                body.append(FieldStore(base, fname, src.text))
                continue
            if t0.kind == "var":
                dst = ln.take("var")
                ln.take("punct", "=")
                t1 = ln.peek()
                if t1 is None:
                    raise ln.error("expected right-hand side")
                if t1.kind == "var" and ln.peek(1) is not None and ln.peek(1).text == ".":
                    base, fname, ft = field_of(ln)
                    ln.done()
                    define(dst, ft)
                    body.append(FieldLoad(dst.text, base, fname))
                elif t1.kind == "var":
                    src = ln.take("var")
                    ln.done()
                    define(dst, vtype(src))
                    body.append(Assign(dst.text, src.text))
                elif t1.kind == "ident" and t1.text == "const":
                    ln.take("ident")
                    val = ln.take("int")
                    ln.done()
                    define(dst, INT)
                    body.append(ConstInt(dst.text, int(val.text)))
                elif t1.kind == "ident" and t1.text == "addrof":
                    ln.take("ident")
                    ftok = ln.take("ident")
                    ln.done()
                    if ftok.text not in sigs:
                        raise IRResolutionError(f"unknown function {ftok.text!r}", ln.lineno, ftok.col)
                    define(dst, FuncRef(sigs[ftok.text]))
                    body.append(AddrOf(dst.text, ftok.text))
                elif t1.kind == "ident" and t1.text == "call":
                    ln.take("ident")
                    body.append(direct_call(ln, dst))
                elif t1.kind == "ident" and t1.text in ("icall", "mcall"):
                    ln.take("ident")
                    body.append(indirect_call(ln, dst, CallIndirect if t1.text == "icall" else MonitoredCall))
                elif t1.kind == "ident" and t1.text == "eq":
                    ln.take("ident")
                    a = ln.take("var")
                    ln.take("punct", ",")
                    b = ln.take("var")
                    ln.done()
                    if vtype(a) != vtype(b):
                        raise IRTypeError(f"eq operands differ: {vtype(a)} vs {vtype(b)}", ln.lineno, b.col)
                    define(dst, BOOL)
                    body.append(Eq(dst.text, a.text, b.text))
                elif t1.kind == "ident" and t1.text == "input":
                    ln.take("ident")
                    name = ln.take("ident")
                    ln.done()
                    define(dst, INT)
                    body.append(Input(dst.text, name.text))
                else:
                    raise ln.error(f"unknown right-hand side {t1.text!r}")
                continue
            if t0.kind != "ident":
                raise ln.error(f"unexpected {t0.text!r}")
            word = ln.take("ident").text
            if word == "call":
                body.append(direct_call(ln, None))
            elif word in ("icall", "mcall"):
                body.append(indirect_call(ln, None, CallIndirect if word == "icall" else MonitoredCall))
            elif word == "ret":
                body.append(ret(ln, Return))
            elif word == "mret":
                body.append(ret(ln, MonitoredReturn))
            elif word == "setmode":
                v = ln.take("var")
                ln.done()
                if vtype(v) != INT:
                    raise IRTypeError(f"setmode operand {v.text} must be int", ln.lineno, v.col)
                body.append(SetMode(v.text))
            elif word == "trampoline_mode":
                v = ln.take("var")
                ln.done()
                if vtype(v) != INT:
                    raise IRTypeError(f"trampoline_mode operand {v.text} must be int", ln.lineno, v.col)
                body.append(TrampolineModeEntry(v.text))
            elif word == "logfn":
                f = ln.take("ident")
                ln.done()
                if f.text not in sigs:
                    raise IRResolutionError(f"unknown function {f.text!r}", ln.lineno, f.col)
                body.append(TrampolineLogFn(f.text))
            elif word == "effect":
                name = ln.take("ident").text
                args = arglist(ln)
                ln.done()
                for a in args:
                    vtype(a)
                body.append(Effect(name, tuple(a.text for a in args)))
            elif word == "label":
                name = ln.take("ident").text
                ln.done()
                body.append(Label(name))
            elif word == "goto":
                lt = ln.take("ident")
                ln.done()
                if lt.text not in labels:
                    raise IRResolutionError(f"unknown label {lt.text!r}", ln.lineno, lt.col)
                body.append(Goto(lt.text))
            elif word == "ifgoto":
                c = ln.take("var")
                lt = ln.take("ident")
                ln.done()
                if vtype(c) not in (BOOL, INT):
                    raise IRTypeError(f"ifgoto condition {c.text} must be bool or int", ln.lineno, c.col)
                if lt.text not in labels:
                    raise IRResolutionError(f"unknown label {lt.text!r}", ln.lineno, lt.col)
                body.append(CondGoto(c.text, lt.text))
            else:
                raise IRSyntaxError(f"unknown instruction {word!r}", ln.lineno, t0.col)
        return FunctionDef(
            name=rf.name,
            params=tuple(rf.params),
            ret=rf.ret,
            body=tuple(body),
            locals=local_types,
            is_mode_switcher=is_switcher,
            line=rf.line,
        )


def parse_firmware(text: str, name: str = "firmware") -> FirmwareModule:
    """Parse IR text into a validated :class:`FirmwareModule`.

    Raises :class:`IRSyntaxError`, :class:`IRResolutionError` or
    :class:`IRTypeError`, each carrying ``line`` and ``col``.
    """
    return _Parser(text, name).run()


def load_firmware(path) -> FirmwareModule:
    from pathlib import Path

    p = Path(path)
    return parse_firmware(p.read_text(encoding="utf-8"), name=p.name.split(".")[0])


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    message: str
    function: str | None = None
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        where = f" [{self.function}]" if self.function else ""
        loc = f"{self.line}:{self.col}: " if self.line else ""
        return f"{loc}{self.message}{where}"


def _falls_through(body: tuple) -> bool:
    """True if some path from the first instruction runs off the end."""
    if not body:
        return True
    labels = {inst.name: i for i, inst in enumerate(body) if isinstance(inst, Label)}
    seen = set()
    stack = [0]
    while stack:
        pc = stack.pop()
        if pc in seen:
            continue
        seen.add(pc)
        if pc >= len(body):
            return True
        inst = body[pc]
        if isinstance(inst, RETURNS):
            continue
        if isinstance(inst, Goto):
            if inst.label in labels:
                stack.append(labels[inst.label])
            continue
        if isinstance(inst, CondGoto) and inst.label in labels:
            stack.append(labels[inst.label])
        stack.append(pc + 1)
    return False


def validate(module: FirmwareModule) -> list:
    """Return diagnostics for every violated invariant; empty iff the module is valid."""
    diags: list = []

    def add(msg, fn=None):
        line = module.functions[fn].line if fn in module.functions else 0
        diags.append(Diagnostic(msg, fn, line, 1 if line else 0))

    # module header
    if not module.mode_names:
        add("mode list must be non-empty")
    if len(set(module.mode_names)) != len(module.mode_names):
        add("mode names must be unique")
    for m in module.mode_names:
        if not _MODE_NAME.match(m):
            add(f"mode name {m!r} must be an upper-case identifier")
        if m in RESERVED_MODES:
            add(f"mode name {m!r} is reserved for the boot mode")
    if sorted(module.mode_ids.values()) != sorted(module.mode_names) or len(module.mode_ids) != len(module.mode_names):
        add("modeid table must be a bijection onto the mode names")
    if module.entry not in module.functions:
        add(f"entry function {module.entry!r} does not exist")
    elif module.entry in module.mode_switchers:
        add("entry must not be a mode-switcher", module.entry)
    for s in sorted(module.mode_switchers):
        if s not in module.functions:
            add(f"mode-switcher {s!r} does not exist")
        elif not module.functions[s].is_mode_switcher:
            add(f"mode-switcher {s!r} is not flagged as a switcher", s)
    for rname, rec in module.records.items():
        names = [f for f, _ in rec.fields]
        if len(set(names)) != len(names):
            add(f"record {rname} has duplicate field names")
    for g, rname in module.globals.items():
        if rname not in module.records:
            add(f"global {g} has unknown record type {rname}")

    for fname, fn in module.functions.items():
        if fname != fn.name:
            add(f"function key {fname!r} does not match its name {fn.name!r}", fname)
        if fn.is_mode_switcher and fname not in module.mode_switchers:
            add("function flagged as switcher but not declared by a switcher directive", fname)
        for sig in iter_signatures(fn.signature):
            if any(p == VOID for p in sig.params):
                add("signature contains a void parameter", fname)
            if return_nesting(sig) > MAX_RETURN_NESTING:
                add("fnref return nested more than 2 deep", fname)
        if not fn.body:
            add("function body is empty", fname)
            continue
        if _falls_through(fn.body):
            add("control path falls through without a return", fname)
        pnames = set(fn.param_names)
        known = pnames | set(fn.locals)
        labels = {i.name for i in fn.body if isinstance(i, Label)}
        has_setmode = False
        for inst in fn.body:
            for v in uses(inst):
                if v not in known:
                    add(f"variable {v} is not declared", fname)
            d = defines(inst)
            if d is not None and d not in known:
                add(f"variable {d} is not declared", fname)
            if isinstance(inst, (Goto, CondGoto)) and inst.label not in labels:
                add(f"jump to unknown label {inst.label!r}", fname)
            if isinstance(inst, (AddrOf,)) and inst.func not in module.functions:
                add(f"addrof names undeclared function {inst.func!r}", fname)
            if isinstance(inst, TrampolineLogFn) and inst.func not in module.functions:
                add(f"logfn names undeclared function {inst.func!r}", fname)
            if isinstance(inst, CallDirect):
                callee = module.functions.get(inst.callee)
                if callee is None:
                    add(f"call to undeclared function {inst.callee!r}", fname)
                elif len(callee.params) != len(inst.args):
                    add(f"call to {inst.callee} has wrong arity", fname)
                elif inst.dst is not None and callee.ret == VOID:
                    add(f"result bound from void function {inst.callee}", fname)
            if isinstance(inst, INDIRECT_CALLS):
                rt = fn.var_type(inst.ref)
                if rt is not None and not isinstance(rt, FuncRef):
                    add(f"indirect call through non-fnref variable {inst.ref}", fname)
                elif rt is not None and rt.sig != inst.declared:
                    add(f"declared signature of indirect call differs from type of {inst.ref}", fname)
                if len(inst.args) != len(inst.declared.params):
                    add("indirect call arity differs from its declared signature", fname)
                if inst.dst is not None and inst.declared.ret == VOID:
                    add("indirect call binds a result but declares void", fname)
            if isinstance(inst, FieldStore) or isinstance(inst, FieldLoad):
                if module.global_field_type(inst.base, inst.field) is None:
                    add(f"unknown field {inst.base}.{inst.field}", fname)
            if isinstance(inst, RETURNS):
                if (inst.value is None) != (fn.ret == VOID):
                    add("return value presence does not match the return type", fname)
            if isinstance(inst, SetMode):
                has_setmode = True
            if isinstance(inst, TrampolineModeEntry) and not fn.is_mode_switcher:
                add("mode-entry trampoline outside a mode-switcher", fname)
        if fn.is_mode_switcher and not has_setmode:
            add("mode-switcher contains no setmode", fname)
        if not fn.is_mode_switcher and has_setmode:
            add("setmode outside a mode-switcher", fname)
    return diags


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _args(args: Iterable[str]) -> str:
    return "(" + ", ".join(args) + ")"


def format_instruction(inst) -> str:
    if isinstance(inst, Assign):
        return f"{inst.dst} = {inst.src}"
    if isinstance(inst, AddrOf):
        return f"{inst.dst} = addrof {inst.func}"
    if isinstance(inst, FieldStore):
        return f"{inst.base}.{inst.field} = {inst.src}"
    if isinstance(inst, FieldLoad):
        return f"{inst.dst} = {inst.base}.{inst.field}"
    if isinstance(inst, CallDirect):
        s = f"call {inst.callee}{_args(inst.args)}"
        return f"{inst.dst} = {s}" if inst.dst else s
    if isinstance(inst, INDIRECT_CALLS):
        op = "icall" if isinstance(inst, CallIndirect) else "mcall"
        s = f"{op} {inst.ref}{_args(inst.args)} : {inst.declared}"
        return f"{inst.dst} = {s}" if inst.dst else s
    if isinstance(inst, RETURNS):
        op = "ret" if isinstance(inst, Return) else "mret"
        return f"{op} {inst.value}" if inst.value else op
    if isinstance(inst, SetMode):
        return f"setmode {inst.mode_var}"
    if isinstance(inst, Effect):
        return f"effect {inst.name}{_args(inst.args)}"
    if isinstance(inst, CondGoto):
        return f"ifgoto {inst.cond} {inst.label}"
    if isinstance(inst, Goto):
        return f"goto {inst.label}"
    if isinstance(inst, Label):
        return f"label {inst.name}"
    if isinstance(inst, ConstInt):
        return f"{inst.dst} = const {inst.value}"
    if isinstance(inst, Eq):
        return f"{inst.dst} = eq {inst.lhs}, {inst.rhs}"
    if isinstance(inst, Input):
        return f"{inst.dst} = input {inst.name}"
    if isinstance(inst, TrampolineModeEntry):
        return f"trampoline_mode {inst.new_mode_var}"
    if isinstance(inst, TrampolineLogFn):
        return f"logfn {inst.func}"
    raise TypeError(f"unknown instruction {inst!r}")


def serialize_firmware(module: FirmwareModule) -> str:
    """Canonical text for ``module``; raises :class:`InvalidModule` if it does not validate."""
    diags = validate(module)
    if diags:
        raise InvalidModule(str(diags[0]), diagnostics=diags)
    out = [f"modes {','.join(module.mode_names)}"]
    for num in sorted(module.mode_ids):
        out.append(f"modeid {num} {module.mode_ids[num]}")
    out.append(f"entry {module.entry}")
    for s in sorted(module.mode_switchers):
        out.append(f"switcher {s}")
    for rec in module.records.values():
        fields = ", ".join(f"{n}: {t}" for n, t in rec.fields)
        out.append(f"record {rec.name} {{ {fields} }}" if fields else f"record {rec.name} {{ }}")
    for g, r in module.globals.items():
        out.append(f"global {g} : {r}")
    for fn in module.functions.values():
        out.append("")
        params = ", ".join(f"{n}: {t}" for n, t in fn.params)
        out.append(f"fn {fn.name}({params}) -> {fn.ret} {{")
        for inst in fn.body:
            indent = "" if isinstance(inst, Label) else "  "
            out.append(f"{indent}{format_instruction(inst)}")
        out.append("}")
    return "\n".join(out) + "\n"


# Helpers used by several analyses


def call_sites(fn: FunctionDef) -> Iterator[tuple]:
    """Yield ``(index, instruction)`` for every call in ``fn``'s body."""
    for idx, inst in enumerate(fn.body):
        if isinstance(inst, (CallDirect, CallIndirect, MonitoredCall)):
            yield idx, inst


def input_names(module: FirmwareModule) -> list:
    names = {i.name for f in module.functions.values() for i in f.body if isinstance(i, Input)}
    return sorted(names)


_ENTRY_ANNOTATION = re.compile(r"#\s*@entry\s+([A-Z][A-Z0-9_]*)\s+([A-Za-z_]\w*)")


def entry_annotations(text: str) -> dict:
    """Read ``# @entry MODE function`` comments from IR source."""
    found: dict = {}
    for m in _ENTRY_ANNOTATION.finditer(text):
        found.setdefault(m.group(1), set()).add(m.group(2))
    return found
