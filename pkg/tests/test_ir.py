from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from modeguard.corpus import NAMES, corpus_text, load_corpus
from modeguard.ir import (
    INT,
    VOID,
    CallDirect,
    FuncRef,
    InvalidModule,
    IRResolutionError,
    IRSyntaxError,
    IRTypeError,
    Label,
    Return,
    SetMode,
    Signature,
    entry_annotations,
    parse_firmware,
    serialize_firmware,
    validate,
)

from oracles import random_module

HEADER = "modes GUIDED,RTL,FAILSAFE\nentry main\n"


def test_minimal_module():
    m = parse_firmware("modes A\nentry main\nfn main() -> void {\n  ret\n}\n")
    assert set(m.functions) == {"main"}
    assert m.entry == "main"
    assert m.mode_ids == {0: "A"}


def test_header_transliteration():
    text = HEADER + "switcher set_mode\n" + (
        "fn main() -> void {\n  ret\n}\n"
        "fn set_mode(%m: int) -> void {\n  setmode %m\n  ret\n}\n"
    )
    m = parse_firmware(text)
    assert m.mode_names == ("GUIDED", "RTL", "FAILSAFE")
    assert m.mode_switchers == frozenset({"set_mode"})
    assert m.functions["set_mode"].is_mode_switcher


def test_indirect_call_through_int_is_type_error():
    text = HEADER + "fn main() -> void {\n  %fp = const 1\n  icall %fp() : ()->void\n  ret\n}\n"
    with pytest.raises(IRTypeError) as exc:
        parse_firmware(text)
    assert exc.value.line == 5


@pytest.mark.parametrize(
    "body, err",
    [
        ("  %x = bogus 3\n  ret", IRSyntaxError),
        ("  call nowhere()\n  ret", IRResolutionError),
        ("  goto nolabel\n  ret", IRResolutionError),
        ("  %x = %y\n  ret", IRResolutionError),
        ("  %x = const 1\n  ret %x", IRTypeError),
    ],
)
def test_error_kinds_carry_location(body, err):
    with pytest.raises(err) as exc:
        parse_firmware(HEADER + "fn main() -> void {\n" + body + "\n}\n")
    assert exc.value.line >= 4


def test_return_nesting_bound():
    deep = "fnref()->fnref()->fnref()->int"
    with pytest.raises(IRTypeError):
        parse_firmware(HEADER + f"fn main() -> void {{\n  ret\n}}\nfn f() -> {deep} {{\n  %x = addrof f\n  ret %x\n}}\n")


def test_duplicate_record_field():
    with pytest.raises(IRTypeError):
        parse_firmware(HEADER + "record R { a: int, a: int }\nfn main() -> void {\n  ret\n}\n")


def test_toycopter_validates():
    assert validate(load_corpus("toycopter")) == []


def test_entry_as_switcher_is_diagnosed(toycopter):
    main = toycopter.functions["main"]
    body = (SetMode("%b"),) + main.body
    bad = replace(
        toycopter,
        mode_switchers=toycopter.mode_switchers | {"main"},
        functions={**toycopter.functions, "main": replace(main, body=body, is_mode_switcher=True)},
    )
    msgs = [d.message for d in validate(bad)]
    assert msgs == ["entry must not be a mode-switcher"]


def test_fall_through_is_diagnosed(toycopter):
    fn = toycopter.functions["idle_update"]
    bad = replace(toycopter, functions={**toycopter.functions, "idle_update": replace(fn, body=(Label("x"),))})
    diags = validate(bad)
    assert len(diags) == 1
    assert diags[0].function == "idle_update"


def test_empty_body_cannot_serialize(toycopter):
    fn = toycopter.functions["idle_update"]
    bad = replace(toycopter, functions={**toycopter.functions, "idle_update": replace(fn, body=())})
    with pytest.raises(InvalidModule):
        serialize_firmware(bad)


@pytest.mark.parametrize("name", NAMES)
def test_corpus_round_trip(name):
    m = load_corpus(name)
    again = parse_firmware(serialize_firmware(m), name=name)
    assert again == m
    assert serialize_firmware(again) == serialize_firmware(m)


def test_parse_is_deterministic():
    text = corpus_text("toycopter")
    assert parse_firmware(text) == parse_firmware(text)


def test_entry_annotations_read_from_comments():
    ann = entry_annotations(corpus_text("toycopter"))
    assert ann["GUIDED"] == {"mode_guided_init"}
    assert set(ann) == set(load_corpus("toycopter").mode_names)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_random_module_round_trip(seed):
    m = random_module(seed)
    assert parse_firmware(serialize_firmware(m), name=m.name) == m


# Mutations that each break exactly one invariant of a valid module.


def _mutations(m):
    fname = next(n for n in m.functions if n != m.entry)
    fn = m.functions[fname]
    yield "empty modes", replace(m, mode_names=(), mode_ids={})
    yield "lower-case mode", replace(m, mode_names=("a",), mode_ids={0: "a"})
    yield "reserved mode", replace(m, mode_names=("INIT",), mode_ids={0: "INIT"})
    yield "modeid not bijective", replace(m, mode_ids={0: "A", 1: "A"})
    yield "missing entry", replace(m, entry="nope")
    yield "unknown switcher", replace(m, mode_switchers=frozenset({"nope"}))
    yield "undeclared call", replace(
        m, functions={**m.functions, fname: replace(fn, body=(CallDirect("nope"),) + fn.body)}
    )
    yield "no return", replace(m, functions={**m.functions, fname: replace(fn, body=fn.body[:-1] or (Label("l"),))})
    wrong = Return(None) if fn.ret != VOID else Return("%p0")
    yield "return mismatch", replace(
        m,
        functions={
            **m.functions,
            fname: replace(fn, body=fn.body[:-1] + (wrong,), locals={**fn.locals, "%p0": INT}),
        },
    )
    yield "setmode outside switcher", replace(
        m,
        functions={
            **m.functions,
            fname: replace(fn, body=(SetMode("%k"),) + fn.body, locals={**fn.locals, "%k": INT}),
        },
    )


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_every_mutation_is_diagnosed(seed):
    m = random_module(seed)
    assert validate(m) == []
    for label, bad in _mutations(m):
        assert validate(bad), label


def test_signature_text():
    sig = Signature((INT, FuncRef(Signature((), VOID))), INT)
    assert str(sig) == "(int,fnref()->void)->int"
