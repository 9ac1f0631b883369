"""Firmware models shipped with the toolkit."""

from __future__ import annotations

from importlib import resources

from ..ir import FirmwareModule, parse_firmware

NAMES = ("toycopter", "aionrover")


def corpus_path(name: str):
    return resources.files(__name__).joinpath(f"{name}.fir")


def corpus_text(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown corpus firmware {name!r}")
    return corpus_path(name).read_text(encoding="utf-8")


def load_corpus(name: str) -> FirmwareModule:
    return parse_firmware(corpus_text(name), name=name)
