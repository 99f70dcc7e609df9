"""Exception hierarchy. Every error carries a stable code string and a CLI exit code."""

from __future__ import annotations


class FoliasimError(Exception):
    code = "E_INTERNAL"
    exit_code = 2


class DegenerateInput(FoliasimError, ValueError):
    code = "E_DEGENERATE_INPUT"
    exit_code = 2


class NonCompactManifold(FoliasimError, ValueError):
    code = "E_NONCOMPACT"
    exit_code = 1


class NumericalBlowup(FoliasimError, ArithmeticError):
    code = "E_BLOWUP"
    exit_code = 2


class RankCollapse(FoliasimError, ArithmeticError):
    code = "E_RANK_COLLAPSE"
    exit_code = 2


class ParseError(FoliasimError, ValueError):
    code = "E_PARSE"
    exit_code = 1

    def __init__(self, text: str, pos: int, expected: str):
        self.text = text
        self.pos = pos
        self.expected = expected
        super().__init__(f"at position {pos}: expected {expected} in {text!r}")


class UnknownScenario(FoliasimError, KeyError):
    code = "E_UNKNOWN_SCENARIO"
    exit_code = 1

    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class BadParams(FoliasimError, ValueError):
    code = "E_BAD_PARAMS"
    exit_code = 1


class ConfigError(FoliasimError, ValueError):
    code = "E_CONFIG"
    exit_code = 1
