"""Reference linter: detection and autofix for eight single-line rules.

Each rule is a token-level approximation of the ESLint rule of the same name,
with default options. The curated fixtures under ``tests/fixtures/oracle`` are
the ground truth for what each rule flags.

Rule semantics:

``eqeqeq``
    Every ``==`` / ``!=`` operator; fixed to ``===`` / ``!==``.
``no-var``
    Every ``var`` keyword; fixed to ``let`` (unconditionally).
``semi``
    The last significant token is an identifier, number, string, ``)`` or
    ``]`` and the line does not open with ``if``, ``for``, ``while``,
    ``function``, ``else``, ``do``, ``try`` or ``switch``; a ``;`` is
    inserted after that token.
``quotes``
    Every single-quoted string without an unescaped ``"`` inside; rewritten
    with double quotes, ``\\'`` unescaped.
``no-floating-decimal``
    Numbers starting or ending with ``.``; a ``0`` is added on that side.
``no-multi-spaces``
    Runs of two or more spaces, except indentation; collapsed to one space.
``no-extra-semi``
    A ``;`` whose previous significant token is also ``;``, outside
    parentheses (``for (;;)`` is exempt); deleted.
``dot-notation``
    ``[`` string ``]`` after an identifier, ``]`` or ``)``, when the string
    is a valid non-keyword identifier; rewritten to ``.name``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable

from mlinter.lexer import KEYWORDS, Token, TokenKind, significant, tokenize

RULES = (
    "eqeqeq",
    "no-var",
    "semi",
    "quotes",
    "no-floating-decimal",
    "no-multi-spaces",
    "no-extra-semi",
    "dot-notation",
)


class UnknownRuleError(ValueError):
    """Raised when a rule id is not one of :data:`RULES`."""


@dataclass(frozen=True)
class ReplacementEdit:
    start_col: int
    end_col: int
    new_text: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_col, self.end_col)


@dataclass(frozen=True)
class Finding:
    rule: str
    start_col: int
    end_col: int
    message: str
    fix: ReplacementEdit

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_col, self.end_col)


def _replace(rule: str, tok: Token, new_text: str, message: str) -> Finding:
    edit = ReplacementEdit(tok.start_col, tok.end_col, new_text)
    return Finding(rule, tok.start_col, tok.end_col, message, edit)


def _eqeqeq(tokens: list[Token]) -> list[Finding]:
    out = []
    for tok in tokens:
        if tok.kind is TokenKind.OPERATOR and tok.text in ("==", "!="):
            fixed = tok.text + "="
            out.append(_replace("eqeqeq", tok, fixed, f"Expected '{fixed}' and instead saw '{tok.text}'."))
    return out


def _no_var(tokens: list[Token]) -> list[Finding]:
    return [
        _replace("no-var", tok, "let", "Unexpected var, use let or const instead.")
        for tok in tokens
        if tok.kind is TokenKind.KEYWORD and tok.text == "var"
    ]


SEMI_EXEMPT_OPENERS = frozenset({"if", "for", "while", "function", "else", "do", "try", "switch"})
_SEMI_ENDINGS = (TokenKind.IDENTIFIER, TokenKind.NUMBER, TokenKind.STRING)


def _semi(tokens: list[Token]) -> list[Finding]:
    sig = significant(tokens)
    if not sig:
        return []
    first, last = sig[0], sig[-1]
    if first.kind is TokenKind.KEYWORD and first.text in SEMI_EXEMPT_OPENERS:
        return []
    if last.kind in _SEMI_ENDINGS or last.is_punct(")") or last.is_punct("]"):
        edit = ReplacementEdit(last.end_col, last.end_col, ";")
        return [Finding("semi", last.start_col, last.end_col, "Missing semicolon.", edit)]
    return []


def _has_unescaped(body: str, char: str) -> bool:
    i = 0
    while i < len(body):
        if body[i] == "\\":
            i += 2
            continue
        if body[i] == char:
            return True
        i += 1
    return False


def _requote(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            pair = body[i : i + 2]
            out.append("'" if pair == "\\'" else pair)
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


def _quotes(tokens: list[Token]) -> list[Finding]:
    out = []
    for tok in tokens:
        if tok.quote_style != "single":
            continue
        body = tok.text[1:-1]
        if _has_unescaped(body, '"'):
            continue
        out.append(_replace("quotes", tok, '"' + _requote(body) + '"', "Strings must use doublequote."))
    return out


def _no_floating_decimal(tokens: list[Token]) -> list[Finding]:
    out = []
    for tok in tokens:
        if tok.kind is not TokenKind.NUMBER:
            continue
        if tok.text.startswith("."):
            out.append(_replace("no-floating-decimal", tok, "0" + tok.text, "A leading decimal point can be confused with a dot."))
        elif tok.text.endswith("."):
            out.append(_replace("no-floating-decimal", tok, tok.text + "0", "A trailing decimal point can be confused with a dot."))
    return out


def _no_multi_spaces(tokens: list[Token]) -> list[Finding]:
    return [
        _replace("no-multi-spaces", tok, " ", "Multiple spaces found.")
        for tok in tokens
        if tok.kind is TokenKind.WHITESPACE
        and tok.start_col > 0
        and len(tok.text) >= 2
        and tok.text.strip(" ") == ""
    ]


def _no_extra_semi(tokens: list[Token]) -> list[Finding]:
    out = []
    depth = 0
    prev: Token | None = None
    for tok in significant(tokens):
        if tok.is_punct("("):
            depth += 1
        elif tok.is_punct(")"):
            depth -= 1
        elif tok.is_punct(";") and prev is not None and prev.is_punct(";") and depth <= 0:
            out.append(_replace("no-extra-semi", tok, "", "Unnecessary semicolon."))
        prev = tok
    return out


_IDENT_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")


def _dot_notation(tokens: list[Token]) -> list[Finding]:
    sig = significant(tokens)
    out = []
    for i in range(1, len(sig) - 2):
        before, opener, key, closer = sig[i - 1 : i + 3]
        if not (opener.is_punct("[") and key.kind is TokenKind.STRING and closer.is_punct("]")):
            continue
        if not (before.kind is TokenKind.IDENTIFIER or before.is_punct("]") or before.is_punct(")")):
            continue
        name = key.text[1:-1]
        if not _IDENT_RE.fullmatch(name) or name in KEYWORDS:
            continue
        edit = ReplacementEdit(opener.start_col, closer.end_col, "." + name)
        out.append(Finding("dot-notation", opener.start_col, closer.end_col, f"[{key.text}] is better written in dot notation.", edit))
    return out


_CHECKERS: dict[str, Callable[[list[Token]], list[Finding]]] = {
    "eqeqeq": _eqeqeq,
    "no-var": _no_var,
    "semi": _semi,
    "quotes": _quotes,
    "no-floating-decimal": _no_floating_decimal,
    "no-multi-spaces": _no_multi_spaces,
    "no-extra-semi": _no_extra_semi,
    "dot-notation": _dot_notation,
}


def validate_rules(rules: Iterable[str]) -> list[str]:
    rules = list(rules)
    unknown = [r for r in rules if r not in _CHECKERS]
    if unknown:
        raise UnknownRuleError(f"unknown rule(s) {', '.join(unknown)}; expected one of {', '.join(RULES)}")
    return rules


def check_tokens(rule: str, tokens: list[Token]) -> list[Finding]:
    try:
        checker = _CHECKERS[rule]
    except KeyError:
        raise UnknownRuleError(f"unknown rule {rule!r}; expected one of {', '.join(RULES)}") from None
    return sorted(checker(tokens), key=lambda f: (f.start_col, f.end_col))


def check(rule: str, line: str) -> list[Finding]:
    """Findings of ``rule`` on ``line``, ordered by start column."""
    return check_tokens(rule, tokenize(line))


def check_all(rules: Iterable[str], line: str) -> dict[str, list[Finding]]:
    rules = validate_rules(rules)
    if not rules:
        return {}
    tokens = tokenize(line)
    return {rule: check_tokens(rule, tokens) for rule in rules}


def apply_edits(line: str, edits: Iterable[ReplacementEdit]) -> str:
    """Apply non-overlapping edits; an edit overlapping an earlier one is dropped."""
    accepted: list[ReplacementEdit] = []
    last_end = -1
    for edit in sorted(edits, key=lambda e: (e.start_col, e.end_col)):
        if edit.start_col < last_end:
            continue
        accepted.append(edit)
        last_end = max(edit.end_col, last_end)
    for edit in reversed(accepted):
        line = line[: edit.start_col] + edit.new_text + line[edit.end_col :]
    return line


def apply_fixes(rule: str, line: str) -> str:
    findings = check(rule, line)
    if not findings:
        return line
    return apply_edits(line, (f.fix for f in findings))
