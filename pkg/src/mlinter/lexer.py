"""Error-tolerant tokenizer for single lines of JavaScript-like source.

The lexer is total: every input line (without newline characters) maps to a
list of tokens whose texts concatenate back to the line. Anything it cannot
classify becomes an ``UNKNOWN`` token.

Known limitations:

* Regex literals are not recognized; ``/re/g`` lexes as operators and
  identifiers.
* Template literals are one ``STRING`` token when closed on the same line;
  ``${...}`` interpolations are not sub-lexed.
* An unterminated string, template or block comment becomes a single
  ``UNKNOWN`` token running to the end of the line.
* ``.5`` is a number only when the dot is not glued to an identifier, a
  digit or another dot (``a.5`` is ``a`` ``.`` ``5``).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class TokenKind(enum.Enum):
    IDENTIFIER = "Identifier"
    KEYWORD = "Keyword"
    NUMBER = "Number"
    STRING = "String"
    OPERATOR = "Operator"
    PUNCTUATION = "Punctuation"
    COMMENT = "Comment"
    WHITESPACE = "Whitespace"
    UNKNOWN = "Unknown"


KEYWORDS = frozenset(
    """
    await break case catch class const continue debugger default delete do
    else export extends finally for function if import in instanceof let new
    return super switch this throw try typeof var void while with yield
    """.split()
)

# Longest match wins because the regex alternation is sorted by length.
OPERATORS = (
    ">>>=",
    "===", "!==", "**=", "<<=", ">>=", ">>>", "...", "&&=", "||=", "??=",
    "=>", "==", "!=", "<=", ">=", "&&", "||", "??", "?.", "++", "--",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**", "<<", ">>",
    "=", "+", "-", "*", "/", "%", "<", ">", "!", "~", "&", "|", "^", "?",
)  # fmt: skip

PUNCTUATION = frozenset("()[]{};,.:")

QUOTE_STYLES = {"'": "single", '"': "double", "`": "template"}


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    start_col: int
    end_col: int

    @property
    def quote_style(self) -> str | None:
        """``single``, ``double`` or ``template`` for strings, else None."""
        if self.kind is TokenKind.STRING:
            return QUOTE_STYLES[self.text[0]]
        return None

    @property
    def label(self) -> str:
        """Kind name, with the quote style folded in for strings."""
        if self.kind is TokenKind.STRING:
            return f"String.{self.quote_style}"
        return self.kind.value

    def is_punct(self, text: str) -> bool:
        return self.kind is TokenKind.PUNCTUATION and self.text == text


_OPERATOR_RE = "|".join(
    # `?.` followed by a digit is a conditional, as in `a?.5:1`
    r"\?\.(?![0-9])" if op == "?." else re.escape(op)
    for op in sorted(OPERATORS, key=len, reverse=True)
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[^\S\n]+)
  | (?P<line_comment>//.*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<open_comment>/\*.*)
  | (?P<string>
        '(?:[^'\\]|\\.)*'
      | "(?:[^"\\]|\\.)*"
      | `(?:[^`\\]|\\.)*`
    )
  | (?P<open_string>['"`].*)
  | (?P<number>
        0[xX][0-9a-fA-F]+
      | [0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?
    )
  | (?P<dot_number>\.[0-9]+(?:[eE][+-]?[0-9]+)?)
  | (?P<word>[^\W0-9][\w$]*|\$[\w$]*)
  | (?P<op>%s)
  | (?P<punct>[()\[\]{};,.:])
  | (?P<unknown>.)
    """
    % _OPERATOR_RE,
    re.VERBOSE | re.DOTALL,
)

_GROUP_KINDS = {
    "ws": TokenKind.WHITESPACE,
    "line_comment": TokenKind.COMMENT,
    "block_comment": TokenKind.COMMENT,
    "open_comment": TokenKind.UNKNOWN,
    "string": TokenKind.STRING,
    "open_string": TokenKind.UNKNOWN,
    "number": TokenKind.NUMBER,
    "dot_number": TokenKind.NUMBER,
    "op": TokenKind.OPERATOR,
    "punct": TokenKind.PUNCTUATION,
    "unknown": TokenKind.UNKNOWN,
}


def _glued(prev: str) -> bool:
    return prev.isalnum() or prev in "_$."


def tokenize(line_text: str) -> list[Token]:
    """Split one line into contiguous tokens covering the whole line."""
    tokens: list[Token] = []
    pos = 0
    n = len(line_text)
    while pos < n:
        m = _TOKEN_RE.match(line_text, pos)
        group = m.lastgroup
        end = m.end()
        if group == "dot_number" and pos > 0 and _glued(line_text[pos - 1]):
            group, end = "punct", pos + 1
        if group == "word":
            text = line_text[pos:end]
            kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
        else:
            kind = _GROUP_KINDS[group]
        tokens.append(Token(kind, line_text[pos:end], pos, end))
        pos = end
    return tokens


def significant(tokens: list[Token]) -> list[Token]:
    """Tokens other than whitespace and comments."""
    return [t for t in tokens if t.kind not in (TokenKind.WHITESPACE, TokenKind.COMMENT)]
