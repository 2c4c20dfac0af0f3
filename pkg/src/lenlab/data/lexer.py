"""Regex lexers for Java and Python source.

Both produce :class:`Token` lists with character offsets into the input, so
callers can mask or re-render spans of the original text. Comments come out
as ``comment`` tokens; string and char literals are single tokens. The
Python lexer also emits ``newline``/``indent``/``dedent`` structure tokens and
records the indentation depth of every token's logical line.

Only *significant* tokens (everything except comments and structure tokens)
count as language tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class LexError(ValueError):
    """Source cannot be tokenised (unterminated literal, stray character, bad dedent)."""


STRUCTURAL = frozenset({"comment", "newline", "indent", "dedent"})


@dataclass(frozen=True)
class Token:
    kind: str      # name | number | string | op | comment | newline | indent | dedent
    text: str
    start: int     # char offsets into the source
    end: int
    line: int      # 0-based physical line of ``start``
    depth: int = 0  # Python: indentation depth of the logical line

    @property
    def significant(self) -> bool:
        return self.kind not in STRUCTURAL


def significant(tokens: list[Token]) -> list[Token]:
    return [t for t in tokens if t.significant]


def _ops(*ops: str) -> str:
    return "|".join(re.escape(o) for o in sorted(ops, key=len, reverse=True))


# ---------------------------------------------------------------- Java

_JAVA_OPS = _ops(
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=",
    "+=", "-=", "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>",
    "+", "-", "*", "/", "%", "=", "<", ">", "!", "~", "?", ":", ";", ",", ".", "@",
    "(", ")", "[", "]", "{", "}", "&", "|", "^",
)
_JAVA = re.compile(
    r"""
    (?P<ws>[ \t\f\r\n]+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<badcomment>/\*)
  | (?P<string>\"\"\"(?:[^\\]|\\.)*?\"\"\"|"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)+')
  | (?P<badstring>["'])
  | (?P<number>0[xX][0-9a-fA-F_]+[lL]?|0[bB][01_]+[lL]?
        |(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d[\d_]*)?[fFdDlL]?)
  | (?P<name>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<op>"""
    + _JAVA_OPS
    + r""")
    """,
    re.VERBOSE | re.DOTALL,
)


def _line_starts(code: str) -> list[int]:
    return [0] + [m.end() for m in re.finditer("\n", code)]


def _line_of(starts: list[int], pos: int) -> int:
    lo, hi = 0, len(starts)
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if starts[mid] <= pos:
            lo = mid
        else:
            hi = mid
    return lo


def lex_java(code: str) -> list[Token]:
    starts = _line_starts(code)
    out: list[Token] = []
    pos = 0
    while pos < len(code):
        m = _JAVA.match(code, pos)
        if m is None:
            raise LexError(f"unexpected character {code[pos]!r} at line {_line_of(starts, pos) + 1}")
        kind = m.lastgroup
        if kind == "badcomment":
            raise LexError(f"unterminated comment at line {_line_of(starts, pos) + 1}")
        if kind == "badstring":
            raise LexError(f"unterminated string or char literal at line {_line_of(starts, pos) + 1}")
        if kind != "ws":
            out.append(Token(kind, m.group(), m.start(), m.end(), _line_of(starts, m.start())))
        pos = m.end()
    return out


# ---------------------------------------------------------------- Python

_PY_OPS = _ops(
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=",
    "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "=", "!",
    "(", ")", "[", "]", "{", "}", ",", ":", ";", ".",
)
_PY_PREFIX = r"(?:[rR][bBfF]?|[bBfF][rR]?|[uU])?"
_PY = re.compile(
    r"""
    (?P<nl>\r?\n)
  | (?P<ws>[ \t\f]+)
  | (?P<cont>\\\r?\n)
  | (?P<comment>\#[^\r\n]*)
  | (?P<string>"""
    + _PY_PREFIX
    + r"""(?:'''(?:[^\\]|\\.)*?'''|\"\"\"(?:[^\\]|\\.)*?\"\"\"|'(?:[^'\\\n]|\\.)*'|"(?:[^"\\\n]|\\.)*"))
  | (?P<badstring>"""
    + _PY_PREFIX
    + r"""['"])
  | (?P<number>0[xX][0-9a-fA-F_]+|0[bB][01_]+|0[oO][0-7_]+
        |(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d[\d_]*)?[jJ]?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>"""
    + _PY_OPS
    + r""")
    """,
    re.VERBOSE | re.DOTALL,
)
_BRACKETS = {"(": 1, "[": 1, "{": 1, ")": -1, "]": -1, "}": -1}


def _indent_width(ws: str) -> int:
    col = 0
    for ch in ws:
        col = (col // 8 + 1) * 8 if ch == "\t" else col + 1
    return col


def lex_python(code: str, fragment: bool = False) -> list[Token]:
    """Tokenise Python source.

    With ``fragment`` set, bracket balance is not enforced and indentation is
    not tracked (used to count tokens in masked spans).
    """
    starts = _line_starts(code)
    out: list[Token] = []
    stack = [0]
    parens = 0
    at_line_start = True   # next significant token begins a logical line
    depth = 0
    pos = 0
    n = len(code)
    while pos < n:
        if at_line_start and not fragment:
            # measure indentation of the next non-blank, non-comment line
            m = re.compile(r"[ \t\f]*").match(code, pos)
            ws_end = m.end()
            if ws_end >= n:
                break
            ch = code[ws_end]
            if ch in "\r\n#":
                if ch == "#":
                    c = _PY.match(code, ws_end)
                    out.append(Token("comment", c.group(), c.start(), c.end(), _line_of(starts, c.start()), depth))
                    ws_end = c.end()
                nl = re.compile(r"\r?\n").match(code, ws_end)
                pos = nl.end() if nl else n
                continue
            width = _indent_width(m.group())
            if width > stack[-1]:
                stack.append(width)
                out.append(Token("indent", "", ws_end, ws_end, _line_of(starts, ws_end), len(stack) - 1))
            else:
                while width < stack[-1]:
                    stack.pop()
                    out.append(Token("dedent", "", ws_end, ws_end, _line_of(starts, ws_end), len(stack) - 1))
                if width != stack[-1]:
                    raise LexError(f"inconsistent dedent at line {_line_of(starts, ws_end) + 1}")
            depth = len(stack) - 1
            at_line_start = False
            pos = ws_end
        m = _PY.match(code, pos)
        if m is None:
            raise LexError(f"unexpected character {code[pos]!r} at line {_line_of(starts, pos) + 1}")
        kind = m.lastgroup
        if kind == "badstring":
            raise LexError(f"unterminated string literal at line {_line_of(starts, pos) + 1}")
        if kind == "nl":
            if parens == 0 and not fragment:
                out.append(Token("newline", "", m.start(), m.start(), _line_of(starts, m.start()), depth))
                at_line_start = True
        elif kind not in ("ws", "cont"):
            line = _line_of(starts, m.start())
            if kind == "op" and m.group() in _BRACKETS:
                parens += _BRACKETS[m.group()]
                if parens < 0 and not fragment:
                    raise LexError(f"unbalanced {m.group()!r} at line {line + 1}")
            out.append(Token(kind, m.group(), m.start(), m.end(), line, depth))
        pos = m.end()
    if fragment:
        return out
    if parens > 0:
        raise LexError("unclosed bracket at end of input")
    if out and not at_line_start:
        out.append(Token("newline", "", n, n, _line_of(starts, n), depth))
    while len(stack) > 1:
        stack.pop()
        out.append(Token("dedent", "", n, n, _line_of(starts, n), len(stack) - 1))
    return out


def lex(language: str, code: str) -> list[Token]:
    if language == "java":
        return lex_java(code)
    if language == "python":
        return lex_python(code)
    raise ValueError(f"unsupported language {language!r}")


def count_tokens(language: str, code: str) -> int:
    """Number of language tokens (comments and structure excluded)."""
    return len(significant(lex(language, code)))
