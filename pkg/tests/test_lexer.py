import pytest

from lenlab.data.lexer import LexError, count_tokens, lex_java, lex_python, significant


def kinds(tokens):
    return [t.kind for t in tokens]


def test_java_basic_tokens():
    assert [t.text for t in lex_java("int x = 0 ;")] == ["int", "x", "=", "0", ";"]
    assert count_tokens("java", "a.b(c)") == 6
    assert count_tokens("java", "x >>>= 2; y -> y::f") == 9


def test_java_literals_and_comments():
    toks = lex_java('s = "a // not comment"; /* c */ c = \'\\n\'; // tail')
    assert kinds(toks) == ["name", "op", "string", "op", "comment", "name", "op", "string", "op", "comment"]
    assert count_tokens("java", 'String t = """\n  hi\n""";') == 5
    assert count_tokens("java", "double d = 1.5e-3f + 0x1F + .5;") == 9


@pytest.mark.parametrize("code", ['x = "abc', "/* open", "c = 'a", "x = #"])
def test_java_errors(code):
    with pytest.raises(LexError):
        lex_java(code)


def test_python_structure_tokens():
    code = "def f(x):\n    if x:\n        return 1\n    return 2\n"
    toks = lex_python(code)
    assert kinds(toks).count("indent") == 2 and kinds(toks).count("dedent") == 2
    ret = [t for t in toks if t.text == "return"]
    assert [t.depth for t in ret] == [2, 1]
    assert count_tokens("python", code) == 13


def test_python_brackets_continue_lines():
    toks = lex_python("x = f(a,\n      b)\ny = 2\n")
    assert kinds(toks).count("newline") == 2
    assert not any(t.kind == "indent" for t in toks)


def test_python_strings_comments_prefixes():
    toks = significant(lex_python('s = rb"x" + f\'{a}\'  # note\nt = """a\nb"""\n'))
    assert [t.kind for t in toks] == ["name", "op", "string", "op", "string", "name", "op", "string"]


@pytest.mark.parametrize("code", ["def f():\n        x\n    y\n", "x = (1,\n", "x = )\n", "s = 'abc\n"])
def test_python_errors(code):
    with pytest.raises(LexError):
        lex_python(code)


def test_python_fragment_mode_tolerates_partial_code():
    toks = lex_python("b)\n        return x", fragment=True)
    assert [t.text for t in toks] == ["b", ")", "return", "x"]
