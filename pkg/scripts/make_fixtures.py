"""Generate the fixture corpora under tests/fixtures/.

* python_corpus.jsonl: 500 real functions taken from the Python standard
  library with ``ast`` (source segments, dedented).
* java_corpus.jsonl: 500 synthetic Java methods from a seeded generator that
  mixes Javadoc, comments, control flow, lambdas, array initialisers and
  string/char literals over a wide range of lengths.

The committed files are the reference; re-running on another Python version
may pick different stdlib functions.
"""

from __future__ import annotations

import argparse
import ast
import json
import random
import sys
import sysconfig
import textwrap
from pathlib import Path

N_FUNCTIONS = 500


# ---------------------------------------------------------------- python


def stdlib_functions(limit: int, seed: int = 0) -> list[dict]:
    root = Path(sysconfig.get_paths()["stdlib"])
    files = sorted(p for p in root.glob("*.py") if not p.name.startswith("_"))
    found: list[dict] = []
    for path in files:
        try:
            src = path.read_text(encoding="utf-8")
            tree = ast.parse(src)
        except (SyntaxError, UnicodeDecodeError):
            continue
        for node in ast.walk(tree):
            if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                continue
            seg = ast.get_source_segment(src, node)
            if not seg or not seg.isascii() or "\t" in seg:
                continue
            code = textwrap.dedent(" " * node.col_offset + seg)
            if code[:1].isspace():
                continue  # dedent failed (e.g. docstring lines at column 0)
            lines = code.count("\n") + 1
            if lines < 3 or lines > 120:
                continue
            found.append({"id": f"py:{path.stem}:{node.name}:{node.lineno}", "language": "python", "code": code})
    rng = random.Random(seed)
    rng.shuffle(found)
    return sorted(found[:limit], key=lambda r: r["id"])


# ---------------------------------------------------------------- java

TYPES = ["int", "long", "double", "String", "boolean", "List<String>", "Map<String, Integer>"]
NAMES = ["count", "total", "index", "value", "result", "buffer", "item", "key", "offset", "limit",
         "name", "size", "node", "entry", "left", "right", "score", "flag", "path", "text"]
CALLS = ["process", "compute", "update", "validate", "append", "resolve", "lookup", "transform",
         "normalize", "render", "merge", "split", "encode", "decode", "register"]


class JavaGen:
    def __init__(self, rng: random.Random):
        self.r = rng

    def name(self):
        return self.r.choice(NAMES) + (str(self.r.randint(1, 9)) if self.r.random() < 0.3 else "")

    def expr(self, depth=0):
        r = self.r.random()
        if depth > 2 or r < 0.25:
            return self.r.choice([self.name(), str(self.r.randint(0, 999)), '"' + self.r.choice(NAMES) + '"',
                                  "'" + self.r.choice("abcxyz") + "'", "null", "true", f"{self.r.random():.2f}"])
        if r < 0.5:
            op = self.r.choice(["+", "-", "*", "/", "%", "&&", "||", "==", "!=", "<", ">=", "<<"])
            return f"{self.expr(depth + 1)} {op} {self.expr(depth + 1)}"
        if r < 0.75:
            args = ", ".join(self.expr(depth + 1) for _ in range(self.r.randint(0, 3)))
            recv = self.r.choice(["this.", "helper.", "", f"{self.name()}."])
            return f"{recv}{self.r.choice(CALLS)}({args})"
        if r < 0.85:
            return f"{self.name()}[{self.expr(depth + 1)}]"
        if r < 0.93:
            return f"({self.expr(depth + 1)} ? {self.expr(depth + 1)} : {self.expr(depth + 1)})"
        return f"{self.name()} -> {self.expr(depth + 1)}"

    def simple(self, ind):
        k = self.r.random()
        if k < 0.35:
            return [f"{ind}{self.r.choice(TYPES)} {self.name()} = {self.expr()};"]
        if k < 0.6:
            return [f"{ind}{self.name()} {self.r.choice(['=', '+=', '-=', '|='])} {self.expr()};"]
        if k < 0.8:
            return [f"{ind}{self.expr(2)};" if self.r.random() < 0.3 else
                    f"{ind}{self.r.choice(CALLS)}({self.expr()}, {self.expr()});"]
        if k < 0.88:
            vals = ", ".join(str(self.r.randint(0, 99)) for _ in range(self.r.randint(2, 6)))
            return [f"{ind}int[] {self.name()} = {{{vals}}};"]
        if k < 0.94:
            return [f"{ind}{self.name()}.forEach(x -> {{",
                    f"{ind}    {self.r.choice(CALLS)}(x, {self.expr()});",
                    f"{ind}}});"]
        return [f"{ind}{self.name()}++; // bump", f"{ind}/* checkpoint */ {self.name()} = {self.expr()};"]

    def block(self, ind, budget, depth=0):
        lines = []
        while budget > 0:
            k = self.r.random()
            if depth < 3 and k < 0.12:
                body = self.block(ind + "    ", self.r.randint(1, 3), depth + 1)
                lines += [f"{ind}if ({self.expr()}) {{"] + body
                if self.r.random() < 0.4:
                    lines += [f"{ind}}} else {{"] + self.block(ind + "    ", self.r.randint(1, 2), depth + 1)
                lines.append(f"{ind}}}")
            elif depth < 3 and k < 0.2:
                v = self.name()
                lines += [f"{ind}for (int {v} = 0; {v} < {self.expr(2)}; {v}++) {{"]
                lines += self.block(ind + "    ", self.r.randint(1, 3), depth + 1) + [f"{ind}}}"]
            elif depth < 3 and k < 0.25:
                lines += [f"{ind}while ({self.expr(1)}) {{"]
                lines += self.block(ind + "    ", self.r.randint(1, 2), depth + 1) + [f"{ind}}}"]
            elif depth < 3 and k < 0.29:
                lines += [f"{ind}try {{"] + self.block(ind + "    ", self.r.randint(1, 2), depth + 1)
                lines += [f"{ind}}} catch (Exception e) {{", f"{ind}    log(e.getMessage(), {self.expr()});",
                          f"{ind}}}"]
            elif k < 0.31:
                lines.append(f"{ind}if ({self.expr(1)}) return {self.expr(1)};")
            else:
                lines += self.simple(ind)
            budget -= 1
        return lines

    def method(self, idx: int) -> str:
        size = int(self.r.choice([1, 2, 3, 4, 6, 8, 11, 15, 20, 26]) * self.r.uniform(0.7, 1.3)) + 1
        ret = self.r.choice(TYPES + ["void"])
        params = ", ".join(f"{self.r.choice(TYPES)} {self.name()}{i}" for i in range(self.r.randint(0, 3)))
        out = []
        if self.r.random() < 0.5:
            out += ["/**", f" * Computes {self.r.choice(NAMES)} for case {idx}.", " */"]
        mods = self.r.choice(["public ", "private ", "protected static ", ""])
        out.append(f"{mods}{ret} {self.r.choice(CALLS)}{idx}({params}) {{")
        out += self.block("    ", size)
        if ret != "void":
            out.append(f"    return {self.expr(1)};")
        out.append("}")
        return "\n".join(out) + "\n"


def java_methods(limit: int, seed: int = 0) -> list[dict]:
    gen = JavaGen(random.Random(seed))
    return [{"id": f"java:{i:04d}", "language": "java", "code": gen.method(i)} for i in range(limit)]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in (("python_corpus.jsonl", stdlib_functions(N_FUNCTIONS, args.seed)),
                       ("java_corpus.jsonl", java_methods(N_FUNCTIONS, args.seed))):
        (out / name).write_text("".join(json.dumps(r) + "\n" for r in recs))
        print(f"wrote {len(recs)} records to {out / name}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
