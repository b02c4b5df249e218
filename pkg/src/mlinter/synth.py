"""Synthetic JavaScript-like corpora with planted rule violations.

Lines are drawn from statement templates that comply with every oracle rule.
With a per-rule probability a line is replaced by a template that plants a
violation of that rule only. Files are written under ``<out>/<project>/``.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from mlinter.lexer import TokenKind, tokenize
from mlinter.oracle import RULES

DEFAULT_RATES = {
    "eqeqeq": 0.009,
    "no-var": 0.0085,
    "semi": 0.009,
    "quotes": 0.009,
    "no-floating-decimal": 0.008,
    "no-multi-spaces": 0.0085,
    "no-extra-semi": 0.008,
    "dot-notation": 0.0085,
}

NAMES = """
user users item items node nodes value values data result results options opts
config ctx req res err error event target list map set count total index key
keys name title label text message callback cb handler listener element el
parent child children root tree state props store model view route path url
query params body header headers status code token session cache buffer chunk
stream file files dir output input source dest width height size offset length
start end min max left right top bottom color style theme locale timer delay
retries attempt response request payload record records entry entries row cols
""".split()

MEMBERS = """
id name type value length children parent data items options status message
push pop shift slice splice map filter reduce forEach indexOf includes join
split trim replace toString then catch finally emit on off get set has delete
keys values entries assign create apply call bind format parse stringify log
""".split()

FUNCS = """
render update create remove fetchData loadConfig parseArgs handleClick
validate normalize resolve reject dispatch subscribe notify compute format
getValue setValue toggle init destroy mount unmount emit listen connect
""".split()

MODULES = "fs path util events http assert lodash react express chalk debug".split()

WORDS = """
hello world error warning done ready loading failed success click change
submit input default active hidden visible open close left right up down
""".split()

NON_IDENT_KEYS = ["data-id", "content-type", "x-total", "aria-label", "my key", "2nd", "@scope"]


def _pick(rng: random.Random, seq):
    return seq[rng.randrange(len(seq))]


@dataclass
class _Gen:
    rng: random.Random

    # identifiers are open-vocabulary: about a third are camelCase compounds
    def name(self) -> str:
        base = _pick(self.rng, NAMES)
        if self.rng.random() < 0.35:
            return base + _pick(self.rng, NAMES).capitalize()
        return base

    def member(self) -> str:
        base = _pick(self.rng, MEMBERS)
        if self.rng.random() < 0.3:
            return base + _pick(self.rng, NAMES).capitalize()
        return base

    def func(self) -> str:
        base = _pick(self.rng, FUNCS)
        if self.rng.random() < 0.3:
            return base + _pick(self.rng, NAMES).capitalize()
        return base

    def word(self) -> str:
        if self.rng.random() < 0.3:
            return _pick(self.rng, NAMES)
        return _pick(self.rng, WORDS)

    def number(self) -> str:
        r = self.rng.random()
        if r < 0.6:
            return str(self.rng.choice([0, 1, 2, 3, 5, 10, 16, 42, 100, 255, 1000]))
        if r < 0.9:
            return self.rng.choice(["0.5", "0.25", "1.5", "0.1", "2.5", "0.75", "3.14"])
        return self.rng.choice(["0xff", "1e3", "1e-6"])

    def dq(self) -> str:
        words = " ".join(self.word() for _ in range(self.rng.randint(1, 3)))
        return f'"{words}"'

    def atom(self, string=None) -> str:
        r = self.rng.random()
        if r < 0.35:
            return self.name()
        if r < 0.5:
            return self.number()
        if r < 0.65:
            return string() if string else self.dq()
        if r < 0.8:
            return f"{self.name()}.{self.member()}"
        if r < 0.87:
            return f"{self.name()}[{self.rng.choice(['i', 'j', 'idx', '0', 'key'])}]"
        if r < 0.9:
            return f'{self.name()}["{_pick(self.rng, NON_IDENT_KEYS)}"]'
        if r < 0.94:
            return self.rng.choice(["null", "true", "false", "undefined"])
        if r < 0.97:
            return f"`{self.word()} ${{{self.name()}}}`"
        return f"'{self.word()} \"{self.word()}\"'"

    def call(self) -> str:
        args = ", ".join(self.atom() for _ in range(self.rng.randint(0, 3)))
        if self.rng.random() < 0.5:
            return f"{self.func()}({args})"
        return f"{self.name()}.{self.member()}({args})"

    def expr(self) -> str:
        r = self.rng.random()
        if r < 0.5:
            return self.atom()
        if r < 0.75:
            return self.call()
        op = self.rng.choice(["+", "-", "*", "||", "&&", "??"])
        return f"{self.atom()} {op} {self.atom()}"

    def cond(self, eq: str = "===", neq: str = "!==") -> str:
        r = self.rng.random()
        if r < 0.3:
            return f"{self.name()} {eq} {self.atom()}"
        if r < 0.5:
            return f"{self.name()} {neq} {self.rng.choice(['null', 'undefined', self.number()])}"
        if r < 0.65:
            return f"typeof {self.name()} {eq} \"{self.rng.choice(['string', 'number', 'function', 'object'])}\""
        if r < 0.8:
            return f"!{self.name()}"
        if r < 0.9:
            return f"{self.name()}.length > {self.number()}"
        return f"{self.name()} && {self.name()}.{self.member()}"


def _clean(g: _Gen) -> str:
    r = g.rng.random()
    if r < 0.14:
        return f"{g.rng.choice(['const', 'let'])} {g.name()} = {g.expr()};"
    if r < 0.24:
        return f"{g.name()} = {g.expr()};"
    if r < 0.32:
        return f"{g.name()}.{g.member()} = {g.expr()};"
    if r < 0.44:
        return f"{g.call()};"
    if r < 0.51:
        return f"if ({g.cond()}) {{"
    if r < 0.58:
        return g.rng.choice(["}", "}", "} else {", "});", "};", "]);"])
    if r < 0.64:
        return f"return {g.expr()};"
    if r < 0.69:
        params = ", ".join(g.name() for _ in range(g.rng.randint(0, 3)))
        return f"function {g.func()}({params}) {{"
    if r < 0.72:
        return f"for (let i = 0; i < {g.name()}.length; i++) {{"
    if r < 0.74:
        return f"while ({g.cond()}) {{"
    if r < 0.8:
        return "// " + " ".join(g.word() for _ in range(g.rng.randint(2, 6)))
    if r < 0.87:
        return ""
    if r < 0.92:
        return f"{g.member()}: {g.atom()},"
    if r < 0.94:
        return f'const {g.name()} = require("{_pick(g.rng, MODULES)}");'
    if r < 0.95:
        return f'import {g.name()} from "{_pick(g.rng, MODULES)}";'
    if r < 0.97:
        return f'throw new Error("{g.word()} {g.word()}");'
    if r < 0.98:
        return f"const {g.name()} = [{', '.join(g.atom() for _ in range(g.rng.randint(1, 4)))}];"
    return f'{g.name()}.on("{g.word()}", function ({g.name()}) {{'


def _plant(rule: str, g: _Gen) -> str:
    rng = g.rng
    if rule == "eqeqeq":
        eq = rng.choice(["==", "!="])
        cond = g.cond(eq=eq, neq=eq)
        if "=" not in cond:
            cond = f"{g.name()} {eq} {g.atom()}"
        return rng.choice([f"if ({cond}) {{", f"return {cond};", f"const {g.name()} = {cond};"])
    if rule == "no-var":
        return f"var {g.name()} = {g.expr()};"
    if rule == "semi":
        return rng.choice(
            [
                f"{g.name()} = {g.atom()}",
                f"{g.call()}",
                f"{rng.choice(['const', 'let'])} {g.name()} = {g.call()}",
                f"return {g.name()}",
                f"{g.name()}.{g.member()} = {g.dq()}",
            ]
        )
    if rule == "quotes":
        text = f"'{g.word()}'"
        return rng.choice(
            [
                f"const {g.name()} = {text};",
                f"{g.func()}({text});",
                f"{g.name()}.{g.member()}({text}, {g.atom()});",
                f"const {g.name()} = require('{_pick(rng, MODULES)}');",
                f"if ({g.name()} === {text}) {{",
            ]
        )
    if rule == "no-floating-decimal":
        num = rng.choice([".5", ".25", ".1", ".75", "5.", "2.", ".05"])
        return rng.choice(
            [
                f"const {g.name()} = {num};",
                f"{g.name()} = {g.name()} * {num};",
                f"{g.func()}({g.name()}, {num});",
                f"return {num};",
            ]
        )
    if rule == "no-multi-spaces":
        line = _clean_statement(g)
        spots = [t.start_col for t in tokenize(line) if t.kind is TokenKind.WHITESPACE]
        i = rng.choice(spots)
        return line[:i] + " " * rng.randint(2, 4) + line[i + 1 :]
    if rule == "no-extra-semi":
        return _clean_statement(g) + ";"
    if rule == "dot-notation":
        key = f'"{g.member()}"'
        access = f"{g.name()}[{key}]"
        return rng.choice(
            [
                f"const {g.name()} = {access};",
                f"{access} = {g.expr()};",
                f"return {access};",
                f"{access}({g.atom()});",
            ]
        )
    raise ValueError(rule)


def _clean_statement(g: _Gen) -> str:
    return g.rng.choice(
        [
            f"{g.rng.choice(['const', 'let'])} {g.name()} = {g.atom()};",
            f"{g.name()} = {g.call()};",
            f"return {g.name()};",
            f"{g.name()}.{g.member()} = {g.atom()};",
        ]
    )


def _indent(rng: random.Random, text: str) -> str:
    if not text:
        return text
    return " " * (2 * rng.choice([0, 1, 1, 2, 2, 3])) + text


@dataclass
class SynthConfig:
    projects: int = 40
    files_per_project: int = 20
    lines_per_file: tuple[int, int] = (150, 350)
    rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    seed: int = 0


def generate_file(rng: random.Random, n_lines: int, rates: dict[str, float]) -> list[str]:
    g = _Gen(rng)
    rules = [r for r in RULES if rates.get(r, 0) > 0]
    lines = []
    for _ in range(n_lines):
        u = rng.random()
        planted = None
        for rule in rules:
            u -= rates[rule]
            if u < 0:
                planted = rule
                break
        text = _plant(planted, g) if planted else _clean(g)
        lines.append(_indent(rng, text))
    return lines


def generate_corpus(out_dir: str | os.PathLike, config: SynthConfig | None = None) -> list[Path]:
    """Write the corpus and a clone manifest; returns the project roots."""
    config = config or SynthConfig()
    rng = random.Random(config.seed)
    out = Path(out_dir)
    roots = []
    manifest = []
    for p in range(config.projects):
        root = out / f"project{p:03d}"
        (root / "src").mkdir(parents=True, exist_ok=True)
        for f in range(config.files_per_project):
            n = rng.randint(*config.lines_per_file)
            lines = generate_file(rng, n, config.rates)
            (root / "src" / f"module{f:03d}.js").write_text("\n".join(lines) + "\n", encoding="utf-8")
        # minified bundle that ingestion must skip
        (root / "dist").mkdir(exist_ok=True)
        (root / "dist" / "bundle.min.js").write_text("var a=1;;if(a==2){b='c'}\n", encoding="utf-8")
        sha = hashlib.sha1(f"{config.seed}:{p}".encode()).hexdigest()
        manifest.append({"url": f"https://example.invalid/synthetic/project{p:03d}", "commit_sha": sha, "local_path": root.name})
        roots.append(root)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return roots
