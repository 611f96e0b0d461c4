"""Regenerates crates/core/tests/data/corpus_golden.tsv.

Parse decisions and values come from Python's own expression grammar, which
agrees with the reward DSL on every construct the corpus uses (`**` binds
tighter than unary minus, which binds tighter than `*` and `/`). Structure
classes are hand-audited and listed below.
"""
import ast
import math
import pathlib

HERE = pathlib.Path(__file__).resolve().parent
CORPUS = HERE.parent / "crates/core/tests/data/corpus.txt"
GOLDEN = HERE.parent / "crates/core/tests/data/corpus_golden.tsv"

# Indices (0-based, over non-comment lines) of rows cut off mid-expression.
TRUNCATED = {1, 2, 3, 8, 9, 11, 17, 22}

CLASSES = {
    0: "invalid",    # d/dg1 = (g2 - 1) / 2 <= 0
    4: "unstable",   # g1 * (...) with primitives on both sides
    5: "stable",
    7: "unstable",   # g1 * (g2 + ...)
    10: "invalid",   # whole sum negated: d/dg1 = -1/1.2
    12: "unstable",  # g2 * (g3 / 2)
    13: "unstable",  # g1 * (g2 + 0.5)
    14: "stable",    # linear; only g4 is penalized
    15: "invalid",   # d/dg1 = (g2 - 1) / 2 <= 0
    18: "unstable",  # g2 * (g3 / 2)
    20: "stable",
    21: "unstable",  # g1 * (g2 + ...)
    23: "stable",
    24: "stable",
    25: "stable",
    26: "stable",
    27: "stable",
    28: "stable",
    29: "stable",
    30: "stable",
    31: "unstable",  # g2 * (g3 / 2)
}

POINTS = [(1.0, 1.0, 1.0, 1.0), (0.0, 0.0, 0.0, 0.0), (1.0, 0.5, 1.0, 0.0)]


def evaluate(text, point):
    env = {f"g{i + 1}": v for i, v in enumerate(point)}
    try:
        value = eval(compile(text, "<expr>", "eval"), {"__builtins__": {}}, env)
    except ZeroDivisionError:
        return "div_by_zero"
    except OverflowError:
        return "overflow"
    if isinstance(value, complex):
        return "domain"
    if math.isnan(value):
        return "non_finite"
    if math.isinf(value):
        return "overflow"
    return repr(float(value))


def main():
    lines = [l.strip() for l in CORPUS.read_text().splitlines()]
    lines = [l for l in lines if l and not l.startswith("#")]
    out = ["kind\texpr\tparse\tat_ones\tat_zeros\tat_mixed\tclass"]
    for i, text in enumerate(lines):
        kind = "trunc" if i in TRUNCATED else "full"
        try:
            ast.parse(text, mode="eval")
            parsed = True
        except SyntaxError:
            parsed = False
        if parsed:
            values = [evaluate(text, p) for p in POINTS]
            cls = CLASSES[i]
        else:
            values = ["-", "-", "-"]
            cls = "-"
        out.append("\t".join([kind, text, "ok" if parsed else "rejected", *values, cls]))
    GOLDEN.write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
