"""Exercises the extension module end to end. Run python/build.sh first."""

import kqgcot_py as k

FORM = "(AND medicine.drug (JOIN medicine.drug.marketed_formulations m.0hqs9ft))"

lf = k.parse(FORM)
assert str(lf) == FORM
assert lf.skeleton() == "(AND r (JOIN r e))"
assert k.skeletonize(FORM) == lf.skeleton()

steps = k.decompose(FORM)
assert steps == ["(JOIN medicine.drug.marketed_formulations m.0hqs9ft)", "(AND medicine.drug Subgraph1)"], steps
assert k.inline_steps(steps) == FORM
assert ("entity", "m.0hqs9ft") in lf.atoms()
assert "ibuprofen" in str(lf.substitute({"m.0hqs9ft": "ibuprofen"}))

try:
    k.parse("(JOIN a.b")
except ValueError as e:
    print("parse error surfaces as ValueError:", e)
else:
    raise AssertionError("malformed form parsed")

emb = k.HashEmbedder(384, 0)
assert emb.dim == 384
a, b = emb.embed("music genre"), emb.embed("music genre")
assert abs(k.cosine(a, b) - 1.0) < 1e-9

assignment, inertia = k.kmeans([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]], 2, 0)
assert assignment[0] == assignment[1] != assignment[2] == assignment[3]
assert inertia >= 0.0

shapes = [
    "(JOIN film.film.genre m.0a{:03d})",
    "(COUNT (JOIN music.artist.genre m.0b{:03d}))",
    "(AND music.artist (JOIN music.artist.genre m.0c{:03d}))",
    "(ARGMAX (JOIN film.film.genre m.0d{:03d}) film.film.runtime)",
    "(JOIN (R film.film.directed_by) (JOIN film.film.genre m.0e{:03d}))",
]
pool = [(f"p{i}", shapes[i % len(shapes)].format(i)) for i in range(15)]
picked = k.select_demonstrations(pool, k=4, seed=1)
assert len(picked) == len(set(picked)) == 4
assert picked == k.select_demonstrations(pool, k=4, seed=1)

demos = [("d1", FORM, ["what formulations does ibuprofen have ?", "which drug has these formulations ?"])]
prompt = k.build_prompt(demos, "(JOIN film.film.directed_by m.0c001)", mode="cot")
assert prompt.startswith(k.INSTRUCTION_PREFIX[:20])
assert "Subquestion2: which drug has these formulations ?" in prompt

completion = "Subgraph1: (JOIN film.film.directed_by m.0c001)\nSubquestion1: which film did m.0c001 direct ?"
assert k.extract_final_question(completion) == "which film did m.0c001 direct ?"

report = k.evaluate([("x", "which film did he direct ?", "which film did he direct ?")])
assert report["count"] == 1 and abs(report["bleu4"] - 100.0) < 1e-6, report
assert k.rouge_l("a b c", "a b c") > 99.9
assert 0.0 <= k.meteor("a b", "a c") <= 1.0

print("smoke test passed:", report)
