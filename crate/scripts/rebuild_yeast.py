"""Rebuild the 10-class UCI yeast table from the KEEL binary splits that ship
inside the `imbalanced_databases` wheel (no network access to the UCI archive).

KEEL class indices: 0 MIT, 1 NUC, 2 CYT, 3 ME1, 4 ME2, 5 ME3, 6 EXC, 7 VAC,
8 POX, 9 ERL. Rows are matched on their (rounded) feature vectors, with
multiplicity, so duplicate rows are handled as a multiset.

usage: rebuild_yeast.py <imbalanced_databases/data dir> <out.csv>
"""
import collections
import sys

root, out = sys.argv[1], sys.argv[2]


def load(name):
    """Returns (attribute names, rows). Some splits drop constant columns."""
    attrs, rows = [], []
    for line in open(f"{root}/{name}/{name}.dat"):
        line = line.strip()
        if line.lower().startswith("@attribute"):
            attrs.append(line.split()[1].lower())
        if not line or line.startswith("@"):
            continue
        parts = [p.strip() for p in line.split(",")]
        rows.append((tuple(round(float(v), 4) for v in parts[:-1]), parts[-1]))
    return attrs[:-1], rows


base_attrs, base_rows = load("yeast1")
base = [r[0] for r in base_rows]
labels = [None] * len(base)


def members(name, which):
    attrs, rows = load(name)
    cols = [base_attrs.index(a) for a in attrs]
    counter = collections.Counter(r[0] for r in rows if r[1] == which)
    return cols, counter


def project(row, cols):
    return tuple(row[c] for c in cols)


def assign(spec, label):
    cols, counter = spec
    for i, row in enumerate(base):
        key = project(row, cols)
        if labels[i] is None and counter[key] > 0:
            labels[i] = label
            counter[key] -= 1
    assert sum(counter.values()) == 0, (label, sum(counter.values()))


assign(members("yeast1", "positive"), "NUC")
assign(members("yeast3", "positive"), "ME3")
assign(members("yeast4", "positive"), "ME2")
assign(members("yeast5", "positive"), "ME1")
assign(members("yeast6", "positive"), "EXC")
assign(members("yeast-1_vs_7", "positive"), "VAC")
assign(members("yeast-2_vs_8", "positive"), "POX")
assign(members("yeast-2_vs_4", "negative"), "CYT")

# 3-7-8-9 positives minus the already-labelled ME1/VAC/POX rows leaves ERL.
erl = members("yeast-0-2-5-6_vs_3-7-8-9", "positive")
for i, row in enumerate(base):
    key = project(row, erl[0])
    if labels[i] in ("ME1", "VAC", "POX") and erl[1][key] > 0:
        erl[1][key] -= 1
assign(erl, "ERL")
labels = [l if l is not None else "MIT" for l in labels]

counts = collections.Counter(labels)
expected = {"CYT": 463, "NUC": 429, "MIT": 244, "ME3": 163, "ME2": 51,
            "ME1": 44, "EXC": 35, "VAC": 30, "POX": 20, "ERL": 5}
assert counts == expected, counts

with open(out, "w") as f:
    for row, label in zip(base, labels):
        f.write(",".join(f"{v:.2f}" for v in row) + f",{label}\n")
print(dict(counts))
