"""Min-max scale the raw Boston housing table and binarize MEDV at its median.

Input: the raw `boston_house_prices.csv` shipped with older scikit-learn
releases (two header lines, 506 rows). Output: `boston.csv` next to this file.
"""
import csv
import statistics
import sys

src = sys.argv[1]
with open(src) as fh:
    rows = list(csv.reader(fh))
header = rows[1]
data = [[float(v) for v in r] for r in rows[2:] if r]
features = header[:-1]
medv = [r[-1] for r in data]
median = statistics.median(medv)
cols = list(zip(*[r[:-1] for r in data]))
lo = [min(c) for c in cols]
hi = [max(c) for c in cols]

with open("boston.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id"] + features + ["MEDV"])
    for idx, r in enumerate(data):
        scaled = [(v - a) / (b - a) for v, a, b in zip(r[:-1], lo, hi)]
        w.writerow([idx] + [repr(round(v, 12)) for v in scaled] + [1 if r[-1] > median else -1])
