"""
MovieLens-100k to the package CSV formats
=========================================

Reads ``u.data`` (tab separated ``user item rating timestamp``) and
``u.item`` (pipe separated, 19 genre flags at the end) from an unpacked
``ml-100k`` directory and writes:

* ``interactions.csv``: ``user_id,item_id,timestamp,value`` with the rating
  as value, so ``prepare`` can binarize at its threshold;
* ``hierarchy.csv``: ``item_id,level_1,level_2`` with the first flagged
  genre as ``level_1`` and a coarse genre family as ``level_2``.

Usage: ``python3 demos/movielens_to_csv.py path/to/ml-100k out_dir``
then ``HGEREC_ML100K_DIR=out_dir pytest tests/test_acceptance.py``.
"""

import csv
import os
import sys

GENRES = ["unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary",
          "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller",
          "War", "Western"]
FAMILY = {
    "Action": "spectacle", "Adventure": "spectacle", "Sci-Fi": "spectacle", "Fantasy": "spectacle",
    "War": "spectacle", "Western": "spectacle",
    "Crime": "suspense", "Film-Noir": "suspense", "Horror": "suspense", "Mystery": "suspense",
    "Thriller": "suspense",
    "Animation": "light", "Children's": "light", "Comedy": "light", "Musical": "light", "Romance": "light",
    "Drama": "serious", "Documentary": "serious", "unknown": "serious",
}


def convert(src, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(src, "u.data"), encoding="latin-1") as fh, \
            open(os.path.join(out, "interactions.csv"), "w", newline="") as dst:
        w = csv.writer(dst, lineterminator="\n")
        w.writerow(["user_id", "item_id", "timestamp", "value"])
        n = 0
        for line in fh:
            user, item, rating, ts = line.split()
            w.writerow([user, item, ts, rating])
            n += 1
    with open(os.path.join(src, "u.item"), encoding="latin-1") as fh, \
            open(os.path.join(out, "hierarchy.csv"), "w", newline="") as dst:
        w = csv.writer(dst, lineterminator="\n")
        w.writerow(["item_id", "level_1", "level_2"])
        for line in fh:
            cells = line.rstrip("\n").split("|")
            flags = cells[-19:]
            genre = next((g for g, f in zip(GENRES, flags) if f == "1"), "unknown")
            w.writerow([cells[0], genre, FAMILY[genre]])
    return n


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit("usage: python3 demos/movielens_to_csv.py ML100K_DIR OUT_DIR")
    print(f"wrote {convert(sys.argv[1], sys.argv[2])} interactions to {sys.argv[2]}")
