#!/usr/bin/env python3
"""Rebuild MovieLens 100K `u.data` and `u.item` into data/ml-100k/.

The GroupLens download host is tried first. When it is unreachable, the
copy bundled in the `recbole` wheel on PyPI is used instead: its `.inter`
file is `u.data` with a header row, and its `.item` file lists genre names
that are expanded back into the 19 binary flags of `u.item`.
"""
import glob
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens(out):
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    for name in ("u.data", "u.item"):
        with open(os.path.join(out, name), "wb") as f:
            f.write(z.read("ml-100k/" + name))


def from_recbole(out):
    tmp = tempfile.mkdtemp()
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "recbole==1.2.1"]
    )
    z = zipfile.ZipFile(glob.glob(os.path.join(tmp, "*.whl"))[0])
    base = "recbole/dataset_example/ml-100k/ml-100k."
    inter = z.read(base + "inter").decode("latin-1").splitlines()[1:]
    with open(os.path.join(out, "u.data"), "w", encoding="latin-1", newline="\n") as f:
        for line in inter:
            user, item, rating, ts = line.split("\t")
            f.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")
    items = z.read(base + "item").decode("latin-1").splitlines()[1:]
    with open(os.path.join(out, "u.item"), "w", encoding="latin-1", newline="\n") as f:
        for line in items:
            item, title, year, classes = line.split("\t")
            flags = ["0"] * len(GENRES)
            for g in classes.split(" "):
                flags[GENRES.index(g)] = "1"
            release = f"01-Jan-{year}" if year else ""
            f.write("|".join([item, f"{title} ({year})" if year else title, release, "", ""] + flags) + "\n")


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k")
    os.makedirs(out, exist_ok=True)
    try:
        from_grouplens(out)
        print("fetched from grouplens")
    except Exception as err:  # noqa: BLE001
        print(f"grouplens unavailable ({err}); using recbole wheel")
        from_recbole(out)
    print("wrote", os.path.abspath(out))


if __name__ == "__main__":
    main()
