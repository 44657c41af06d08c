#!/usr/bin/env python3
"""Fetch the MovieLens-100K ratings into data/ml-100k/u.data.

GroupLens is tried first. When it is unreachable, the copy of ml-100k that
ships inside the RecBole wheel on PyPI is used instead (same rows, same order
as the original u.data, with a header line that is stripped here).
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS, timeout=20) as r:
        z = zipfile.ZipFile(io.BytesIO(r.read()))
    return z.read("ml-100k/u.data").decode()


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1",
             "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        whl = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        inter = zipfile.ZipFile(whl).read(
            "recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    lines = inter.splitlines()[1:]
    return "".join(line + "\n" for line in lines if line.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent
                                         / "data" / "ml-100k" / "u.data"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return
    try:
        text = from_grouplens()
    except Exception as e:  # noqa: BLE001
        print(f"grouplens unavailable ({e}); using the RecBole wheel copy")
        text = from_recbole()
    n = text.count("\n")
    if n != 100000:
        sys.exit(f"unexpected rating count {n}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {n} ratings to {out}")


if __name__ == "__main__":
    main()
