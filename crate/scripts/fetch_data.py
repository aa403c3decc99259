#!/usr/bin/env python3
"""Download the UCI tabular datasets into data/ as plain CSV.

    python3 scripts/fetch_data.py [concrete] [superconductor]
"""

import io
import sys
import urllib.request
import zipfile
from pathlib import Path

import pandas as pd

DATA = Path(__file__).resolve().parent.parent / "data"

CONCRETE_URL = "https://archive.ics.uci.edu/static/public/165/concrete+compressive+strength.zip"
SUPERCONDUCTOR_URL = "https://archive.ics.uci.edu/static/public/464/superconductivty+data.zip"

CONCRETE_COLUMNS = [
    "cement",
    "blast_furnace_slag",
    "fly_ash",
    "water",
    "superplasticizer",
    "coarse_aggregate",
    "fine_aggregate",
    "age",
    "compressive_strength",
]


def fetch(url: str) -> zipfile.ZipFile:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return zipfile.ZipFile(io.BytesIO(resp.read()))


def concrete() -> None:
    archive = fetch(CONCRETE_URL)
    name = next(n for n in archive.namelist() if n.endswith(".xls"))
    # reading .xls needs the xlrd package
    frame = pd.read_excel(archive.open(name))
    frame.columns = CONCRETE_COLUMNS
    frame.to_csv(DATA / "concrete.csv", index=False)
    print(f"concrete.csv: {len(frame)} rows")


def superconductor() -> None:
    archive = fetch(SUPERCONDUCTOR_URL)
    frame = pd.read_csv(archive.open("train.csv"))
    frame.to_csv(DATA / "superconductor.csv", index=False)
    print(f"superconductor.csv: {len(frame)} rows")


def main() -> None:
    wanted = sys.argv[1:] or ["concrete", "superconductor"]
    DATA.mkdir(exist_ok=True)
    for name in wanted:
        {"concrete": concrete, "superconductor": superconductor}[name]()


if __name__ == "__main__":
    main()
