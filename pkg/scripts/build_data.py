"""Regenerate the bundled datasets under src/fmeval/data.

Adult: the raw UCI ``adult.data``/``adult.test`` files, read from a local
directory (they ship verbatim inside the ``responsibly`` wheel on PyPI).
Rows with missing values are dropped and ``education-num`` is removed, since
it duplicates ``education``.

CO2: weekly Mauna Loa record bundled with statsmodels, averaged per month.

    python scripts/build_data.py --adult-dir /path/to/uci/adult
"""

from __future__ import annotations

import argparse
import csv
import gzip
import io
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "fmeval" / "data"

RAW_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]


def build_adult(adult_dir: Path) -> int:
    rows = []
    for name in ("adult.data", "adult.test"):
        for line in (adult_dir / name).read_text().splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            values = [v.strip() for v in line.split(",")]
            if "?" in values:
                continue
            values[-1] = values[-1].rstrip(".")
            record = dict(zip(RAW_COLUMNS, values))
            del record["education-num"]
            rows.append(record)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=[c for c in RAW_COLUMNS if c != "education-num"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    # mtime=0 keeps the archive byte-stable across rebuilds
    with open(OUT / "adult.csv.gz", "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(buf.getvalue().encode("utf-8"))
    return len(rows)


def build_co2() -> int:
    import statsmodels.api as sm

    weekly = sm.datasets.co2.load_pandas().data["co2"].dropna()
    monthly = weekly.groupby([weekly.index.year, weekly.index.month]).mean()
    with open(OUT / "co2_monthly.csv", "w", newline="") as fh:
        fh.write("x,y\n")
        for (year, month), value in monthly.items():
            # mid-month in fractional years
            fh.write(f"{year + (month - 0.5) / 12:.4f},{value:.3f}\n")
    return len(monthly)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--adult-dir", type=Path, required=True)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    print("adult rows:", build_adult(args.adult_dir))
    print("co2 months:", build_co2())


if __name__ == "__main__":
    main()
