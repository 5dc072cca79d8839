"""Loaders for the datasets bundled with the package.

``adult.csv.gz`` holds the 45,222 complete rows of UCI Adult (train and test
files combined, ``education-num`` dropped). ``co2_monthly.csv`` holds monthly
means of the Mauna Loa weekly CO2 record, x in fractional years.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from fmeval.domain import ContextBlock, SeriesDataset, TabularDataset, read_dataset, read_series


def data_path(name: str) -> Path:
    return Path(str(resources.files("fmeval") / "data" / name))


def adult_paths() -> tuple[Path, Path]:
    return data_path("adult.csv.gz"), data_path("adult.schema.yaml")


def load_adult() -> TabularDataset:
    csv_path, schema_path = adult_paths()
    ds = read_dataset(csv_path, schema_path)
    return ds if ds.name else _named(ds, "adult")


def _named(ds: TabularDataset, name: str) -> TabularDataset:
    from dataclasses import replace

    return replace(ds, name=name)


CO2_CONTEXT = ContextBlock(
    domain_name="climate science and atmospheric carbon dioxide",
    task_prose=(
        "Below you are asked to predict the atmospheric CO2 concentration level (in ppm) "
        "at a given time, given monthly measurements from earlier years."
    ),
    feature_explanations={"time": "the time of the measurement in fractional years"},
    source_prose="The measurements were taken at the Mauna Loa Observatory in Hawaii.",
)


def load_co2() -> SeriesDataset:
    return read_series(data_path("co2_monthly.csv"), x_unit="year", y_unit="ppm",
                       context=CO2_CONTEXT, name="mauna-loa-co2")
