from __future__ import annotations

import pytest

from fmeval.domain import (
    CATEGORICAL,
    ContextBlock,
    Example,
    FeatureSchema,
    TabularDataset,
)


def small_income(n: int = 40) -> TabularDataset:
    """A toy income-like dataset with one categorical and two numeric features."""
    schema = (
        FeatureSchema("degree", CATEGORICAL, ("HS-grad", "Bachelors", "Masters", "Doctorate")),
        FeatureSchema("age", unit="years"),
        FeatureSchema("hours", unit="hours"),
    )
    rows = []
    for i in range(n):
        deg = schema[0].levels[i % 4]
        age = 20 + (i * 7) % 50
        hours = 4 + (i * 3) % 9
        label = int(i % 4 >= 2 and age > 30)
        rows.append(Example((deg, float(age), float(hours)), label, i))
    ctx = ContextBlock(
        domain_name="income prediction",
        task_prose="Predict whether a person earns above the income threshold.",
        feature_explanations={"degree": "highest degree", "age": "age in years"},
        source_prose="Records come from a census survey.",
        label_phrases={"low": "low income", "high": "high income"},
    )
    return TabularDataset(schema, tuple(rows), FeatureSchema("income", CATEGORICAL, ("low", "high")), ctx, "toy")


@pytest.fixture
def income() -> TabularDataset:
    return small_income()


@pytest.fixture(scope="session")
def adult():
    from fmeval.datasets import load_adult

    return load_adult()


@pytest.fixture(scope="session")
def adult_perturbed(adult):
    from fmeval.transforms import perturb_adult

    return perturb_adult(adult, seed=0)
