import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_income
from fmeval.domain import CATEGORICAL, ContextBlock, EvalMode, Example, FeatureSchema, SeriesDataset, TabularDataset
from fmeval.errors import InvalidContext, InvalidData
from fmeval.transforms import (
    HINT_TEMPLATE,
    PerturbationRecipe,
    SemanticSchema,
    TaskDescription,
    adult_recipe,
    base_task,
    co2_recipe,
    contextualize,
    decontextualize,
    dumps_recipe,
    find_blocklisted,
    numerize,
    perturb_series,
    perturb_tabular,
    verbal_text,
    verbalize,
)

EDUCATION = ("Preschool", "1st-4th", "5th-6th", "7th-8th", "9th", "10th", "11th", "12th", "HS-grad",
             "Some-college", "Assoc-voc", "Assoc-acdm", "Bachelors", "Masters", "Prof-school", "Doctorate")


def edu_age_ds():
    schema = (FeatureSchema("education", CATEGORICAL, EDUCATION), FeatureSchema("age"))
    rows = (Example(("Doctorate", 33.0), 1, 0), Example(("Preschool", 0.0), 0, 1), Example(("HS-grad", 100.0), 0, 2))
    return TabularDataset(schema, rows, FeatureSchema("income", CATEGORICAL, ("low", "high")))


def test_numerize_top_level_and_age():
    out = numerize(edu_age_ds())
    assert out.rows[0].features == pytest.approx((1.0, 0.33))


def test_numerize_binary_levels():
    schema = (FeatureSchema("smoker", CATEGORICAL, ("no", "yes")),)
    ds = TabularDataset(schema, (Example(("no",), 0.0, 0), Example(("yes",), 1.0, 1)), FeatureSchema("y"))
    assert [r.features[0] for r in numerize(ds).rows] == [0.0, 1.0]


def test_numerize_strips_all_names():
    ds = small_income()
    out = numerize(ds)
    text = repr(out)
    for name in ds.feature_names + [ds.target_schema.name, "years"]:
        assert name not in text
    assert out.context is None
    assert out.feature_names == ["feature 0", "feature 1", "feature 2"]


def test_numerize_unknown_level():
    ds = small_income()
    sem = SemanticSchema.fit(ds)
    other = FeatureSchema("degree", CATEGORICAL, ("HS-grad", "Bachelors", "Masters", "Doctorate", "PhD"))
    bad = TabularDataset((other,) + ds.schema[1:], (Example(("PhD", 30.0, 5.0), 0, 0),), ds.target_schema)
    with pytest.raises(InvalidData):
        numerize(bad, sem)


def test_numerize_training_values_in_unit_interval(adult_perturbed):
    sample = adult_perturbed.with_rows(adult_perturbed.rows[:3000])
    m = numerize(sample).matrix()
    assert m.min() >= 0.0 and m.max() <= 1.0


def test_decontextualize_templates():
    ball = TaskDescription("A ball is thrown upward; predict its height over time.", EvalMode.POSTERIOR_FULL,
                           "hint", "regression", 0)
    out = decontextualize(ball)
    assert out.text.lower() == "this is a regression task where we predict y from x given some training data."
    assert out.hint is None and out.mode_tag is EvalMode.LIKELIHOOD_ONLY
    assert decontextualize(out) == out


def test_decontextualize_income_passes_blocklist():
    ds = small_income()
    out = decontextualize(base_task(ds))
    assert "predict the class (0 or 1) given the features" in out.text
    assert find_blocklisted(out.text, SemanticSchema.fit(ds).blocklist()) == []
    assert "income" not in out.text.lower()


def test_decontextualize_passes_blocklist_on_adult(adult_perturbed):
    out = decontextualize(base_task(adult_perturbed))
    assert find_blocklisted(out.text, SemanticSchema.fit(adult_perturbed).blocklist()) == []


def test_verbalize_example_row():
    schema = (FeatureSchema("Gender", CATEGORICAL, ("Male", "Female")),
              FeatureSchema("Marriage status", CATEGORICAL, ("single", "married")),
              FeatureSchema("Age"))
    rows = (Example(("Female", "married", 27.0), 0.0, 0), Example(("Male", "single", 60.0), 1.0, 1))
    ds = TabularDataset(schema, rows, FeatureSchema("y"))
    sem = SemanticSchema.fit(ds)
    back = verbalize(numerize(ds, sem), sem)
    assert verbal_text(back.rows[0], back.schema) == "{Gender=Female, Marriage status=married, Age=27}"


def test_verbalize_denormalizes_with_integer_rounding():
    schema = (FeatureSchema("Age"),)
    ds = TabularDataset(schema, (Example((0.0,), 0.0, 0), Example((100.0,), 0.0, 1)), FeatureSchema("y"))
    sem = SemanticSchema.fit(ds)
    coded = TabularDataset((FeatureSchema("feature 0"),), (Example((0.33,), 0.0, 0),), FeatureSchema("y"))
    out = verbalize(coded, sem)
    assert verbal_text(out.rows[0], out.schema) == "{Age=33}"


def test_verbalize_rejects_undecodable_code():
    ds = small_income()
    sem = SemanticSchema.fit(ds)
    coded = numerize(ds, sem)
    bad = coded.with_rows([Example((0.5, 0.1, 0.1), 0, 0)])  # 0.5 is between levels 1/3 and 2/3
    with pytest.raises(InvalidData):
        verbalize(bad, sem)


def test_verbalize_inverts_numerize_on_adult(adult_perturbed):
    ds = adult_perturbed.with_rows(adult_perturbed.rows[:2000])
    sem = SemanticSchema.fit(ds)
    back = verbalize(numerize(ds, sem), sem)
    for i, f in enumerate(ds.schema):
        if f.is_categorical:
            assert back.column(f.name) == ds.column(f.name)
    # integral columns come back exactly; the others within the 2-decimal rounding rule
    for i, f in enumerate(ds.schema):
        if not f.is_categorical:
            got = np.array(back.column(f.name), dtype=float)
            want = np.array(ds.column(f.name), dtype=float)
            assert np.max(np.abs(got - want)) <= 0.005 + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(EDUCATION), st.integers(17, 90)), min_size=2, max_size=25))
def test_verbalize_numerize_property(cells):
    schema = (FeatureSchema("education", CATEGORICAL, EDUCATION), FeatureSchema("age"))
    rows = tuple(Example((e, float(a)), 0, i) for i, (e, a) in enumerate(cells))
    ds = TabularDataset(schema, rows, FeatureSchema("c", CATEGORICAL, ("a", "b")))
    sem = SemanticSchema.fit(ds)
    coded = numerize(ds, sem)
    assert all(0.0 <= v <= 1.0 for r in coded.rows for v in r.features)
    assert verbalize(coded, sem).rows == ds.rows


def test_contextualize_hint_and_explanations():
    ds = small_income()
    out = contextualize(base_task(ds), ds.context)
    assert "actively make use of any domain knowledge" in out.hint
    assert out.mode_tag is EvalMode.POSTERIOR_FULL
    for text in ds.context.feature_explanations.values():
        assert text in out.text


def test_contextualize_keyword_substitution():
    ctx = ContextBlock("finance", "Predict the stock move.")
    out = contextualize(base_task(small_income()), ctx)
    assert "finance" in out.hint
    assert "[keywords]" not in out.hint and "{keywords}" not in out.hint
    assert out.hint == HINT_TEMPLATE.format(keywords="finance")


def test_contextualize_needs_domain_name():
    with pytest.raises(InvalidContext):
        contextualize(base_task(small_income()), ContextBlock("  ", "x"))


def test_recipe_invariants():
    with pytest.raises(InvalidData):
        PerturbationRecipe(renames={"a": "b", "b": "c"})
    with pytest.raises(InvalidData):
        PerturbationRecipe(merges=({"inputs": ["a", "a"], "output": "z"},))


def test_perturb_adult_schema(adult, adult_perturbed):
    names = adult_perturbed.feature_names
    assert "degree" in names and "education" not in names
    renamed = set(adult_recipe().renames)
    assert not renamed & set(names)
    assert "hours per day" in names and "capital net gain" in names
    assert len(adult_perturbed) == len(adult)
    assert adult_perturbed.class_counts() == adult.class_counts()
    marital = adult_perturbed.schema[adult_perturbed.index_of("marital status")]
    assert marital.levels == ("not married", "married")


def test_perturb_adult_values(adult, adult_perturbed):
    gain = np.array(adult.column("capital-gain"), dtype=float)
    loss = np.array(adult.column("capital-loss"), dtype=float)
    net = np.array(adult_perturbed.column("capital net gain"), dtype=float)
    assert np.array_equal(net, gain - loss)
    hours = np.array(adult.column("hours-per-week"), dtype=float)
    assert np.allclose(np.array(adult_perturbed.column("hours per day"), dtype=float), hours / 7)


def test_merge_gain_minus_loss():
    schema = (FeatureSchema("capital-gain"), FeatureSchema("capital-loss"))
    ds = TabularDataset(schema, (Example((5000.0, 1000.0), 0.0, 0),), FeatureSchema("y"))
    rec = PerturbationRecipe(merges=({"inputs": ["capital-gain", "capital-loss"], "output": "capital net gain",
                                      "combiner": "difference"},))
    out = perturb_tabular(ds, rec)
    assert out.feature_names == ["capital net gain"]
    assert out.rows[0].features == (4000.0,)


def test_age_noise_is_uniform_integer_in_range():
    n = 10_000
    schema = (FeatureSchema("age"),)
    ds = TabularDataset(schema, tuple(Example((50.0,), 0.0, i) for i in range(n)), FeatureSchema("y"))
    rec = PerturbationRecipe(noise_specs={"age": {"dist": "uniform_int", "low": -2, "high": 2, "clip": [17, 90]}})
    delta = np.array(perturb_tabular(ds, rec, seed=5).column("age")) - 50.0
    values, counts = np.unique(delta, return_counts=True)
    assert values.tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    # chi-square against uniform, 4 dof; 18.47 is the 0.999 quantile
    expected = n / 5
    assert float(np.sum((counts - expected) ** 2 / expected)) < 18.47


def test_perturb_schema_mismatch():
    ds = small_income()
    with pytest.raises(InvalidData):
        perturb_tabular(ds, PerturbationRecipe(renames={"nope": "other"}))


def test_perturb_adult_is_bit_reproducible(adult):
    from fmeval.transforms import perturb_adult

    head = adult.with_rows(adult.rows[:500])
    a, b = perturb_adult(head, seed=3), perturb_adult(head, seed=3)
    assert a == b
    assert perturb_adult(head, seed=4) != a


def series_of(value, n):
    return SeriesDataset(tuple((float(i), value) for i in range(n)))


def test_series_noise_mean_and_sd():
    s = series_of(330.0, 10_000)
    out = perturb_series(s, co2_recipe(seed=1))
    delta = out.y - s.y
    assert abs(delta.mean() - 2.0) < 0.01  # 4 standard errors of 0.001
    assert abs(delta.std(ddof=1) - 0.1) < 0.003
    assert np.array_equal(out.x, s.x)


def test_series_shift_only():
    s = series_of(330.0, 3)
    out = perturb_series(s, PerturbationRecipe(applies_to="series", shift=1.0))
    assert out.y.tolist() == [331.0, 331.0, 331.0]


def test_series_perturbation_reproducible():
    s = series_of(330.0, 100)
    assert perturb_series(s, co2_recipe(seed=9)) == perturb_series(s, co2_recipe(seed=9))


def test_co2_recipe_hides_metadata():
    from fmeval.datasets import load_co2

    out = perturb_series(load_co2(), co2_recipe())
    assert out.name == "" and out.context.source_prose is None


def test_recipe_yaml_round_trip(tmp_path):
    from fmeval.transforms import load_recipe, save_recipe

    rec = adult_recipe(seed=7)
    save_recipe(rec, tmp_path / "r.yaml")
    assert dumps_recipe(load_recipe(tmp_path / "r.yaml")) == dumps_recipe(rec)
