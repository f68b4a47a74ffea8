import numpy as np
import pytest

from dcrec.data import Dataset, FeatureSchema, Field

ACCEPTANCE_LOG: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for the acceptance summary."""

    def log(criterion: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LOG.append((criterion, bool(passed), detail))

    return log


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_LOG:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")


def small_schema(n_users=3, n_items=4, K=3, content=(2,)) -> FeatureSchema:
    fields = [Field("user_id", n_users, "user"), Field("item_id", n_items, "item")]
    fields += [Field(f"c{j}", card, "item") for j, card in enumerate(content)]
    fields.append(Field("a", K, "item"))
    return FeatureSchema(tuple(fields), len(fields) - 1)


def random_dataset(schema: FeatureSchema, n: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    feats = np.stack([rng.integers(0, f.cardinality, n) for f in schema.fields], axis=1)
    return Dataset(
        schema,
        feats[:, schema.index("user_id")],
        feats[:, schema.index("item_id")],
        feats,
        rng.integers(0, 2, n),
        rng.integers(0, 2, n),
    )


@pytest.fixture
def schema():
    return small_schema()
