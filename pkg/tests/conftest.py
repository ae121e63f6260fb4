import json

import pytest

from vistaopt.backends.synthetic import (
    SyntheticBackend,
    SyntheticWorldConfig,
    make_synthetic_dataset,
)
from vistaopt.domain import default_taxonomy, load_seed_prompt


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


@pytest.fixture(scope="session")
def dataset_50():
    return make_synthetic_dataset(50, 50)


@pytest.fixture(scope="session")
def defective_seed():
    return load_seed_prompt("defective")


@pytest.fixture(scope="session")
def repaired_seed():
    return load_seed_prompt("repaired")


@pytest.fixture(scope="session")
def minimal_seed():
    return load_seed_prompt("minimal")


@pytest.fixture()
def world():
    return SyntheticWorldConfig()


@pytest.fixture()
def synthetic_backend(world, dataset_50, taxonomy):
    return SyntheticBackend(world, dataset_50, taxonomy, run_seed=0)


@pytest.fixture()
def dataset_files(tmp_path):
    """Small JSONL train/val fixture on disk."""
    def write(path, prefix, n):
        lines = []
        for i in range(n):
            lines.append(json.dumps({
                "id": f"{prefix}-{i}",
                "question": f"What is {i} + {i}?",
                "answer": f"reasoning here\n#### {2 * i}",
            }))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    train = tmp_path / "train.jsonl"
    val = tmp_path / "val.jsonl"
    write(train, "train", 50)
    write(val, "val", 50)
    return train, val
