import json
import logging
import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from boolean_analysis import builtin_functions
from feedback_catalog import catalog_from_lines, load_catalog, verify_catalog
from protocol import UirStore
from suc_genie import EntropySource, genie_create

ROOT = Path(__file__).resolve().parent.parent
SHIPPED_CATALOG = ROOT / "data" / "nlfsr_catalog.tsv"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

# Три LFSR с примитивными многочленами: все четыре формы имеют максимальный период
TOY_CATALOG_LINES = [
    "# игрушечный каталог",
    "3\t1\tx^3+x+1",
    "4\t1\tx^4+x+1",
    "5\t2\tx^5+x^2+1",
]

TEST_SEED = bytes(range(32))


def pytest_configure(config):
    """Конфигурация pytest"""
    config.addinivalue_line(
        "markers", "slow: отмечает тесты как медленные (полные каталоги, большие выборки)"
    )
    config.addinivalue_line(
        "markers", "integration: отмечает интеграционные тесты"
    )


def pytest_collection_modifyitems(config, items):
    """Автоматически пропускаем медленные тесты если не указан флаг"""
    if config.getoption("--run-slow"):
        return

    skip_slow = pytest.mark.skip(reason="добавьте --run-slow для запуска медленных тестов")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def pytest_addoption(parser):
    """Добавляем опции командной строки"""
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="запускать медленные тесты"
    )


@pytest.fixture
def toy_catalog():
    """Проверенный игрушечный каталог длин 3, 4, 5"""
    catalog = catalog_from_lines(TOY_CATALOG_LINES, allowed_lengths=None, source="toy")
    report = verify_catalog(catalog, workers=1)
    assert report.ok
    return catalog


@pytest.fixture
def toy_catalog_file(tmp_path):
    """Игрушечный каталог на диске"""
    path = tmp_path / "toy_catalog.tsv"
    path.write_text("\n".join(TOY_CATALOG_LINES) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def maj3():
    return builtin_functions()["MAJ3"]


@pytest.fixture(scope="session")
def shipped_catalog():
    """Поставляемый каталог без проверки периодов"""
    if not SHIPPED_CATALOG.exists():
        pytest.skip("каталог data/nlfsr_catalog.tsv отсутствует")
    return load_catalog(SHIPPED_CATALOG)


@pytest.fixture(scope="session")
def verified_shipped_catalog():
    """Поставляемый каталог после полной проверки (минуты на N = 23)"""
    if not SHIPPED_CATALOG.exists():
        pytest.skip("каталог data/nlfsr_catalog.tsv отсутствует")
    catalog = load_catalog(SHIPPED_CATALOG)
    report = verify_catalog(catalog)
    assert report.ok, report.summary()["failures"]
    return catalog


@pytest.fixture
def full_suc(shipped_catalog):
    """Полный экземпляр с F16 из фиксированного зерна"""
    catalog = load_catalog(SHIPPED_CATALOG)
    # периоды поставляемого каталога проверяет медленный тест каталога
    for entry in catalog.iter_entries():
        entry.verified = True
    return genie_create(catalog, EntropySource.seeded(TEST_SEED))


@pytest.fixture
def seeded_entropy():
    return EntropySource.seeded(TEST_SEED)


@pytest.fixture
def uir_store(tmp_path):
    return UirStore(tmp_path / "uir.jsonl")


@pytest.fixture
def golden():
    """
    Сравнение с эталоном из tests/golden/<name>.json.
    Отсутствующий эталон - ошибка; SUC_UPDATE_GOLDEN=1 перезаписывает эталоны.
    """
    def check(name, value):
        path = GOLDEN_DIR / f"{name}.json"
        if os.getenv("SUC_UPDATE_GOLDEN") == "1":
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(value, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        if not path.exists():
            pytest.fail(f"эталон {path} отсутствует (SUC_UPDATE_GOLDEN=1 для записи)")
        assert json.loads(path.read_text(encoding="utf-8")) == value

    return check


@pytest.fixture(autouse=True)
def reset_cli_logging():
    """Снимает обработчики логов, добавленные командной строкой"""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_suc_kit", False):
            root.removeHandler(handler)
            handler.close()
