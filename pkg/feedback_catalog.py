"""
Каталог функций обратной связи для SUC-kit

Слой данных для множеств S_N: загрузка, развертывание четырех форм,
подсчет |A_i| по позициям регистров и исчерпывающая проверка периодов.

Формат файла: UTF-8, одна запись на строку "N<TAB>rff<TAB>provenance",
строки с '#' - комментарии.
"""

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from nlfsr_core import (
    FORM_ORDER,
    AnfFunction,
    FeedbackForm,
    FeedbackSpec,
    PeriodReport,
    RffParseError,
    derive_form,
    format_rff,
    parse_rff,
    spec_to_text,
    verify_max_period,
)

logger = logging.getLogger(__name__)

DESIGN_LENGTHS: Tuple[int, ...] = (6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 19, 21, 22, 23)

# Число отобранных NLFSR по длинам (все четыре формы)
PUBLISHED_COUNTS: Dict[int, int] = dict(zip(
    DESIGN_LENGTHS,
    (84, 160, 168, 160, 188, 200, 144, 144, 100, 96, 60, 60, 36, 16, 20, 12),
))

CATALOG_HEADER = (
    "# Каталог RFF максимального периода для SUC-kit",
    "# Формат: N<TAB>rff<TAB>provenance; каждая строка разворачивается в четыре формы",
)


class CatalogError(ValueError):
    """Некорректный каталог"""


class CatalogVerificationError(CatalogError):
    """Каталог не прошел проверку периодов"""


@dataclass
class CatalogEntry:
    """Базовая RFF одной длины; verified выставляет только verify_catalog"""
    length_n: int
    basic_rff: AnfFunction
    provenance: str = ""
    verified: bool = False

    @property
    def rff_text(self) -> str:
        return format_rff(self.basic_rff)


def expand_forms(entry: CatalogEntry) -> List[FeedbackSpec]:
    """basic, reverse, complement, reverse_complement"""
    return [derive_form(entry.basic_rff, entry.length_n, form) for form in FORM_ORDER]


@dataclass
class Catalog:
    """Каталог: длина -> записи и развернутые спецификации"""
    entries: Dict[int, List[CatalogEntry]] = field(default_factory=dict)
    allowed_lengths: Optional[Tuple[int, ...]] = DESIGN_LENGTHS

    def __post_init__(self):
        seen = set()
        for n, items in self.entries.items():
            for entry in items:
                if entry.length_n != n:
                    raise CatalogError(f"запись N={entry.length_n} лежит в разделе N={n}")
                self._check_length(n)
                for spec in expand_forms(entry):
                    key = (n, spec.rff)
                    if key in seen:
                        raise CatalogError(f"дублирующаяся запись N={n}: {entry.rff_text}")
                    seen.add(key)

    def _check_length(self, n: int):
        if self.allowed_lengths is not None and n not in self.allowed_lengths:
            raise CatalogError(f"длина N={n} вне набора {self.allowed_lengths}")

    @property
    def lengths(self) -> Tuple[int, ...]:
        """Длины, для которых есть хотя бы одна запись"""
        return tuple(sorted(n for n, items in self.entries.items() if items))

    @property
    def positions(self) -> Tuple[int, ...]:
        """Длины регистров по позициям 1..m (по возрастанию)"""
        if self.allowed_lengths is not None:
            return tuple(self.allowed_lengths)
        return self.lengths

    def specs(self, n: int) -> List[FeedbackSpec]:
        """Все формы всех записей длины n; индекс j = 4 * номер_записи + номер_формы"""
        return [spec for entry in self.entries.get(n, []) for spec in expand_forms(entry)]

    def spec_at(self, n: int, index: int) -> FeedbackSpec:
        """Форма номер index среди A_N: запись index // 4, форма index % 4"""
        items = self.entries.get(n, [])
        if not 0 <= index < 4 * len(items):
            raise CatalogError(f"индекс {index} вне диапазона для N={n} (|A|={4 * len(items)})")
        entry = items[index // 4]
        return derive_form(entry.basic_rff, n, FORM_ORDER[index % 4])

    def spec_by_form(self, n: int, entry_index: int, form: FeedbackForm) -> FeedbackSpec:
        """Адресация (N, index, form)"""
        return self.spec_at(n, 4 * entry_index + FORM_ORDER.index(form))

    @property
    def counts(self) -> Tuple[int, ...]:
        """|A_i| по позициям регистров"""
        return tuple(4 * len(self.entries.get(n, [])) for n in self.positions)

    @property
    def entry_count(self) -> int:
        """Число базовых записей"""
        return sum(len(items) for items in self.entries.values())

    @property
    def is_fully_verified(self) -> bool:
        return self.entry_count > 0 and all(
            entry.verified for items in self.entries.values() for entry in items
        )

    def iter_entries(self) -> Iterable[CatalogEntry]:
        """Записи по возрастанию N в порядке файла"""
        for n in sorted(self.entries):
            yield from self.entries[n]


def catalog_from_lines(lines: Iterable[str], allowed_lengths: Optional[Sequence[int]] = DESIGN_LENGTHS,
                       source: str = "<lines>") -> Catalog:
    """Разбирает строки формата N<TAB>rff[<TAB>provenance]; # - комментарий"""
    entries: Dict[int, List[CatalogEntry]] = {}
    allowed = tuple(allowed_lengths) if allowed_lengths is not None else None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise CatalogError(f"{source}:{lineno}: ожидалось 'N<TAB>rff[<TAB>provenance]'")
        try:
            n = int(parts[0])
        except ValueError:
            raise CatalogError(f"{source}:{lineno}: некорректная длина {parts[0]!r}")
        if allowed is not None and n not in allowed:
            raise CatalogError(f"{source}:{lineno}: длина N={n} вне набора {allowed}")
        try:
            rff = parse_rff(parts[1], n)
        except RffParseError as e:
            raise CatalogError(f"{source}:{lineno}: {e}") from e
        provenance = "\t".join(parts[2:]).strip()
        entries.setdefault(n, []).append(CatalogEntry(n, rff, provenance))
    return Catalog(entries, allowed)


def load_catalog(path: Union[str, Path], allowed_lengths: Optional[Sequence[int]] = DESIGN_LENGTHS) -> Catalog:
    """Загружает каталог из файла"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            catalog = catalog_from_lines(f, allowed_lengths, source=str(path))
    except OSError as e:
        raise CatalogError(f"не удалось прочитать каталог {path}: {e}") from e
    logger.info(f"✅ Каталог {path.name}: {catalog.entry_count} базовых записей, длины {catalog.lengths}")
    return catalog


def serialize_catalog(catalog: Catalog, with_provenance: bool = True) -> str:
    """Текст каталога; без provenance - каноническая форма для отпечатка"""
    lines = list(CATALOG_HEADER) if with_provenance else []
    for entry in catalog.iter_entries():
        fields_ = [str(entry.length_n), entry.rff_text]
        if with_provenance and entry.provenance:
            fields_.append(entry.provenance)
        lines.append("\t".join(fields_))
    return "\n".join(lines) + "\n"


def save_catalog(catalog: Catalog, path: Union[str, Path]):
    """Атомарная запись через временный файл"""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_catalog(catalog))
    os.replace(tmp, path)
    logger.info(f"✅ Каталог сохранен в {path}")


def fingerprint(catalog: Catalog) -> bytes:
    """SHA-256 канонической сериализации (без комментариев и provenance)"""
    return hashlib.sha256(serialize_catalog(catalog, with_provenance=False).encode("utf-8")).digest()


@dataclass
class CatalogVerificationReport:
    """Итог исчерпывающей проверки каталога"""
    results: List[Tuple[FeedbackSpec, PeriodReport]]
    counts: Dict[int, int]

    @property
    def failures(self) -> List[Tuple[FeedbackSpec, PeriodReport]]:
        return [(spec, rep) for spec, rep in self.results if not rep.is_max_period]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> Dict[str, object]:
        return {
            "specs_checked": len(self.results),
            "failures": [spec_to_text(spec) for spec, _ in self.failures],
            "counts": {str(n): c for n, c in sorted(self.counts.items())},
            "published_counts": {str(n): PUBLISHED_COUNTS.get(n) for n in sorted(self.counts)},
            "ok": self.ok,
        }


def verify_catalog(catalog: Catalog, workers: Optional[int] = None, progress: bool = False) -> CatalogVerificationReport:
    """
    Прогоняет каждую форму каждой записи через verify_max_period.

    Записи распределяются по пулу потоков; флаг verified выставляется записи,
    только если все четыре ее формы имеют период 2^N - 1.
    """
    jobs = [(entry, spec) for entry in catalog.iter_entries() for spec in expand_forms(entry)]
    # крупные регистры первыми, чтобы хвост пула был коротким
    schedule = sorted(range(len(jobs)), key=lambda i: -jobs[i][0].length_n)
    workers = workers or os.cpu_count() or 1
    logger.info(f"🔄 Проверка {len(jobs)} спецификаций в {workers} потоках")

    by_entry: Dict[int, List[PeriodReport]] = {}
    reports: List[Optional[PeriodReport]] = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(verify_max_period, jobs[i][1]): i for i in schedule}
        for future in tqdm(as_completed(futures), total=len(futures), desc="verify", disable=not progress):
            i = futures[future]
            reports[i] = future.result()
            by_entry.setdefault(id(jobs[i][0]), []).append(reports[i])
    results = [(spec, rep) for (_, spec), rep in zip(jobs, reports)]

    for entry in catalog.iter_entries():
        entry_reports = by_entry.get(id(entry), [])
        entry.verified = len(entry_reports) == 4 and all(r.is_max_period for r in entry_reports)

    report = CatalogVerificationReport(results, {n: c for n, c in zip(catalog.positions, catalog.counts)})
    if report.ok:
        logger.info(f"✅ Все {len(results)} спецификаций имеют максимальный период")
    else:
        for spec, rep in report.failures:
            logger.error(f"❌ {spec_to_text(spec)}: период {rep.period} вместо {(1 << rep.length_n) - 1}")
    return report


def published_count_comparison(catalog: Catalog) -> List[Dict[str, int]]:
    """Сравнение |A_i| каталога с таблицей отобранных NLFSR"""
    return [
        {"position": i, "length": n, "shipped": count, "published": PUBLISHED_COUNTS.get(n)}
        for i, (n, count) in enumerate(zip(catalog.positions, catalog.counts), start=1)
    ]


def cardinality_log2(source: Union[Catalog, Sequence[int]]) -> float:
    """Σ log2|A_i| по позициям регистров"""
    counts = source.counts if isinstance(source, Catalog) else tuple(source)
    if any(c < 1 for c in counts):
        raise CatalogError(f"пустое множество функций в позиции: {counts}")
    return sum(math.log2(c) for c in counts)


def debruijn_count_log2(lengths: Sequence[int]) -> int:
    """Показатель Σ(2^{N-1} - N + 1): число модифицированных последовательностей де Брейна"""
    return sum((1 << (n - 1)) - n + 1 for n in lengths)


def debruijn_full_period_count_log2(lengths: Sequence[int]) -> int:
    """Показатель Σ(2^{N-1} - N): число последовательностей де Брейна периода 2^N"""
    return sum((1 << (n - 1)) - n for n in lengths)
