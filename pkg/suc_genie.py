"""
GENIE для SUC-kit

Одноразовое случайное создание секретного неизвестного шифра (SUC) из
каталога: выбор одной функции обратной связи на каждую позицию регистра,
случайное невырожденное начальное состояние, затем интерфейс устройства
"cmd -> следующий ответ Y".

Секретные данные (выбор, состояния, ответы) не логируются.
"""

import hashlib
import logging
import math
import secrets
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from boolean_analysis import combiner_f16
from feedback_catalog import Catalog, CatalogError, CatalogVerificationError, cardinality_log2, fingerprint
from ksg import Ksg, KsgConfig, KsgState, full_config
from nlfsr_core import AnfFunction, RffParseError, degenerate_state, format_anf, parse_anf

logger = logging.getLogger(__name__)

MAGIC = b"SUC1"
BLOB_VERSION = 1
SEED_SIZE = 32
_CRC = struct.Struct(">I")


class GenieError(ValueError):
    """Ошибка создания или использования SUC"""


class BlobIntegrityError(GenieError):
    """Поврежденный или чужой blob"""


class SucDestroyedError(GenieError):
    """Экземпляр уже уничтожен"""


@dataclass(frozen=True)
class DrawRecord:
    """Запись аудита: назначение и позиции потока, без самих значений"""
    purpose: str
    start: int
    end: int


class EntropySource:
    """
    Источник случайности GENIE.

    os - системный CSPRNG (secrets), ничего не запоминает.
    seeded - SHAKE-256 от 32-байтного зерна как детерминированный поток;
    только для тестов и воспроизводимых демонстраций.
    """

    def __init__(self, seed: Optional[bytes] = None):
        if seed is not None and len(seed) != SEED_SIZE:
            raise GenieError(f"зерно должно быть {SEED_SIZE} байта, получено {len(seed)}")
        self._seed = bytes(seed) if seed is not None else None
        self._position = 0
        self.audit: List[DrawRecord] = []
        if seed is not None:
            logger.debug("⚠️ Детерминированный источник энтропии (тестовый режим)")

    @classmethod
    def os(cls) -> "EntropySource":
        return cls()

    @classmethod
    def seeded(cls, seed: bytes) -> "EntropySource":
        return cls(seed)

    @property
    def mode(self) -> str:
        return "seeded" if self._seed is not None else "os"

    @property
    def position(self) -> int:
        return self._position

    def read(self, nbytes: int, purpose: str) -> bytes:
        if self._seed is None:
            return secrets.token_bytes(nbytes)
        start = self._position
        end = start + nbytes
        data = hashlib.shake_256(self._seed).digest(end)[start:]
        self._position = end
        self.audit.append(DrawRecord(purpose, start, end))
        return data

    def randbelow(self, bound: int, purpose: str) -> int:
        """Равномерное число из [0, bound) отбраковкой"""
        if bound < 1:
            raise GenieError(f"граница выборки должна быть >= 1, получено {bound}")
        if self._seed is None:
            return secrets.randbelow(bound)
        bits = (bound - 1).bit_length()
        if bits == 0:
            return 0
        nbytes = (bits + 7) // 8
        mask = (1 << bits) - 1
        while True:
            value = int.from_bytes(self.read(nbytes, purpose), "big") & mask
            if value < bound:
                return value


@dataclass(frozen=True)
class SucSnapshot:
    """Сохраненное состояние S_{i-1} устройства"""
    state: KsgState
    cursor: int


@dataclass(eq=False)
class SucInstance:
    """
    Экземпляр SUC: конфигурация KSG и секретные буферы.

    Выбор и начальное состояние хранятся в bytearray, destroy() их затирает.
    Владелец один; respond строго последователен.
    """
    catalog_fingerprint: bytes
    config: KsgConfig
    _selection: bytearray
    _initial: bytearray
    _generator: Optional[Ksg]
    response_cursor: int = 0
    scrub_hooks: List[Callable[[Sequence[bytearray]], None]] = field(default_factory=list)

    @property
    def destroyed(self) -> bool:
        return self._generator is None

    def _live(self) -> Ksg:
        if self._generator is None:
            raise SucDestroyedError("экземпляр SUC уничтожен")
        return self._generator

    @property
    def selection(self) -> Tuple[int, ...]:
        self._live()
        return _unpack_selection(self._selection)

    @property
    def initial_state(self) -> Tuple[int, ...]:
        self._live()
        return _unpack_states(self.config.lengths, self._initial)

    @property
    def current_state(self) -> KsgState:
        return self._live().state

    @property
    def lengths(self) -> Tuple[int, ...]:
        return self.config.lengths

    def snapshot(self) -> SucSnapshot:
        return SucSnapshot(self._live().state, self.response_cursor)

    def restore(self, snapshot: SucSnapshot, cursor: Optional[int] = None):
        self._live().set_state(snapshot.state)
        self.response_cursor = snapshot.cursor if cursor is None else cursor

    def secret_buffers(self) -> Tuple[bytearray, bytearray]:
        return self._selection, self._initial

    def __eq__(self, other) -> bool:
        if not isinstance(other, SucInstance):
            return NotImplemented
        if self.destroyed or other.destroyed:
            return self is other
        return (
            self.catalog_fingerprint == other.catalog_fingerprint
            and self.config == other.config
            and self._selection == other._selection
            and self._initial == other._initial
            and self.current_state == other.current_state
            and self.response_cursor == other.response_cursor
        )


def _pack_selection(selection: Sequence[int]) -> bytearray:
    return bytearray(struct.pack(f">{len(selection)}H", *selection))


def _unpack_selection(buf: bytes) -> Tuple[int, ...]:
    return struct.unpack(f">{len(buf) // 2}H", bytes(buf))


def _state_width(n: int) -> int:
    return (n + 7) // 8


def _pack_states(lengths: Sequence[int], states: Sequence[int]) -> bytearray:
    out = bytearray()
    for n, s in zip(lengths, states):
        out += s.to_bytes(_state_width(n), "big")
    return out


def _unpack_states(lengths: Sequence[int], buf: bytes) -> Tuple[int, ...]:
    states = []
    offset = 0
    for n in lengths:
        width = _state_width(n)
        states.append(int.from_bytes(bytes(buf[offset:offset + width]), "big"))
        offset += width
    return tuple(states)


def genie_create(catalog: Catalog, entropy: EntropySource,
                 combiner: Optional[AnfFunction] = None) -> SucInstance:
    """
    Создает SUC: сначала индексы выбора по всем позициям, затем начальные
    состояния; вырожденное состояние перевыбирается.
    """
    if not catalog.is_fully_verified:
        raise CatalogVerificationError("каталог не проверен: запустите verify_catalog")
    counts = catalog.counts
    if any(c < 1 for c in counts):
        raise CatalogError(f"пустое множество S_N в позиции: {counts}")

    selection = [entropy.randbelow(c, f"selection[{i}]") for i, c in enumerate(counts, start=1)]
    config = full_config(catalog, selection, combiner)
    states = []
    for i, spec in enumerate(config.registers, start=1):
        excluded = degenerate_state(spec)
        while True:
            s = entropy.randbelow(1 << spec.length_n, f"state[{i}]")
            if s != excluded:
                break
        states.append(s)

    suc = SucInstance(
        catalog_fingerprint=fingerprint(catalog),
        config=config,
        _selection=_pack_selection(selection),
        _initial=_pack_states(config.lengths, states),
        _generator=Ksg(config, states),
    )
    states.clear()
    selection.clear()
    logger.info(
        f"✅ SUC создан: {len(config.registers)} регистров, {config.total_length} бит состояния, "
        f"каталог {suc.catalog_fingerprint.hex()[:16]}"
    )
    return suc


def respond(suc: SucInstance, k: int) -> np.ndarray:
    """Следующий k-битный ответ Y_cursor"""
    if k < 1:
        raise GenieError(f"k должно быть >= 1, получено {k}")
    bits = suc._live().next_bits(k)
    suc.response_cursor += 1
    return bits


def skip(suc: SucInstance, count: int, k: int):
    """Пропускает count ответов по k бит (догонка курсора)"""
    if count < 0:
        raise GenieError(f"count должно быть >= 0, получено {count}")
    if count:
        suc._live().next_bits(count * k)
        suc.response_cursor += count


def destroy(suc: SucInstance):
    """Затирает секретные буферы и отключает генератор"""
    buffers = suc.secret_buffers()
    for buf in buffers:
        for i in range(len(buf)):
            buf[i] = 0
    suc._generator = None
    for hook in suc.scrub_hooks:
        hook(buffers)
    logger.info("✅ SUC уничтожен, секретные буферы затерты")


def export_blob(suc: SucInstance) -> bytes:
    """
    MAGIC | version | fingerprint(32) | m | selection(u16 * m) |
    len(combiner) u16 | combiner | initial states | current states | t u64 | cursor u64 | crc32
    """
    generator = suc._live()
    combiner_text = format_anf(suc.config.combiner).encode("ascii")
    current = generator.state
    body = bytearray(MAGIC)
    body += struct.pack(">B32sB", BLOB_VERSION, suc.catalog_fingerprint, len(suc.config.registers))
    body += suc._selection
    body += struct.pack(">H", len(combiner_text)) + combiner_text
    body += suc._initial
    body += _pack_states(suc.config.lengths, current.register_states)
    body += struct.pack(">QQ", current.t, suc.response_cursor)
    body += _CRC.pack(zlib.crc32(body))
    return bytes(body)


def import_blob(data: bytes, catalog: Catalog) -> SucInstance:
    """Восстанавливает экземпляр; каталог должен совпадать по отпечатку"""
    if len(data) < len(MAGIC) + 34 + _CRC.size:
        raise BlobIntegrityError(f"blob слишком короткий: {len(data)} байт")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise BlobIntegrityError("контрольная сумма blob не совпадает")
    if body[:4] != MAGIC:
        raise BlobIntegrityError(f"неизвестная сигнатура {body[:4]!r}")
    version, fp, m = struct.unpack_from(">B32sB", body, 4)
    if version != BLOB_VERSION:
        raise BlobIntegrityError(f"неподдерживаемая версия blob {version}")
    if fp != fingerprint(catalog):
        raise BlobIntegrityError("blob создан для другого каталога (отпечаток не совпадает)")
    lengths = catalog.positions
    if m != len(lengths):
        raise BlobIntegrityError(f"blob на {m} регистров, каталог на {len(lengths)}")

    try:
        offset = 4 + 34
        selection = _unpack_selection(body[offset:offset + 2 * m])
        offset += 2 * m
        (clen,) = struct.unpack_from(">H", body, offset)
        offset += 2
        combiner = parse_anf(body[offset:offset + clen].decode("ascii"))
        offset += clen
        width = sum(_state_width(n) for n in lengths)
        initial = bytearray(body[offset:offset + width])
        offset += width
        current = _unpack_states(lengths, body[offset:offset + width])
        offset += width
        t, cursor = struct.unpack_from(">QQ", body, offset)
        offset += 16
    except (struct.error, UnicodeDecodeError, RffParseError) as e:
        raise BlobIntegrityError(f"поврежденная структура blob: {e}") from e
    if offset != len(body):
        raise BlobIntegrityError(f"лишние {len(body) - offset} байт в blob")

    try:
        config = full_config(catalog, selection, combiner)
        generator = Ksg(config, current, t)
        Ksg(config, _unpack_states(lengths, initial))
    except (CatalogError, ValueError) as e:
        raise BlobIntegrityError(f"недопустимое содержимое blob: {e}") from e
    return SucInstance(fp, config, _pack_selection(selection), initial, generator, cursor)


@dataclass(frozen=True)
class EntropyAccount:
    selection_bits: float
    state_bits: float
    nominal_state_bits: int

    @property
    def total_bits(self) -> float:
        return self.selection_bits + self.state_bits

    def as_dict(self) -> Dict[str, float]:
        return {
            "selection_bits": round(self.selection_bits, 4),
            "state_bits": round(self.state_bits, 4),
            "nominal_state_bits": self.nominal_state_bits,
            "total_bits": round(self.total_bits, 4),
        }


def entropy_account(catalog: Catalog) -> EntropyAccount:
    """log2 числа вариантов выбора и начальных состояний"""
    lengths = catalog.positions
    return EntropyAccount(
        selection_bits=cardinality_log2(catalog),
        state_bits=sum(math.log2((1 << n) - 1) for n in lengths),
        nominal_state_bits=sum(lengths),
    )


def info(suc: SucInstance) -> Dict[str, object]:
    """Несекретная сводка экземпляра"""
    state = suc.current_state
    combiner = suc.config.combiner
    return {
        "catalog_fingerprint": suc.catalog_fingerprint.hex(),
        "registers": len(suc.config.registers),
        "lengths": list(suc.lengths),
        "state_bits": suc.config.total_length,
        "combiner_is_f16": combiner == combiner_f16() if combiner.num_vars == 16 else False,
        "combiner_degree": combiner.degree,
        "response_cursor": suc.response_cursor,
        "cycles": state.t,
    }
