"""
Протоколы SUC-устройства и доверенного центра (TA)

Регистрация, взаимная идентификация и обновление записей UIR поверх
кадров с префиксом длины. Транспорт - asyncio: очередь в памяти для
тестов, TCP-потоки для реального обмена, обертка с внедрением сбоев.

Ответы Y_i, нонсы и состояния не логируются; в OPERATION-строки попадают
только серийные номера, индексы и итоги.
"""

import asyncio
import hmac
import json
import logging
import os
import secrets
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Set, Tuple, Union

from ksg import bits_to_bytes, bytes_to_bits
from suc_genie import SucInstance, SucSnapshot, respond, skip

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 1 << 20
SN_SIZE = 16
NONCE_SIZE = 8
DEFAULT_T = 16
DEFAULT_K = 128
COMMIT = b"\x01"


# ---------------------------------------------------------------- ошибки


class ProtocolError(RuntimeError):
    """Базовая ошибка протокола"""


class FrameError(ProtocolError):
    """Некорректный кадр"""


class TruncatedFrameError(FrameError):
    pass


class UnknownMessageTypeError(FrameError):
    pass


class OversizeFrameError(FrameError):
    pass


class UnknownDeviceError(ProtocolError):
    """SN отсутствует в UIR"""


class AuthenticationError(ProtocolError):
    """Проверка R_T или R_A не прошла"""


class ResponsesExhaustedError(ProtocolError):
    """Ответы записи исчерпаны, нужно обновление"""


class AlreadyEnrolledError(ProtocolError):
    """SN уже зарегистрирован"""


class InvalidRequestError(ProtocolError):
    """Недопустимые параметры сессии"""


class SessionTimeoutError(ProtocolError):
    """Собеседник не ответил вовремя"""


class TransportClosedError(ProtocolError):
    """Соединение закрыто"""


class ErrorReported(ProtocolError):
    """Собеседник прислал кадр Error"""

    def __init__(self, message: "ErrorMessage"):
        super().__init__(f"{message.code.name}: {message.message}")
        self.message = message


class ErrorCode(IntEnum):
    UNKNOWN_DEVICE = 1
    AUTH_FAILED = 2
    EXHAUSTED = 3
    ALREADY_ENROLLED = 4
    BAD_REQUEST = 5
    INTERNAL = 6


_ERROR_CLASSES = {
    ErrorCode.UNKNOWN_DEVICE: UnknownDeviceError,
    ErrorCode.AUTH_FAILED: AuthenticationError,
    ErrorCode.EXHAUSTED: ResponsesExhaustedError,
    ErrorCode.ALREADY_ENROLLED: AlreadyEnrolledError,
    ErrorCode.BAD_REQUEST: InvalidRequestError,
    ErrorCode.INTERNAL: ProtocolError,
}


def _code_for(error: ProtocolError) -> ErrorCode:
    for code, cls in _ERROR_CLASSES.items():
        if type(error) is cls:
            return code
    return ErrorCode.BAD_REQUEST if isinstance(error, FrameError) else ErrorCode.INTERNAL


# ---------------------------------------------------------------- кадры


class MessageType(IntEnum):
    HELLO = 0x01
    CHALLENGE = 0x02
    RESPONSE = 0x03
    CMD = 0x04
    RESP_DATA = 0x05
    UPDATE_PAYLOAD = 0x06
    ERROR = 0x7F


@dataclass(frozen=True)
class Frame:
    type: MessageType
    payload: bytes = b""


def frame_encode(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise OversizeFrameError(f"полезная нагрузка {len(frame.payload)} байт > {MAX_PAYLOAD}")
    return HEADER.pack(len(frame.payload), int(frame.type)) + frame.payload


def _parse_header(header: bytes) -> Tuple[int, MessageType]:
    length, tag = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise OversizeFrameError(f"заявлена нагрузка {length} байт > {MAX_PAYLOAD}")
    try:
        return length, MessageType(tag)
    except ValueError:
        raise UnknownMessageTypeError(f"неизвестный тип сообщения 0x{tag:02x}") from None


def frame_decode(data: bytes) -> Frame:
    """Ровно один кадр; лишние или недостающие байты - ошибка"""
    if len(data) < HEADER.size:
        raise TruncatedFrameError(f"кадр короче заголовка: {len(data)} байт")
    length, mtype = _parse_header(data[:HEADER.size])
    body = data[HEADER.size:]
    if len(body) < length:
        raise TruncatedFrameError(f"ожидалось {length} байт нагрузки, получено {len(body)}")
    if len(body) > length:
        raise FrameError(f"лишние {len(body) - length} байт после кадра")
    return Frame(mtype, bytes(body))


class SessionPurpose(IntEnum):
    ENROLL = 0
    IDENTIFY = 1
    UPDATE = 2


@dataclass(frozen=True)
class Hello:
    sn: bytes
    cursor: int
    purpose: SessionPurpose
    k: int

    _layout = struct.Struct(f">{SN_SIZE}sIBH")

    def encode(self) -> Frame:
        return Frame(MessageType.HELLO, self._layout.pack(self.sn, self.cursor, int(self.purpose), self.k))

    @classmethod
    def decode(cls, frame: Frame) -> "Hello":
        payload = _expect(frame, MessageType.HELLO, cls._layout.size)
        sn, cursor, purpose, k = cls._layout.unpack(payload)
        try:
            return cls(sn, cursor, SessionPurpose(purpose), k)
        except ValueError:
            raise FrameError(f"неизвестное назначение сессии {purpose}") from None


@dataclass(frozen=True)
class Challenge:
    index: int
    encrypted_nonce: bytes
    nonce: bytes

    _layout = struct.Struct(f">I{NONCE_SIZE}s{NONCE_SIZE}s")

    def encode(self) -> Frame:
        return Frame(MessageType.CHALLENGE, self._layout.pack(self.index, self.encrypted_nonce, self.nonce))

    @classmethod
    def decode(cls, frame: Frame) -> "Challenge":
        return cls(*cls._layout.unpack(_expect(frame, MessageType.CHALLENGE, cls._layout.size)))


@dataclass(frozen=True)
class Response:
    encrypted_nonce: bytes
    nonce: bytes

    _layout = struct.Struct(f">{NONCE_SIZE}s{NONCE_SIZE}s")

    def encode(self) -> Frame:
        return Frame(MessageType.RESPONSE, self._layout.pack(self.encrypted_nonce, self.nonce))

    @classmethod
    def decode(cls, frame: Frame) -> "Response":
        return cls(*cls._layout.unpack(_expect(frame, MessageType.RESPONSE, cls._layout.size)))


@dataclass(frozen=True)
class ErrorMessage:
    code: ErrorCode
    message: str = ""

    def encode(self) -> Frame:
        return Frame(MessageType.ERROR, bytes([int(self.code)]) + self.message.encode("utf-8"))

    @classmethod
    def decode(cls, frame: Frame) -> "ErrorMessage":
        if frame.type != MessageType.ERROR or not frame.payload:
            raise FrameError("ожидался непустой кадр Error")
        try:
            return cls(ErrorCode(frame.payload[0]), frame.payload[1:].decode("utf-8", errors="replace"))
        except ValueError:
            raise FrameError(f"неизвестный код ошибки {frame.payload[0]}") from None

    def to_exception(self) -> ProtocolError:
        return _ERROR_CLASSES[self.code](self.message or self.code.name)


def _expect(frame: Frame, mtype: MessageType, size: Optional[int] = None) -> bytes:
    if frame.type == MessageType.ERROR and mtype != MessageType.ERROR:
        raise ErrorMessage.decode(frame).to_exception()
    if frame.type != mtype:
        raise FrameError(f"ожидался {mtype.name}, получен {frame.type.name}")
    if size is not None and len(frame.payload) != size:
        raise FrameError(f"{mtype.name}: ожидалось {size} байт нагрузки, получено {len(frame.payload)}")
    return frame.payload


def cmd_frame(commit: bool = False) -> Frame:
    return Frame(MessageType.CMD, COMMIT if commit else b"")


def decode_payload(frame: Frame):
    """Разбор нагрузки по типу кадра (для отладки и фаззинга)"""
    if frame.type == MessageType.HELLO:
        return Hello.decode(frame)
    if frame.type == MessageType.CHALLENGE:
        return Challenge.decode(frame)
    if frame.type == MessageType.RESPONSE:
        return Response.decode(frame)
    if frame.type == MessageType.ERROR:
        return ErrorMessage.decode(frame)
    if frame.type == MessageType.CMD and frame.payload not in (b"", COMMIT):
        raise FrameError(f"неизвестная команда {frame.payload.hex()}")
    return frame.payload


# ---------------------------------------------------------------- шифр E


class BlockCipher(Protocol):
    block_size: int

    def encrypt(self, key: bytes, block: bytes) -> bytes: ...

    def decrypt(self, key: bytes, block: bytes) -> bytes: ...


_MASK32 = 0xFFFFFFFF


def _rotl32(x: int, r: int) -> int:
    return ((x << r) | (x >> (32 - r))) & _MASK32


class ERefCipher:
    """
    E-ref: 64-битный блок, сеть Фейстеля на 32 раунда, ключ - первые 128 бит Y
    (короче - дополняется нулями).
    """
    block_size = 8
    rounds = 32

    def _round_keys(self, key: bytes) -> List[int]:
        k = struct.unpack(">4I", key[:16].ljust(16, b"\x00"))
        return [k[r % 4] ^ ((r * 0x9E3779B9) & _MASK32) for r in range(self.rounds)]

    def _check(self, block: bytes):
        if len(block) != self.block_size:
            raise ValueError(f"блок E-ref - {self.block_size} байт, получено {len(block)}")

    def encrypt(self, key: bytes, block: bytes) -> bytes:
        self._check(block)
        left, right = struct.unpack(">II", block)
        for r, rk in enumerate(self._round_keys(key)):
            left, right = right, left ^ _rotl32((right + rk) & _MASK32, (r % 31) + 1)
        return struct.pack(">II", left, right)

    def decrypt(self, key: bytes, block: bytes) -> bytes:
        self._check(block)
        left, right = struct.unpack(">II", block)
        keys = self._round_keys(key)
        for r in reversed(range(self.rounds)):
            left, right = right ^ _rotl32((left + keys[r]) & _MASK32, (r % 31) + 1), left
        return struct.pack(">II", left, right)


def ecb_encrypt(cipher: BlockCipher, key: bytes, data: bytes) -> bytes:
    """Поблочное шифрование без сцепления (нагрузка обновления)"""
    size = cipher.block_size
    if len(data) % size:
        raise ValueError(f"длина {len(data)} не кратна блоку {size}")
    return b"".join(cipher.encrypt(key, data[i:i + size]) for i in range(0, len(data), size))


def ecb_decrypt(cipher: BlockCipher, key: bytes, data: bytes) -> bytes:
    size = cipher.block_size
    if len(data) % size:
        raise FrameError(f"длина шифртекста {len(data)} не кратна блоку {size}")
    return b"".join(cipher.decrypt(key, data[i:i + size]) for i in range(0, len(data), size))


def pack_responses(responses: Iterable[bytes], k: int, block_size: int = 8) -> bytes:
    """Конкатенация k-битных ответов, дополненная нулями до целого числа блоков"""
    bits = [b for r in responses for b in bytes_to_bits(r, k)]
    data = bits_to_bytes(bits)
    return data + b"\x00" * (-len(data) % block_size)


def unpack_responses(data: bytes, k: int, t: int) -> List[bytes]:
    bits = bytes_to_bits(data)
    if bits.size < t * k:
        raise FrameError(f"нагрузка обновления короче {t} x {k} бит")
    return [bits_to_bytes(bits[i * k:(i + 1) * k]) for i in range(t)]


# ---------------------------------------------------------------- UIR


@dataclass
class UirRecord:
    """
    Запись UIR: SN_A, ответы Y_0..Y_{t-1} для идентификации, отдельный
    ключ обновления Y_t и курсор следующего неиспользованного ответа.
    """
    sn: bytes
    k: int
    responses: List[bytes]
    update_key: bytes
    cursor: int = 0

    def __post_init__(self):
        if len(self.sn) != SN_SIZE:
            raise ValueError(f"SN должен быть {SN_SIZE} байт, получено {len(self.sn)}")
        if not 0 <= self.cursor <= self.t:
            raise ValueError(f"курсор {self.cursor} вне [0, {self.t}]")
        if len(self.update_key) != (self.k + 7) // 8:
            raise ValueError(f"ключ обновления - {(self.k + 7) // 8} байт, получено {len(self.update_key)}")

    @property
    def t(self) -> int:
        return len(self.responses)

    @property
    def exhausted(self) -> bool:
        return self.cursor >= self.t

    def to_json(self) -> Dict[str, object]:
        return {
            "sn": self.sn.hex(),
            "k": self.k,
            "responses": [r.hex() for r in self.responses],
            "update_key": self.update_key.hex(),
            "cursor": self.cursor,
        }

    @classmethod
    def from_json(cls, data: Dict[str, object]) -> "UirRecord":
        return cls(
            sn=bytes.fromhex(data["sn"]),
            k=int(data["k"]),
            responses=[bytes.fromhex(r) for r in data["responses"]],
            update_key=bytes.fromhex(data["update_key"]),
            cursor=int(data.get("cursor", 0)),
        )


class UirStore:
    """
    Хранилище UIR: JSON-строка на запись, при загрузке побеждает последняя
    строка для SN. Каждое изменение переписывает файл через временный файл
    и атомарное переименование; запись в памяти меняется только после него.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: Dict[bytes, UirRecord] = {}
        self.load()

    def load(self):
        self.records = {}
        if self.path is None or not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = UirRecord.from_json(json.loads(line))
                except (ValueError, KeyError, TypeError) as e:
                    raise ValueError(f"{self.path}:{lineno}: некорректная запись UIR: {e}") from e
                self.records[record.sn] = record
        logger.info(f"✅ UIR загружен: {len(self.records)} устройств")

    def _write(self, records: Dict[bytes, UirRecord]):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for record in records.values():
                f.write(json.dumps(record.to_json()) + "\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.path)

    def put(self, record: UirRecord):
        snapshot = dict(self.records)
        snapshot[record.sn] = UirRecord(record.sn, record.k, list(record.responses),
                                        record.update_key, record.cursor)
        self._write(snapshot)
        self.records = snapshot

    def set_cursor(self, sn: bytes, cursor: int):
        record = self.records[sn]
        self.put(UirRecord(record.sn, record.k, record.responses, record.update_key, cursor))

    def get(self, sn: bytes) -> Optional[UirRecord]:
        return self.records.get(sn)

    def lookup(self, sn: bytes) -> Optional[UirRecord]:
        """Поиск со сравнением всех SN за одинаковое время"""
        found = None
        for key, record in self.records.items():
            if hmac.compare_digest(key, sn):
                found = record
        return found

    def __contains__(self, sn: bytes) -> bool:
        return sn in self.records

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------- транспорт


class Transport(ABC):
    """Упорядоченный надежный обмен кадрами"""

    @abstractmethod
    async def send(self, frame: Frame):
        ...

    @abstractmethod
    async def receive(self) -> Frame:
        ...

    async def close(self):
        pass


class MemoryTransport(Transport):
    """Одна сторона пары очередей; по очереди идут закодированные кадры"""

    _CLOSED = b""

    def __init__(self, incoming: asyncio.Queue, outgoing: asyncio.Queue):
        self._incoming = incoming
        self._outgoing = outgoing

    async def send(self, frame: Frame):
        await self._outgoing.put(frame_encode(frame))

    async def receive(self) -> Frame:
        data = await self._incoming.get()
        if data == self._CLOSED:
            raise TransportClosedError("соединение закрыто")
        return frame_decode(data)

    async def close(self):
        await self._outgoing.put(self._CLOSED)


def memory_pair() -> Tuple[MemoryTransport, MemoryTransport]:
    a_to_b: asyncio.Queue = asyncio.Queue()
    b_to_a: asyncio.Queue = asyncio.Queue()
    return MemoryTransport(b_to_a, a_to_b), MemoryTransport(a_to_b, b_to_a)


class StreamTransport(Transport):
    """Кадры поверх asyncio-потоков (TCP)"""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    async def send(self, frame: Frame):
        self.writer.write(frame_encode(frame))
        await self.writer.drain()

    async def receive(self) -> Frame:
        try:
            header = await self.reader.readexactly(HEADER.size)
            length, mtype = _parse_header(header)
            payload = await self.reader.readexactly(length)
        except asyncio.IncompleteReadError as e:
            raise TransportClosedError(f"соединение закрыто после {len(e.partial)} байт") from e
        return Frame(mtype, payload)

    async def close(self):
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class FaultKind(Enum):
    DROP = "drop"
    TAMPER = "tamper"
    REPLAY = "replay"


@dataclass
class Fault:
    kind: FaultKind
    message_type: MessageType
    count: int = 1
    byte_index: int = 0


class FaultyTransport(Transport):
    """
    Обертка для тестов: на отправке отбрасывает, портит или подменяет кадры
    записанными ранее. transcript можно разделять между сессиями.
    """

    def __init__(self, inner: Transport, faults: Iterable[Fault] = (),
                 transcript: Optional[List[Frame]] = None):
        self.inner = inner
        self.faults = list(faults)
        self.transcript = transcript if transcript is not None else []
        self.injected: List[Tuple[FaultKind, MessageType]] = []

    def _take(self, frame: Frame) -> Optional[Fault]:
        for fault in self.faults:
            if fault.count > 0 and fault.message_type == frame.type:
                fault.count -= 1
                return fault
        return None

    async def send(self, frame: Frame):
        fault = self._take(frame)
        earlier = [f for f in self.transcript if f.type == frame.type]
        self.transcript.append(frame)
        if fault is None:
            await self.inner.send(frame)
            return
        self.injected.append((fault.kind, frame.type))
        if fault.kind == FaultKind.DROP:
            return
        if fault.kind == FaultKind.TAMPER:
            payload = bytearray(frame.payload)
            payload[fault.byte_index % len(payload)] ^= 0x01
            await self.inner.send(Frame(frame.type, bytes(payload)))
            return
        await self.inner.send(earlier[-1] if earlier else frame)

    async def receive(self) -> Frame:
        return await self.inner.receive()

    async def close(self):
        await self.inner.close()


# ---------------------------------------------------------------- аудит сессий


@dataclass
class SessionAuditor:
    """Журнал (SN, индекс ответа) завершенных сессий; повтор - нарушение"""
    seen: Set[Tuple[bytes, int, int]] = field(default_factory=set)
    log: List[Tuple[bytes, int]] = field(default_factory=list)
    violations: List[Tuple[bytes, int]] = field(default_factory=list)
    _generation: Dict[bytes, int] = field(default_factory=dict)

    def new_generation(self, sn: bytes):
        """Запись SN заменена свежими ответами"""
        self._generation[sn] = self._generation.get(sn, 0) + 1

    def record(self, sn: bytes, index: int):
        key = (sn, self._generation.get(sn, 0), index)
        if key in self.seen:
            self.violations.append((sn, index))
            logger.error(f"❌ Повторное использование ответа {index} для {sn.hex()}")
        self.seen.add(key)
        self.log.append((sn, index))

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------- стороны


@dataclass
class SessionOutcome:
    """Итог сессии с точки зрения одной стороны"""
    purpose: SessionPurpose
    sn: bytes
    accepted: bool
    index: Optional[int] = None
    error: Optional[ProtocolError] = None
    flights: int = 0

    def raise_for_error(self):
        if self.error is not None:
            raise self.error


async def _receive(transport: Transport, timeout: Optional[float]) -> Frame:
    try:
        return await asyncio.wait_for(transport.receive(), timeout)
    except asyncio.TimeoutError:
        raise SessionTimeoutError(f"нет ответа за {timeout} с") from None


class TrustedAuthority:
    """
    Доверенный центр: хранит UIR, выдает вызовы, проверяет ответы.
    Сессии одного SN сериализуются замком.

    Ответ Y_j считается израсходованным, только когда TA получил ответ
    устройства; тайм-аут до этого курсор не двигает.
    """

    def __init__(self, store: UirStore, t: int = DEFAULT_T, cipher: Optional[BlockCipher] = None,
                 session_timeout: Optional[float] = 5.0, auditor: Optional[SessionAuditor] = None):
        self.store = store
        self.t = t
        self.cipher = cipher or ERefCipher()
        self.session_timeout = session_timeout
        self.auditor = auditor or SessionAuditor()
        self._locks: Dict[bytes, asyncio.Lock] = {}
        self.logger = logging.getLogger(f"{__name__}.ta")

    def log_operation(self, operation: str, status: str, details: Optional[Dict] = None):
        """Структурированное логирование операций"""
        log_data = {
            "operation": operation,
            "status": status,
            "timestamp": datetime.now().isoformat(),
            "details": details or {},
        }
        self.logger.info(f"OPERATION: {json.dumps(log_data, ensure_ascii=False)}")

    async def serve(self, host: str, port: int) -> asyncio.AbstractServer:
        server = await asyncio.start_server(self._on_connection, host, port)
        addresses = ", ".join(str(s.getsockname()) for s in server.sockets)
        logger.info(f"✅ TA слушает {addresses}")
        return server

    async def _on_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        transport = StreamTransport(reader, writer)
        try:
            await self.handle_session(transport)
        finally:
            await transport.close()

    async def handle_session(self, transport: Transport, t: Optional[int] = None) -> SessionOutcome:
        """Обслуживает одну сессию, начиная с Hello устройства"""
        try:
            hello = Hello.decode(await _receive(transport, self.session_timeout))
        except ProtocolError as e:
            logger.error(f"❌ Некорректное начало сессии: {e}")
            await self._send_error(transport, e)
            return SessionOutcome(SessionPurpose.IDENTIFY, b"", False, error=e, flights=1)

        lock = self._locks.setdefault(hello.sn, asyncio.Lock())
        async with lock:
            outcome = SessionOutcome(hello.purpose, hello.sn, False, flights=1)
            try:
                if hello.purpose == SessionPurpose.ENROLL:
                    await self._enroll(transport, hello, self.t if t is None else t, outcome)
                elif hello.purpose == SessionPurpose.IDENTIFY:
                    await self._identify(transport, hello, outcome)
                else:
                    await self._update(transport, hello, outcome)
            except ProtocolError as e:
                outcome.error = e
                outcome.accepted = False
                logger.error(f"❌ {hello.purpose.name} {hello.sn.hex()}: {type(e).__name__}: {e}")
                if not isinstance(e, (SessionTimeoutError, TransportClosedError)):
                    await self._send_error(transport, e)
            self.log_operation(
                hello.purpose.name.lower(),
                "accepted" if outcome.accepted else "rejected",
                {
                    "sn": hello.sn.hex(),
                    "index": outcome.index,
                    "error": type(outcome.error).__name__ if outcome.error else None,
                },
            )
            return outcome

    async def _send_error(self, transport: Transport, error: ProtocolError):
        if isinstance(error, ErrorReported):
            return
        try:
            await transport.send(ErrorMessage(_code_for(error), str(error)).encode())
        except (ProtocolError, ConnectionError, OSError):
            pass

    async def _enroll(self, transport: Transport, hello: Hello, t: int, outcome: SessionOutcome):
        if t < 1 or hello.k < 1:
            raise InvalidRequestError(f"регистрация требует t >= 1 и k >= 1 (t={t}, k={hello.k})")
        if self.store.lookup(hello.sn) is not None:
            raise AlreadyEnrolledError(f"устройство {hello.sn.hex()} уже зарегистрировано")
        responses = []
        width = (hello.k + 7) // 8
        # t ответов для идентификации и Y_t - ключ обновления
        for _ in range(t + 1):
            await transport.send(cmd_frame())
            payload = _expect(await _receive(transport, self.session_timeout), MessageType.RESP_DATA, width)
            responses.append(payload)
            outcome.flights += 2
        try:
            self.store.put(UirRecord(hello.sn, hello.k, responses[:t], responses[t], 0))
        except OSError as e:
            raise ProtocolError(f"не удалось сохранить запись UIR: {e}") from e
        self.auditor.new_generation(hello.sn)
        await transport.send(cmd_frame(commit=True))
        outcome.flights += 1
        outcome.accepted = True
        logger.info(f"✅ Зарегистрировано {hello.sn.hex()}: t={t}, k={hello.k}")

    def _record_for(self, hello: Hello) -> UirRecord:
        record = self.store.lookup(hello.sn)
        if record is None:
            # та же работа, что и при найденной записи
            self.cipher.encrypt(bytes(16), bytes(self.cipher.block_size))
            raise UnknownDeviceError("устройство не зарегистрировано")
        if record.k != hello.k:
            raise InvalidRequestError(f"k={hello.k} не совпадает с записью (k={record.k})")
        return record

    def _set_cursor(self, sn: bytes, cursor: int):
        try:
            self.store.set_cursor(sn, cursor)
        except OSError as e:
            raise ProtocolError(f"не удалось сохранить курсор: {e}") from e

    def _challenge(self, key: bytes, index: int) -> Tuple[Challenge, bytes]:
        nonce = secrets.token_bytes(NONCE_SIZE)
        return Challenge(index, self.cipher.encrypt(key, nonce), nonce), nonce

    def _check_response(self, key: bytes, response: Response) -> bool:
        return hmac.compare_digest(self.cipher.decrypt(key, response.encrypted_nonce), response.nonce)

    async def _receive_response(self, transport: Transport, outcome: SessionOutcome) -> Response:
        frame = await _receive(transport, self.session_timeout)
        if frame.type == MessageType.ERROR:
            raise ErrorReported(ErrorMessage.decode(frame))
        response = Response.decode(frame)
        outcome.flights += 1
        return response

    async def _identify(self, transport: Transport, hello: Hello, outcome: SessionOutcome):
        record = self._record_for(hello)
        j = max(record.cursor, hello.cursor)
        if j >= record.t:
            raise ResponsesExhaustedError(f"ответы исчерпаны (курсор {j}, t={record.t}): запустите обновление")
        if j != record.cursor:
            self._set_cursor(hello.sn, j)
        outcome.index = j
        key = record.responses[j]
        challenge, _ = self._challenge(key, j)
        await transport.send(challenge.encode())
        outcome.flights += 1
        response = await self._receive_response(transport, outcome)
        self._set_cursor(hello.sn, j + 1)
        if not self._check_response(key, response):
            raise AuthenticationError("R_A не совпал: устройство отклонено")
        self.auditor.record(hello.sn, j)
        await transport.send(cmd_frame(commit=True))
        outcome.flights += 1
        outcome.accepted = True
        logger.info(f"✅ Идентификация {hello.sn.hex()} по ответу {j}")

    async def _update(self, transport: Transport, hello: Hello, outcome: SessionOutcome):
        record = self._record_for(hello)
        if hello.cursor > record.t:
            raise InvalidRequestError(f"курсор устройства {hello.cursor} больше t={record.t}")
        j = record.t
        outcome.index = j
        key = record.update_key
        challenge, _ = self._challenge(key, j)
        await transport.send(challenge.encode())
        outcome.flights += 1
        response = await self._receive_response(transport, outcome)
        if not self._check_response(key, response):
            raise AuthenticationError("R_A не совпал: обновление отклонено")
        payload = _expect(await _receive(transport, self.session_timeout), MessageType.UPDATE_PAYLOAD)
        outcome.flights += 1
        fresh = unpack_responses(ecb_decrypt(self.cipher, key, payload), record.k, record.t + 1)
        try:
            self.store.put(UirRecord(hello.sn, record.k, fresh[:-1], fresh[-1], 0))
        except OSError as e:
            raise ProtocolError(f"не удалось сохранить обновленную запись: {e}") from e
        self.auditor.record(hello.sn, j)
        self.auditor.new_generation(hello.sn)
        await transport.send(cmd_frame(commit=True))
        outcome.flights += 1
        outcome.accepted = True
        logger.info(f"✅ Запись {hello.sn.hex()} обновлена: {record.t} свежих ответов")


class DeviceAgent:
    """
    Устройство с SUC. Перед каждым обменом делается снимок состояния S_{i-1};
    снимок восстанавливается при любой неудаче.

    Если после отправки обновления фиксация не пришла, свежее поколение
    хранится в pending: следующая сессия проверяет R_T по обоим поколениям
    и оставляет то, которым владеет TA.
    """

    def __init__(self, sn: bytes, suc: SucInstance, k: int = DEFAULT_K,
                 cipher: Optional[BlockCipher] = None, timeout: Optional[float] = 5.0):
        if len(sn) != SN_SIZE:
            raise ValueError(f"SN должен быть {SN_SIZE} байт")
        self.sn = sn
        self.suc = suc
        self.k = k
        self.cipher = cipher or ERefCipher()
        self.timeout = timeout
        self.pending: Optional[SucSnapshot] = None

    @property
    def cursor(self) -> int:
        return self.suc.response_cursor

    def _hello(self, purpose: SessionPurpose) -> Frame:
        # с отложенным поколением курсор старого поколения ничего не говорит TA
        cursor = 0 if self.pending is not None else self.cursor
        return Hello(self.sn, cursor, purpose, self.k).encode()

    def _next_response(self) -> bytes:
        return bits_to_bytes(respond(self.suc, self.k))

    async def _fail(self, transport: Transport, error: ProtocolError, code: Optional[ErrorCode] = None):
        if code is not None:
            try:
                await transport.send(ErrorMessage(code, str(error)).encode())
            except (ProtocolError, ConnectionError, OSError):
                pass

    async def enroll(self, transport: Transport) -> SessionOutcome:
        outcome = SessionOutcome(SessionPurpose.ENROLL, self.sn, False)
        before = self.suc.snapshot()
        try:
            await transport.send(self._hello(SessionPurpose.ENROLL))
            outcome.flights += 1
            while True:
                frame = await _receive(transport, self.timeout)
                payload = _expect(frame, MessageType.CMD)
                outcome.flights += 1
                if payload == COMMIT:
                    break
                if payload:
                    raise FrameError(f"неизвестная команда {payload.hex()}")
                await transport.send(Frame(MessageType.RESP_DATA, self._next_response()))
                outcome.flights += 1
            outcome.accepted = True
            self.pending = None
        except ProtocolError as e:
            outcome.error = e
            logger.error(f"❌ Регистрация не удалась: {type(e).__name__}: {e}")
        finally:
            self.suc.restore(before, cursor=0)
        return outcome

    async def _authenticate(self, transport: Transport, purpose: SessionPurpose,
                            outcome: SessionOutcome) -> Tuple[Challenge, bytes, SucSnapshot]:
        """Проверяет R_T; возвращает вызов, ключ Y_j и снимок выбранного поколения до Y_j"""
        await transport.send(self._hello(purpose))
        outcome.flights += 1
        challenge = Challenge.decode(await _receive(transport, self.timeout))
        outcome.flights += 1
        outcome.index = challenge.index
        candidates = [self.suc.snapshot()]
        if self.pending is not None:
            candidates.append(self.pending)
        usable = [base for base in candidates if challenge.index >= base.cursor]
        if not usable:
            raise InvalidRequestError(f"индекс вызова {challenge.index} позади курсора {self.cursor}")
        for base in usable:
            self.suc.restore(base)
            skip(self.suc, challenge.index - base.cursor, self.k)
            key = self._next_response()
            if not hmac.compare_digest(self.cipher.decrypt(key, challenge.encrypted_nonce), challenge.nonce):
                continue
            if self.pending is not None:
                if base is self.pending:
                    logger.info("✅ TA хранит обновленную запись: устройство переходит на новое поколение")
                else:
                    logger.warning("⚠️ TA не сохранил обновление: отложенное поколение отброшено")
                self.pending = None
            return challenge, key, base
        self.suc.restore(candidates[0])
        raise AuthenticationError("R_T не совпал: TA отклонен")

    def _response(self, key: bytes) -> Frame:
        nonce = secrets.token_bytes(NONCE_SIZE)
        return Response(self.cipher.encrypt(key, nonce), nonce).encode()

    async def _commit(self, transport: Transport, outcome: SessionOutcome):
        frame = await _receive(transport, self.timeout)
        if frame.type == MessageType.ERROR:
            raise ErrorReported(ErrorMessage.decode(frame))
        if _expect(frame, MessageType.CMD) != COMMIT:
            raise FrameError("ожидалась команда фиксации")
        outcome.flights += 1

    async def identify(self, transport: Transport) -> SessionOutcome:
        outcome = SessionOutcome(SessionPurpose.IDENTIFY, self.sn, False)
        before = self.suc.snapshot()
        try:
            _, key, before = await self._authenticate(transport, SessionPurpose.IDENTIFY, outcome)
        except AuthenticationError as e:
            self.suc.restore(before)
            await self._fail(transport, e, ErrorCode.AUTH_FAILED)
            outcome.error = e
            return outcome
        except ProtocolError as e:
            self.suc.restore(before)
            outcome.error = e
            return outcome
        await transport.send(self._response(key))
        outcome.flights += 1
        try:
            await self._commit(transport, outcome)
        except ProtocolError as e:
            # AUTH_FAILED приходит только после того, как TA списал Y_j
            spent = isinstance(e, ErrorReported) and e.message.code == ErrorCode.AUTH_FAILED
            if not spent:
                self.suc.restore(before)
            outcome.error = e
            logger.error(f"❌ Идентификация не подтверждена: {type(e).__name__}: {e}")
            return outcome
        outcome.accepted = True
        logger.info(f"✅ TA подтвержден, использован ответ {outcome.index}")
        return outcome

    async def update(self, transport: Transport) -> SessionOutcome:
        outcome = SessionOutcome(SessionPurpose.UPDATE, self.sn, False)
        before = self.suc.snapshot()
        fresh_start: Optional[SucSnapshot] = None
        delivered = False
        try:
            challenge, key, before = await self._authenticate(transport, SessionPurpose.UPDATE, outcome)
            fresh_start = self.suc.snapshot()
            t = challenge.index
            fresh = [self._next_response() for _ in range(t + 1)]
            await transport.send(self._response(key))
            payload = ecb_encrypt(self.cipher, key, pack_responses(fresh, self.k, self.cipher.block_size))
            fresh.clear()
            await transport.send(Frame(MessageType.UPDATE_PAYLOAD, payload))
            delivered = True
            outcome.flights += 2
            await self._commit(transport, outcome)
        except AuthenticationError as e:
            self.suc.restore(before)
            await self._fail(transport, e, ErrorCode.AUTH_FAILED)
            outcome.error = e
            return outcome
        except ProtocolError as e:
            self.suc.restore(before)
            if delivered and isinstance(e, (SessionTimeoutError, TransportClosedError)):
                self.pending = SucSnapshot(fresh_start.state, 0)
                logger.warning("⚠️ Фиксация обновления не получена: свежее поколение отложено до следующей сессии")
            outcome.error = e
            logger.error(f"❌ Обновление не зафиксировано: {type(e).__name__}: {e}")
            return outcome
        self.suc.restore(fresh_start, cursor=0)
        outcome.accepted = True
        logger.info(f"✅ Обновление зафиксировано: {t} свежих ответов")
        return outcome

    async def run(self, host: str, port: int, purpose: SessionPurpose) -> SessionOutcome:
        """Подключается к TA по TCP и проводит одну сессию"""
        reader, writer = await asyncio.open_connection(host, port)
        transport = StreamTransport(reader, writer)
        try:
            if purpose == SessionPurpose.ENROLL:
                return await self.enroll(transport)
            if purpose == SessionPurpose.IDENTIFY:
                return await self.identify(transport)
            return await self.update(transport)
        finally:
            await transport.close()


# ---------------------------------------------------------------- сессии в памяти


@dataclass
class SessionResult:
    ta: SessionOutcome
    device: SessionOutcome

    @property
    def ok(self) -> bool:
        return self.ta.accepted and self.device.accepted

    def raise_for_error(self):
        """Ошибка стороны, отклонившей сессию первой"""
        for outcome in (self.device, self.ta):
            if outcome.error is not None and not isinstance(outcome.error, ErrorReported):
                raise outcome.error
        for outcome in (self.device, self.ta):
            outcome.raise_for_error()


async def run_session(ta: TrustedAuthority, device: DeviceAgent, purpose: SessionPurpose,
                      t: Optional[int] = None, ta_wrap=None, device_wrap=None) -> SessionResult:
    """Одна сессия через пару очередей; wrap-функции оборачивают транспорт сторон"""
    ta_side, device_side = memory_pair()
    ta_transport = ta_wrap(ta_side) if ta_wrap else ta_side
    device_transport = device_wrap(device_side) if device_wrap else device_side
    if purpose == SessionPurpose.ENROLL:
        device_call = device.enroll(device_transport)
    elif purpose == SessionPurpose.IDENTIFY:
        device_call = device.identify(device_transport)
    else:
        device_call = device.update(device_transport)
    ta_outcome, device_outcome = await asyncio.gather(ta.handle_session(ta_transport, t=t), device_call)
    return SessionResult(ta_outcome, device_outcome)


async def enroll(ta: TrustedAuthority, device: DeviceAgent, t: int = DEFAULT_T,
                 k: Optional[int] = None) -> UirRecord:
    if t < 1:
        raise InvalidRequestError("t должно быть >= 1")
    if k is not None:
        device.k = k
    if device.cursor != 0:
        raise InvalidRequestError(f"регистрация требует курсор 0, у устройства {device.cursor}")
    result = await run_session(ta, device, SessionPurpose.ENROLL, t=t)
    result.raise_for_error()
    return ta.store.get(device.sn)


async def identify(ta: TrustedAuthority, device: DeviceAgent, **wraps) -> SessionResult:
    result = await run_session(ta, device, SessionPurpose.IDENTIFY, **wraps)
    result.raise_for_error()
    return result


async def update(ta: TrustedAuthority, device: DeviceAgent, **wraps) -> UirRecord:
    result = await run_session(ta, device, SessionPurpose.UPDATE, **wraps)
    result.raise_for_error()
    return ta.store.get(device.sn)
