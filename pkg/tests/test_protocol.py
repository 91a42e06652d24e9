import asyncio
import json

import numpy as np
import pytest

from ksg import bits_to_bytes
from protocol import (
    HEADER,
    MAX_PAYLOAD,
    AlreadyEnrolledError,
    AuthenticationError,
    Challenge,
    DeviceAgent,
    ERefCipher,
    ErrorCode,
    ErrorMessage,
    Fault,
    FaultKind,
    FaultyTransport,
    Frame,
    FrameError,
    Hello,
    InvalidRequestError,
    MessageType,
    OversizeFrameError,
    ProtocolError,
    ResponsesExhaustedError,
    SessionAuditor,
    SessionPurpose,
    SessionTimeoutError,
    TruncatedFrameError,
    TrustedAuthority,
    UirRecord,
    UirStore,
    UnknownDeviceError,
    UnknownMessageTypeError,
    cmd_frame,
    decode_payload,
    ecb_decrypt,
    ecb_encrypt,
    enroll,
    frame_decode,
    frame_encode,
    identify,
    pack_responses,
    run_session,
    unpack_responses,
    update,
)
from suc_genie import EntropySource, genie_create, respond
from tests.conftest import TEST_SEED

SN = bytes(range(16))
OTHER_SN = bytes(range(16, 32))
K = 32


def _make_suc(toy_catalog, maj3, seed=TEST_SEED):
    return genie_create(toy_catalog, EntropySource.seeded(seed), maj3)


@pytest.fixture
def ta(uir_store):
    return TrustedAuthority(uir_store, t=3, session_timeout=0.3)


@pytest.fixture
def device(toy_catalog, maj3):
    return DeviceAgent(SN, _make_suc(toy_catalog, maj3), k=K, timeout=0.3)


@pytest.fixture
def twin(toy_catalog, maj3):
    """Копия SUC устройства для расчета ожидаемых ответов"""
    return _make_suc(toy_catalog, maj3)


class TestFraming:
    """Тесты кадров"""

    def test_header_layout(self):
        """Тест: u32 длина big-endian и байт типа"""
        data = frame_encode(Frame(MessageType.CMD, b"\x01"))
        assert data == b"\x00\x00\x00\x01\x04\x01"
        assert frame_decode(data) == Frame(MessageType.CMD, b"\x01")

    def test_truncated(self):
        with pytest.raises(TruncatedFrameError):
            frame_decode(b"\x00\x00")
        with pytest.raises(TruncatedFrameError):
            frame_decode(HEADER.pack(5, 1) + b"abc")

    def test_trailing_bytes(self):
        with pytest.raises(FrameError):
            frame_decode(frame_encode(cmd_frame()) + b"\x00")

    def test_unknown_type(self):
        with pytest.raises(UnknownMessageTypeError):
            frame_decode(HEADER.pack(0, 0x42))

    def test_oversize(self):
        """Тест предела нагрузки в 1 МиБ"""
        with pytest.raises(OversizeFrameError):
            frame_decode(HEADER.pack(MAX_PAYLOAD + 1, 1))
        with pytest.raises(OversizeFrameError):
            frame_encode(Frame(MessageType.RESP_DATA, bytes(MAX_PAYLOAD + 1)))

    def test_hello(self):
        """Тест сообщения Hello"""
        hello = Hello(SN, 7, SessionPurpose.UPDATE, 128)
        frame = hello.encode()
        assert len(frame.payload) == 16 + 4 + 1 + 2
        assert Hello.decode(frame_decode(frame_encode(frame))) == hello

    def test_hello_bad_purpose(self):
        payload = bytearray(Hello(SN, 0, SessionPurpose.ENROLL, 8).encode().payload)
        payload[20] = 9
        with pytest.raises(FrameError):
            Hello.decode(Frame(MessageType.HELLO, bytes(payload)))

    def test_wrong_size(self):
        """Тест нагрузки неверной длины"""
        with pytest.raises(FrameError):
            Challenge.decode(Frame(MessageType.CHALLENGE, bytes(19)))

    def test_error_frame_becomes_exception(self):
        """Тест: кадр Error на месте ожидаемого превращается в исключение по коду"""
        frame = ErrorMessage(ErrorCode.EXHAUSTED, "нет ответов").encode()
        with pytest.raises(ResponsesExhaustedError, match="нет ответов"):
            Challenge.decode(frame)

    def test_error_message(self):
        message = ErrorMessage.decode(ErrorMessage(ErrorCode.UNKNOWN_DEVICE, "кто").encode())
        assert message.code == ErrorCode.UNKNOWN_DEVICE
        assert message.message == "кто"
        with pytest.raises(FrameError):
            ErrorMessage.decode(Frame(MessageType.ERROR, b"\x63"))
        with pytest.raises(FrameError):
            ErrorMessage.decode(Frame(MessageType.ERROR, b""))

    def test_unknown_command(self):
        with pytest.raises(FrameError):
            decode_payload(Frame(MessageType.CMD, b"\x02"))

    def test_fuzz_decoder(self):
        """Тест: случайные байты дают кадр или ошибку протокола, но не другое исключение"""
        rng = np.random.default_rng(2024)
        for _ in range(500):
            size = int(rng.integers(0, 40))
            data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
            if size >= 5 and rng.random() < 0.7:
                tag = int(rng.choice([1, 2, 3, 4, 5, 6, 0x7F]))
                data = HEADER.pack(size - 5, tag) + data[5:]
            try:
                decode_payload(frame_decode(data))
            except ProtocolError:
                pass


class TestCipher:
    """Тесты эталонного блочного шифра"""

    @pytest.fixture
    def cipher(self):
        return ERefCipher()

    def test_decrypt_inverts_encrypt(self, cipher):
        rng = np.random.default_rng(1)
        for _ in range(20):
            key = rng.integers(0, 256, 16, dtype=np.uint8).tobytes()
            block = rng.integers(0, 256, 8, dtype=np.uint8).tobytes()
            encrypted = cipher.encrypt(key, block)
            assert encrypted != block
            assert cipher.decrypt(key, encrypted) == block

    @pytest.mark.parametrize("key,block,expected", [
        (bytes(range(16)), bytes(8), "ddd52f611f62da35"),
        (b"\xff" * 16, bytes.fromhex("0123456789abcdef"), "6814103aabf7ff61"),
        (bytes(16), bytes(8), "aceae3e5ed73a08c"),
        (b"\x05\x06", b"abcdefgh", "bd83ee01bc5ead98"),
    ])
    def test_known_answers(self, cipher, key, block, expected):
        """Тест фиксированных векторов E-ref"""
        assert cipher.encrypt(key, block).hex() == expected
        assert cipher.decrypt(key, bytes.fromhex(expected)) == block

    def test_key_sensitivity(self, cipher):
        block = b"12345678"
        assert cipher.encrypt(bytes(16), block) != cipher.encrypt(b"\x01" + bytes(15), block)

    def test_short_key_is_zero_padded(self, cipher):
        """Тест: ключ короче 128 бит дополняется нулями"""
        block = b"abcdefgh"
        assert cipher.encrypt(b"\x05\x06", block) == cipher.encrypt(b"\x05\x06" + bytes(14), block)

    def test_block_size(self, cipher):
        with pytest.raises(ValueError):
            cipher.encrypt(bytes(16), b"short")

    def test_ecb(self, cipher):
        """Тест поблочного режима"""
        data = bytes(range(24))
        encrypted = ecb_encrypt(cipher, b"k" * 16, data)
        assert len(encrypted) == 24
        assert encrypted[:8] == cipher.encrypt(b"k" * 16, data[:8])
        assert ecb_decrypt(cipher, b"k" * 16, encrypted) == data
        with pytest.raises(ValueError):
            ecb_encrypt(cipher, b"k" * 16, bytes(5))
        with pytest.raises(FrameError):
            ecb_decrypt(cipher, b"k" * 16, bytes(5))

    def test_pack_responses(self):
        """Тест упаковки t ответов по k бит до целых блоков"""
        rng = np.random.default_rng(9)
        responses = [bits_to_bytes(rng.integers(0, 2, 12)) for _ in range(3)]
        packed = pack_responses(responses, 12)
        assert len(packed) == 8
        assert unpack_responses(packed, 12, 3) == responses
        with pytest.raises(FrameError):
            unpack_responses(packed, 12, 6)


class TestUirStore:
    """Тесты хранилища UIR"""

    def _record(self, cursor=0):
        return UirRecord(SN, 16, [b"\x00\x01", b"\x02\x03"], b"\x04\x05", cursor)

    def test_persistence(self, tmp_path):
        """Тест сохранения и повторной загрузки"""
        path = tmp_path / "uir.jsonl"
        store = UirStore(path)
        store.put(self._record())
        store.set_cursor(SN, 1)
        reloaded = UirStore(path)
        assert reloaded.get(SN) == self._record(cursor=1)
        assert len(reloaded) == 1
        assert SN in reloaded
        assert not (tmp_path / "uir.jsonl.tmp").exists()

    def test_last_line_wins(self, tmp_path):
        """Тест: при загрузке побеждает последняя строка SN"""
        path = tmp_path / "uir.jsonl"
        lines = [json.dumps(self._record(c).to_json()) for c in (0, 2)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert UirStore(path).get(SN).cursor == 2

    def test_corrupt_line(self, tmp_path):
        path = tmp_path / "uir.jsonl"
        path.write_text(json.dumps(self._record().to_json()) + "\n{мусор\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":2:"):
            UirStore(path)

    def test_failed_write_keeps_memory(self, tmp_path, monkeypatch):
        """Тест: при сбое записи на диск запись в памяти не меняется"""
        store = UirStore(tmp_path / "uir.jsonl")
        store.put(self._record())

        def broken(records):
            raise OSError("диск заполнен")

        monkeypatch.setattr(store, "_write", broken)
        with pytest.raises(OSError):
            store.set_cursor(SN, 2)
        assert store.get(SN).cursor == 0

    def test_in_memory(self):
        store = UirStore()
        store.put(self._record())
        assert store.lookup(SN).t == 2
        assert store.lookup(OTHER_SN) is None

    def test_record_validation(self):
        """Тест проверки записи"""
        with pytest.raises(ValueError):
            UirRecord(b"short", 16, [b"\x00\x00"], b"\x00\x00")
        with pytest.raises(ValueError):
            UirRecord(SN, 16, [b"\x00\x00"], b"\x00\x00", cursor=2)
        with pytest.raises(ValueError, match="ключ обновления"):
            UirRecord(SN, 16, [b"\x00\x00"], b"\x00")
        assert UirRecord(SN, 16, [b"\x00\x00"], b"\x00\x00", cursor=1).exhausted


class TestAuditor:
    """Тесты аудита повторного использования ответов"""

    def test_reuse_is_violation(self):
        auditor = SessionAuditor()
        auditor.record(SN, 0)
        auditor.record(SN, 1)
        assert auditor.ok
        auditor.record(SN, 0)
        assert not auditor.ok
        assert auditor.violations == [(SN, 0)]

    def test_new_generation(self):
        """Тест: после обновления записи индексы начинаются заново"""
        auditor = SessionAuditor()
        auditor.record(SN, 0)
        auditor.new_generation(SN)
        auditor.record(SN, 0)
        assert auditor.ok
        assert auditor.log == [(SN, 0), (SN, 0)]


class TestEnrollment:
    """Тесты регистрации"""

    @pytest.mark.asyncio
    async def test_enroll_collects_first_responses(self, ta, device, twin):
        """Тест: UIR получает Y_0..Y_{t-1} и ключ обновления Y_t, устройство возвращается в S_0"""
        record = await enroll(ta, device, t=3)
        expected = [bits_to_bytes(respond(twin, K)) for _ in range(4)]
        assert record.t == 3
        assert record.cursor == 0
        assert record.k == K
        assert record.responses == expected[:3]
        assert record.update_key == expected[3]
        assert device.cursor == 0
        assert device.suc.current_state.t == 0

    @pytest.mark.asyncio
    async def test_enroll_twice(self, ta, device):
        """Тест повторной регистрации"""
        first = await enroll(ta, device, t=3)
        with pytest.raises(AlreadyEnrolledError):
            await enroll(ta, device, t=3)
        assert ta.store.get(SN) == first

    @pytest.mark.asyncio
    async def test_enroll_requires_fresh_device(self, ta, device):
        respond(device.suc, K)
        with pytest.raises(InvalidRequestError):
            await enroll(ta, device, t=3)

    @pytest.mark.asyncio
    async def test_enroll_invalid_t(self, ta, device):
        with pytest.raises(InvalidRequestError):
            await enroll(ta, device, t=0)

    @pytest.mark.asyncio
    async def test_enroll_storage_failure(self, ta, device, monkeypatch):
        """Тест: сбой записи UIR при регистрации отклоняет сессию"""
        def broken(records):
            raise OSError("нет места")

        monkeypatch.setattr(ta.store, "_write", broken)
        with pytest.raises(ProtocolError):
            await enroll(ta, device, t=3)
        assert ta.store.get(SN) is None
        assert device.cursor == 0


class TestIdentification:
    """Тесты взаимной идентификации"""

    @pytest.mark.asyncio
    async def test_identify_uses_next_response(self, ta, device):
        """Тест: каждая сессия расходует следующий ответ"""
        await enroll(ta, device, t=3)
        for expected in range(3):
            result = await identify(ta, device)
            assert result.ok
            assert result.ta.index == result.device.index == expected
            assert result.ta.flights + result.device.flights >= 8
        assert ta.store.get(SN).cursor == 3
        assert device.cursor == 3
        assert ta.auditor.ok
        assert ta.auditor.log == [(SN, 0), (SN, 1), (SN, 2)]

    @pytest.mark.asyncio
    async def test_exhausted(self, ta, device):
        """Тест: после t сессий требуется обновление"""
        await enroll(ta, device, t=3)
        for _ in range(3):
            await identify(ta, device)
        with pytest.raises(ResponsesExhaustedError):
            await identify(ta, device)
        assert device.cursor == 3
        assert ta.store.get(SN).cursor == 3

    @pytest.mark.asyncio
    async def test_cursor_write_failure(self, ta, device, monkeypatch):
        """Тест: сбой записи курсора отклоняет сессию, курсоры обеих сторон не сдвигаются"""
        await enroll(ta, device, t=3)

        def broken(records):
            raise OSError("нет места")

        monkeypatch.setattr(ta.store, "_write", broken)
        with pytest.raises(ProtocolError, match="курсор"):
            await identify(ta, device)
        assert ta.store.get(SN).cursor == 0
        assert device.cursor == 0
        assert ta.auditor.log == []

        monkeypatch.undo()
        assert (await identify(ta, device)).ta.index == 0

    @pytest.mark.asyncio
    async def test_unknown_device(self, ta, device):
        with pytest.raises(UnknownDeviceError):
            await identify(ta, device)
        assert device.cursor == 0

    @pytest.mark.asyncio
    async def test_key_size_mismatch(self, ta, device):
        await enroll(ta, device, t=3)
        device.k = 64
        with pytest.raises(InvalidRequestError):
            await identify(ta, device)

    @pytest.mark.asyncio
    async def test_wrong_device(self, ta, device, toy_catalog, maj3):
        """Тест: чужой SUC под тем же SN отклоняется"""
        await enroll(ta, device, t=3)
        impostor = DeviceAgent(SN, _make_suc(toy_catalog, maj3, seed=bytes(32)), k=K, timeout=0.3)
        with pytest.raises(AuthenticationError):
            await identify(ta, impostor)
        assert impostor.cursor == 0
        assert ta.store.get(SN).cursor == 0

    @pytest.mark.asyncio
    async def test_ta_ahead_is_caught_up(self, ta, device):
        """Тест: устройство позади TA догоняет курсор пропуском ответов"""
        await enroll(ta, device, t=3)
        ta.store.set_cursor(SN, 2)
        result = await identify(ta, device)
        assert result.ta.index == result.device.index == 2
        assert device.cursor == ta.store.get(SN).cursor == 3

    @pytest.mark.asyncio
    async def test_concurrent_devices(self, ta, device, toy_catalog, maj3):
        """Тест параллельных сессий разных устройств"""
        other = DeviceAgent(OTHER_SN, _make_suc(toy_catalog, maj3, seed=bytes(32)), k=K, timeout=0.3)
        await enroll(ta, device, t=3)
        await enroll(ta, other, t=3)
        results = await asyncio.gather(identify(ta, device), identify(ta, other))
        assert all(r.ok for r in results)
        assert ta.store.get(SN).cursor == ta.store.get(OTHER_SN).cursor == 1


class TestFaults:
    """Тесты сбоев и атак на канале"""

    @staticmethod
    def _wrap(faults):
        return lambda inner: FaultyTransport(inner, faults)

    @pytest.mark.asyncio
    async def test_tampered_challenge(self, ta, device):
        """Тест: испорченный R_T - устройство отклоняет TA и сохраняет S_{i-1}"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.TAMPER, MessageType.CHALLENGE, byte_index=4)]
        with pytest.raises(AuthenticationError):
            await identify(ta, device, ta_wrap=self._wrap(faults))
        assert device.cursor == 0
        assert ta.store.get(SN).cursor == 0
        result = await identify(ta, device)
        assert result.ta.index == 0

    @pytest.mark.asyncio
    async def test_tampered_response(self, ta, device):
        """Тест: испорченный R_A - TA отклоняет, ответ израсходован на обеих сторонах"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.TAMPER, MessageType.RESPONSE)]
        result = await run_session(ta, device, SessionPurpose.IDENTIFY, device_wrap=self._wrap(faults))
        assert not result.ok
        assert isinstance(result.ta.error, AuthenticationError)
        assert result.device.error.message.code == ErrorCode.AUTH_FAILED
        assert ta.store.get(SN).cursor == 1
        assert device.cursor == 1
        assert (await identify(ta, device)).ta.index == 1

    @pytest.mark.asyncio
    async def test_dropped_challenge(self, ta, device):
        """Тест: потерянный вызов - ни одна сторона не расходует ответ"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.DROP, MessageType.CHALLENGE)]
        result = await run_session(ta, device, SessionPurpose.IDENTIFY, ta_wrap=self._wrap(faults))
        assert isinstance(result.ta.error, SessionTimeoutError)
        assert isinstance(result.device.error, SessionTimeoutError)
        assert ta.store.get(SN).cursor == device.cursor == 0
        result = await identify(ta, device)
        assert result.ta.index == result.device.index == 0
        assert ta.store.get(SN).cursor == device.cursor == 1

    @pytest.mark.asyncio
    async def test_dropped_response(self, ta, device):
        """Тест: потерянный R_A - TA не получил ответ, курсоры остаются на месте"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.DROP, MessageType.RESPONSE)]
        with pytest.raises(SessionTimeoutError):
            await identify(ta, device, device_wrap=self._wrap(faults))
        assert ta.store.get(SN).cursor == device.cursor == 0
        assert ta.auditor.log == []
        result = await identify(ta, device)
        assert result.ok
        assert result.ta.index == 0

    @pytest.mark.asyncio
    async def test_dropped_verdict(self, ta, device):
        """Тест: потерянное подтверждение TA - следующий Hello догоняет курсор TA"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.DROP, MessageType.CMD)]
        result = await run_session(ta, device, SessionPurpose.IDENTIFY, ta_wrap=self._wrap(faults))
        assert result.ta.accepted
        assert isinstance(result.device.error, SessionTimeoutError)
        assert ta.store.get(SN).cursor == 1
        assert device.cursor == 0
        result = await identify(ta, device)
        assert result.ta.index == result.device.index == 1
        assert ta.store.get(SN).cursor == device.cursor == 2
        assert ta.auditor.ok

    @pytest.mark.asyncio
    @pytest.mark.parametrize("side,kind,message_type", [
        ("ta", FaultKind.DROP, MessageType.CHALLENGE),
        ("ta", FaultKind.TAMPER, MessageType.CHALLENGE),
        ("ta", FaultKind.DROP, MessageType.CMD),
        ("ta", FaultKind.TAMPER, MessageType.CMD),
        ("device", FaultKind.DROP, MessageType.HELLO),
        ("device", FaultKind.DROP, MessageType.RESPONSE),
        ("device", FaultKind.TAMPER, MessageType.RESPONSE),
    ])
    async def test_cursors_agree_after_fault(self, ta, device, side, kind, message_type):
        """Тест: после сбоя и одной чистой сессии курсоры TA и устройства совпадают"""
        await enroll(ta, device, t=3)
        wrap = {f"{side}_wrap": self._wrap([Fault(kind, message_type, byte_index=4)])}
        faulty = await run_session(ta, device, SessionPurpose.IDENTIFY, **wrap)
        assert not faulty.ok
        assert ta.store.get(SN).cursor >= device.cursor
        result = await identify(ta, device)
        assert result.ok
        assert ta.store.get(SN).cursor == device.cursor
        assert ta.auditor.ok

    @pytest.mark.asyncio
    async def test_replayed_response(self, ta, device):
        """Тест: R_A прошлой сессии не принимается"""
        await enroll(ta, device, t=3)
        transcript = []
        await identify(ta, device, device_wrap=lambda inner: FaultyTransport(inner, (), transcript))
        faults = [Fault(FaultKind.REPLAY, MessageType.RESPONSE)]
        with pytest.raises(AuthenticationError):
            await identify(ta, device, device_wrap=lambda inner: FaultyTransport(inner, faults, transcript))
        assert ta.auditor.log == [(SN, 0)]
        assert ta.store.get(SN).cursor == device.cursor == 2

    @pytest.mark.asyncio
    async def test_injected_faults_are_recorded(self, ta, device):
        await enroll(ta, device, t=3)
        wrapper = {}

        def wrap(inner):
            wrapper["t"] = FaultyTransport(inner, [Fault(FaultKind.DROP, MessageType.RESPONSE)])
            return wrapper["t"]

        await run_session(ta, device, SessionPurpose.IDENTIFY, device_wrap=wrap)
        assert wrapper["t"].injected == [(FaultKind.DROP, MessageType.RESPONSE)]


class TestUpdate:
    """Тесты обновления записи"""

    @pytest.mark.asyncio
    async def test_update_replaces_record(self, ta, device, twin):
        """Тест: свежие ответы - следующие t + 1 ответов после ключа обновления Y_t"""
        await enroll(ta, device, t=3)
        await identify(ta, device)
        record = await update(ta, device)
        expected = [bits_to_bytes(respond(twin, K)) for _ in range(8)]
        assert record.responses == expected[4:7]
        assert record.update_key == expected[7]
        assert record.cursor == 0
        assert device.cursor == 0
        result = await identify(ta, device)
        assert result.ok
        assert result.ta.index == 0
        assert ta.auditor.ok

    @pytest.mark.asyncio
    async def test_update_after_exhaustion(self, ta, device):
        """Тест: исчерпанное устройство обновляется с настройками по умолчанию"""
        await enroll(ta, device, t=3)
        for _ in range(2):
            for _ in range(3):
                assert (await identify(ta, device)).ok
            with pytest.raises(ResponsesExhaustedError):
                await identify(ta, device)
            record = await update(ta, device)
            assert record.cursor == 0
            assert device.cursor == 0
        assert ta.auditor.ok

    @pytest.mark.asyncio
    async def test_update_rejects_cursor_beyond_t(self, ta, device):
        await enroll(ta, device, t=3)
        for _ in range(4):
            respond(device.suc, K)
        with pytest.raises(InvalidRequestError):
            await update(ta, device)

    @pytest.mark.asyncio
    async def test_crash_before_commit(self, ta, device, monkeypatch):
        """Тест: сбой записи UIR - обе стороны остаются в прежнем состоянии"""
        record = await enroll(ta, device, t=3)

        def broken(records):
            raise OSError("сбой питания")

        monkeypatch.setattr(ta.store, "_write", broken)
        with pytest.raises(ProtocolError):
            await update(ta, device)
        assert ta.store.get(SN) == record
        assert device.cursor == 0
        assert device.pending is None
        assert device.suc.current_state.t == 0

        monkeypatch.undo()
        updated = await update(ta, device)
        assert updated.responses != record.responses
        assert (await identify(ta, device)).ok

    @pytest.mark.asyncio
    async def test_dropped_payload(self, ta, device):
        """Тест: потерянная нагрузка обновления - запись не меняется, устройство остается на старом поколении"""
        record = await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.DROP, MessageType.UPDATE_PAYLOAD)]
        with pytest.raises(SessionTimeoutError):
            await update(ta, device, device_wrap=lambda inner: FaultyTransport(inner, faults))
        assert ta.store.get(SN) == record
        assert device.cursor == 0
        result = await identify(ta, device)
        assert result.ok
        assert result.ta.index == 0
        assert device.pending is None

    @pytest.mark.asyncio
    async def test_dropped_commit(self, ta, device):
        """Тест: потерянная фиксация - TA уже хранит свежие ответы, устройство переходит на них"""
        old = await enroll(ta, device, t=3)
        await identify(ta, device)
        faults = [Fault(FaultKind.DROP, MessageType.CMD)]
        result = await run_session(
            ta, device, SessionPurpose.UPDATE,
            ta_wrap=lambda inner: FaultyTransport(inner, faults),
        )
        assert result.ta.accepted
        assert isinstance(result.device.error, SessionTimeoutError)
        fresh = ta.store.get(SN)
        assert fresh.responses != old.responses
        assert fresh.cursor == 0
        assert device.pending is not None

        for expected in range(3):
            result = await identify(ta, device)
            assert result.ta.index == result.device.index == expected
            assert device.pending is None
        assert ta.store.get(SN).cursor == device.cursor == 3
        assert (await update(ta, device)).cursor == 0
        assert ta.auditor.ok

    @pytest.mark.asyncio
    async def test_dropped_commit_then_update(self, ta, device):
        """Тест: после потерянной фиксации ключ обновления берется из нового поколения"""
        await enroll(ta, device, t=3)
        faults = [Fault(FaultKind.DROP, MessageType.CMD)]
        await run_session(ta, device, SessionPurpose.UPDATE, ta_wrap=lambda inner: FaultyTransport(inner, faults))
        first = ta.store.get(SN)
        second = await update(ta, device)
        assert second.responses != first.responses
        assert device.pending is None
        assert (await identify(ta, device)).ok


class TestFullCycle:
    """Тесты полного цикла t = 16, k = 128"""

    async def _cycle(self, session):
        for expected in range(15):
            assert await session(SessionPurpose.IDENTIFY) == expected
        await session(SessionPurpose.UPDATE)
        for expected in range(16):
            assert await session(SessionPurpose.IDENTIFY) == expected

    @pytest.mark.asyncio
    async def test_in_memory(self, uir_store, device):
        """Тест: регистрация, 15 идентификаций, обновление, 16 идентификаций в памяти"""
        ta = TrustedAuthority(uir_store, t=16, session_timeout=2.0)
        record = await enroll(ta, device, t=16, k=128)
        assert (record.t, record.k) == (16, 128)

        async def session(purpose):
            result = await run_session(ta, device, purpose)
            result.raise_for_error()
            assert result.ok
            return result.ta.index

        await self._cycle(session)
        assert ta.store.get(SN).cursor == device.cursor == 16
        assert ta.auditor.ok

    @pytest.mark.asyncio
    @pytest.mark.integration
    async def test_over_tcp(self, uir_store, device):
        """Тест того же цикла через сокет"""
        ta = TrustedAuthority(uir_store, t=16, session_timeout=2.0)
        device.k = 128
        device.timeout = 2.0
        server = await ta.serve("127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]

        async def session(purpose):
            outcome = await device.run("127.0.0.1", port, purpose)
            outcome.raise_for_error()
            assert outcome.accepted
            return outcome.index

        try:
            await session(SessionPurpose.ENROLL)
            await self._cycle(session)
        finally:
            server.close()
            await server.wait_closed()
        assert ta.store.get(SN).cursor == device.cursor == 16
        assert ta.auditor.ok


class TestTcp:
    """Тесты обмена по TCP"""

    @pytest.mark.asyncio
    @pytest.mark.integration
    async def test_enroll_and_identify(self, ta, device):
        """Тест регистрации и идентификации через сокет"""
        server = await ta.serve("127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        try:
            outcome = await device.run("127.0.0.1", port, SessionPurpose.ENROLL)
            assert outcome.accepted
            assert ta.store.get(SN).t == 3
            outcome = await device.run("127.0.0.1", port, SessionPurpose.IDENTIFY)
            assert outcome.accepted
            assert outcome.index == 0
            assert device.cursor == 1
        finally:
            server.close()
            await server.wait_closed()

    @pytest.mark.asyncio
    @pytest.mark.integration
    async def test_garbage_connection(self, ta):
        """Тест: мусор вместо Hello отклоняется кадром Error"""
        server = await ta.serve("127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        try:
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            writer.write(frame_encode(cmd_frame()))
            await writer.drain()
            header = await asyncio.wait_for(reader.readexactly(HEADER.size), 2)
            length, tag = HEADER.unpack(header)
            assert tag == MessageType.ERROR
            payload = await reader.readexactly(length)
            assert payload[0] == ErrorCode.BAD_REQUEST
            writer.close()
        finally:
            server.close()
            await server.wait_closed()
