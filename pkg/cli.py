#!/usr/bin/env python3
"""
SUC-kit: командная строка

Проверка каталога, профили булевых функций, создание и опрос SUC,
анализ последовательностей, отчет об оценках стойкости и протоколы TA.

Коды выхода: 0 успех, 1 ошибка использования, 2 ошибка данных, 3 ошибка протокола.
"""

import argparse
import asyncio
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from colorama import Fore, Style
from colorama import init as colorama_init
from dotenv import load_dotenv

from boolean_analysis import (
    anf_to_tt,
    builtin_functions,
    combiner_f16,
    correlation_immunity,
    profile,
    profile_report,
    tt_from_hex,
    tt_to_anf,
    walsh_transform,
)
from cryptanalysis import (
    apply_cascade,
    berlekamp_massey,
    build_parity_cascade,
    correlation_scan,
    degeneration_probability,
    exhaustive_recovery,
    lc_bound_audit,
    weight_witness,
)
from feedback_catalog import (
    DESIGN_LENGTHS,
    Catalog,
    CatalogError,
    CatalogVerificationError,
    fingerprint,
    load_catalog,
    published_count_comparison,
    serialize_catalog,
    verify_catalog,
)
from ksg import Ksg, KsgConfig, bits_to_hex, bits_to_text, bounds_report, full_config, toy_config
from nlfsr_core import AnfFunction, parse_anf, parse_rff
from protocol import (
    DEFAULT_K,
    DEFAULT_T,
    DeviceAgent,
    ProtocolError,
    SessionPurpose,
    TrustedAuthority,
    UirStore,
    enroll,
    identify,
    update,
)
from suc_genie import EntropySource, entropy_account, export_blob, genie_create, import_blob, info, respond

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROTOCOL = 3

LOG_FILE_NAME = "suc_kit.log"
LOG_ROTATE_BYTES = 10 * 1024 * 1024

# Опорные значения для отметок PASS/FAIL в отчете bounds полной конфигурации
REFERENCE_FIGURES = {
    "lc_lower_bound_log2": (81.0, 81.1),
    "period_lcm_log2": (161.0, None),
    "cardinality_log2": (100.0, 100.2),
    "brute_force_log2": (323.0, 323.2),
    "correlation_floor": (90, 90),
    "algebraic_cost_log2": (192.7, 192.9),
}


class UsageError(Exception):
    """Неверные аргументы командной строки"""


class CliArgumentParser(argparse.ArgumentParser):
    """argparse с кодом выхода 1 для ошибок использования"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: ошибка: {message}\n")


@dataclass
class CliConfig:
    catalog_path: Path
    log_dir: Path
    uir_path: Path
    ta_host: str
    ta_port: int
    verify_workers: Optional[int]
    seed: Optional[bytes] = None
    output_format: str = "text"
    verbose: bool = False

    @classmethod
    def from_env(cls, args: Optional[argparse.Namespace] = None) -> "CliConfig":
        """Переменные окружения, поверх них - флаги командной строки"""
        load_dotenv()
        workers = os.getenv("SUC_VERIFY_WORKERS")
        config = cls(
            catalog_path=Path(os.getenv("SUC_CATALOG_PATH", "data/nlfsr_catalog.tsv")),
            log_dir=Path(os.getenv("SUC_LOG_DIR", "logs")),
            uir_path=Path(os.getenv("SUC_UIR_PATH", "uir_store.jsonl")),
            ta_host=os.getenv("SUC_TA_HOST", "127.0.0.1"),
            ta_port=int(os.getenv("SUC_TA_PORT", "8765")),
            verify_workers=int(workers) if workers else None,
        )
        if args is None:
            return config
        if getattr(args, "catalog", None):
            config.catalog_path = Path(args.catalog)
        if getattr(args, "uir", None):
            config.uir_path = Path(args.uir)
        if getattr(args, "host", None):
            config.ta_host = args.host
        if getattr(args, "port", None) is not None:
            config.ta_port = args.port
        if getattr(args, "workers", None):
            config.verify_workers = args.workers
        if getattr(args, "seed", None):
            config.seed = parse_seed(args.seed)
        config.output_format = args.format
        config.verbose = args.verbose
        return config


def parse_seed(text: str) -> bytes:
    try:
        seed = bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"зерно должно быть в hex: {text!r}") from None
    if len(seed) != 32:
        raise UsageError(f"зерно должно быть 32 байта (64 hex-символа), получено {len(seed)}")
    return seed


def parse_sn(text: str) -> bytes:
    try:
        sn = bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"SN должен быть в hex: {text!r}") from None
    if len(sn) != 16:
        raise UsageError(f"SN должен быть 16 байт, получено {len(sn)}")
    return sn


def setup_log_rotation(log_file: Path):
    """Переименовывает лог больше 10MB в файл с датой"""
    if log_file.exists() and log_file.stat().st_size > LOG_ROTATE_BYTES:
        backup = log_file.with_name(f"suc_kit_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
        try:
            os.rename(log_file, backup)
        except OSError as e:
            logger.error(f"❌ Ошибка при ротации лога: {e}")


def setup_logging(log_dir: Path, verbose: bool = False):
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / LOG_FILE_NAME
    setup_log_rotation(log_file)

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_suc_kit", False):
            root.removeHandler(handler)
            handler.close()
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    file_handler = logging.FileHandler(log_file, encoding="utf-8-sig", mode="a")
    file_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console = logging.StreamHandler()
    console.setLevel(logging.DEBUG if verbose else logging.WARNING)
    for handler in (file_handler, console):
        handler.setFormatter(formatter)
        handler._suc_kit = True
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)

    logging.getLogger("asyncio").setLevel(logging.WARNING)


# ---------------------------------------------------------------- вывод


def mark(ok: bool) -> str:
    return f"{Fore.GREEN}PASS{Style.RESET_ALL}" if ok else f"{Fore.RED}FAIL{Style.RESET_ALL}"


def emit(config: CliConfig, result: Dict[str, object], marks: Optional[Dict[str, bool]] = None):
    """json - одна строка JSON на результат; text - строки "ключ: значение" """
    if config.output_format == "json":
        print(json.dumps(result, ensure_ascii=False, default=str))
        return
    for key, value in result.items():
        suffix = f"  [{mark(marks[key])}]" if marks and key in marks else ""
        print(f"{key}: {value}{suffix}")


def fail(config: CliConfig, error: Exception, kind: str, code: int) -> int:
    logger.error(f"❌ {kind}: {error}")
    if config.output_format == "json":
        print(json.dumps({"ok": False, "error": str(error), "kind": kind}, ensure_ascii=False))
    else:
        print(f"{Fore.RED}ошибка ({kind}): {error}{Style.RESET_ALL}", file=sys.stderr)
    return code


def show_progress(config: CliConfig) -> bool:
    return config.output_format == "text" and sys.stderr.isatty()


# ---------------------------------------------------------------- общие шаги


def open_catalog(config: CliConfig, any_lengths: bool = False) -> Catalog:
    return load_catalog(config.catalog_path, allowed_lengths=None if any_lengths else DESIGN_LENGTHS)


def _verified_marker(path: Path) -> Path:
    return path.with_name(path.name + ".verified")


def ensure_verified(config: CliConfig, catalog: Catalog) -> Catalog:
    """Проверяет каталог, если его отпечаток еще не записан в файл-отметку"""
    marker = _verified_marker(config.catalog_path)
    fp = fingerprint(catalog).hex()
    if marker.exists() and fp in marker.read_text(encoding="utf-8").split():
        for entry in catalog.iter_entries():
            entry.verified = True
        logger.info(f"✅ Каталог {fp[:16]} уже проверен")
        return catalog
    report = verify_catalog(catalog, workers=config.verify_workers, progress=show_progress(config))
    if not report.ok:
        raise CatalogVerificationError(f"{len(report.failures)} спецификаций не имеют максимального периода")
    record_verified(config.catalog_path, fp)
    return catalog


def record_verified(catalog_path: Path, fp: str):
    marker = _verified_marker(catalog_path)
    known = marker.read_text(encoding="utf-8").split() if marker.exists() else []
    if fp not in known:
        with open(marker, "a", encoding="utf-8") as f:
            f.write(fp + "\n")


def resolve_function(args) -> AnfFunction:
    if getattr(args, "builtin", None):
        registry = builtin_functions()
        if args.builtin not in registry:
            raise UsageError(f"неизвестная функция {args.builtin}; есть {', '.join(sorted(registry))}")
        return registry[args.builtin]
    if getattr(args, "anf", None):
        return parse_anf(args.anf)
    if getattr(args, "tt_hex", None):
        if args.vars is None:
            raise UsageError("--tt-hex требует --vars")
        return tt_to_anf(tt_from_hex(args.tt_hex, args.vars))
    raise UsageError("укажите --builtin, --anf или --tt-hex")


def resolve_combiner(args) -> Optional[AnfFunction]:
    if getattr(args, "combiner", None):
        registry = builtin_functions()
        if args.combiner in registry:
            return registry[args.combiner]
        return parse_anf(args.combiner)
    return None


def write_atomic(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_bits(path: str, fmt: str = "auto") -> np.ndarray:
    """Файл последовательности: текст из 0/1 или двоичный (старший бит первым)"""
    data = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
    if fmt == "auto":
        fmt = "text" if data and set(data) <= set(b"01 \t\r\n") else "binary"
    if fmt == "text":
        return np.frombuffer(bytes(c for c in data if c in b"01"), dtype=np.uint8) - ord("0")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")


def parse_int_list(text: str, what: str) -> List[int]:
    """"7,15,31" -> [7, 15, 31]"""
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: ожидались целые через запятую, получено {text!r}") from None


def parse_registers(text: str) -> List[tuple]:
    """"N:rff;N:rff" -> [(N, rff)]"""
    pairs = []
    for part in text.split(";"):
        n, _, rff = part.strip().partition(":")
        if not rff:
            raise UsageError(f"регистр должен быть вида N:rff, получено {part!r}")
        try:
            length = int(n)
            parse_rff(rff, length)
        except ValueError as e:
            raise UsageError(f"регистр {part.strip()!r}: {e}") from None
        pairs.append((length, rff))
    return pairs


def load_suc(config: CliConfig, args, catalog: Optional[Catalog] = None):
    catalog = catalog or open_catalog(config, args.any_lengths)
    return import_blob(Path(args.blob).read_bytes(), catalog), catalog


# ---------------------------------------------------------------- команды


def cmd_catalog_verify(config: CliConfig, args) -> int:
    catalog = open_catalog(config, args.any_lengths)
    report = verify_catalog(catalog, workers=config.verify_workers, progress=show_progress(config))
    if report.ok:
        record_verified(config.catalog_path, fingerprint(catalog).hex())
    if config.output_format == "json":
        emit(config, report.summary())
    else:
        for row in published_count_comparison(catalog):
            failed = [s for s, _ in report.failures if s.length_n == row["length"]]
            print(f"N={row['length']:>2}  |A|={row['shipped']:>4}  {mark(not failed)}")
        print(f"спецификаций проверено: {len(report.results)}, сбоев: {len(report.failures)}  [{mark(report.ok)}]")
    return EXIT_OK if report.ok else EXIT_DATA


def cmd_catalog_info(config: CliConfig, args) -> int:
    catalog = open_catalog(config, args.any_lengths)
    result: Dict[str, object] = {
        "path": str(config.catalog_path),
        "fingerprint": fingerprint(catalog).hex(),
        "entries": catalog.entry_count,
        "specs": sum(catalog.counts),
    }
    marks = {}
    for row in published_count_comparison(catalog):
        key = f"N={row['length']}"
        result[key] = f"{row['shipped']} (таблица: {row['published']})"
        if row["published"] is not None:
            marks[key] = row["shipped"] == row["published"]
    account = entropy_account(catalog)
    result.update(account.as_dict())
    emit(config, result, marks)
    return EXIT_OK


def cmd_catalog_export(config: CliConfig, args) -> int:
    catalog = open_catalog(config, args.any_lengths)
    text = serialize_catalog(catalog, with_provenance=not args.canonical)
    if args.output:
        write_atomic(Path(args.output), text.encode("utf-8"))
        logger.info(f"✅ Каталог экспортирован в {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bf_profile(config: CliConfig, args) -> int:
    f = resolve_function(args)
    emit(config, profile_report(profile(f)))
    return EXIT_OK


def cmd_bf_walsh(config: CliConfig, args) -> int:
    f = resolve_function(args)
    spectrum = walsh_transform(anf_to_tt(f))
    ci = correlation_immunity(spectrum)
    result: Dict[str, object] = {
        "num_vars": f.num_vars,
        "max_abs": spectrum.max_abs,
        "correlation_immunity": ci,
        "nonzero_coefficients": int(np.count_nonzero(spectrum.coefficients)),
    }
    if ci < f.num_vars:
        mask, value = weight_witness(spectrum, ci + 1)
        result["first_nonzero_weight"] = ci + 1
        result["witness_mask"] = f"0x{mask:x}"
        result["witness_coefficient"] = value
    emit(config, result)
    return EXIT_OK


def _create(config: CliConfig, args):
    if config.seed is None:
        entropy = EntropySource.os()
    else:
        entropy = EntropySource.seeded(config.seed)
    catalog = ensure_verified(config, open_catalog(config, args.any_lengths))
    return genie_create(catalog, entropy, resolve_combiner(args)), catalog


def cmd_suc_create(config: CliConfig, args) -> int:
    suc, _ = _create(config, args)
    blob = export_blob(suc)
    write_atomic(Path(args.out), blob)
    emit(config, {"blob": args.out, "bytes": len(blob), **info(suc)})
    return EXIT_OK


def cmd_suc_respond(config: CliConfig, args) -> int:
    suc, _ = load_suc(config, args)
    responses = [bits_to_hex(respond(suc, args.k)) for _ in range(args.count)]
    write_atomic(Path(args.blob), export_blob(suc))
    emit(config, {"cursor": suc.response_cursor, "responses": responses})
    return EXIT_OK


def cmd_suc_info(config: CliConfig, args) -> int:
    suc, _ = load_suc(config, args)
    emit(config, info(suc))
    return EXIT_OK


def _generator_for(config: CliConfig, args) -> Ksg:
    if args.blob:
        suc, _ = load_suc(config, args)
        return Ksg(suc.config, suc.current_state.register_states, suc.current_state.t)
    suc, _ = _create(config, args)
    return Ksg(suc.config, suc.initial_state)


def cmd_keystream(config: CliConfig, args) -> int:
    bits = _generator_for(config, args).next_bits(args.bits)
    value = bits_to_text(bits) if args.as_bits else bits_to_hex(bits)
    emit(config, {"bits": args.bits, "keystream": value})
    return EXIT_OK


def cmd_analyze_bm(config: CliConfig, args) -> int:
    bits = read_bits(args.input, args.bits_format)
    result = berlekamp_massey(bits)
    emit(config, {
        "length": int(bits.size),
        "linear_complexity": result.linear_complexity,
        "connection_polynomial": "".join(map(str, result.connection_polynomial)),
        "exact": bits.size >= 2 * result.linear_complexity,
    })
    return EXIT_OK


def cmd_analyze_correlation(config: CliConfig, args) -> int:
    generator = _generator_for(config, args)
    streams = generator.register_streams(args.bits)
    z = generator.next_bits(args.bits)
    scan = correlation_scan(z, streams, args.max_order)
    threshold = scan.family_threshold()
    result: Dict[str, object] = {
        "sample_bits": args.bits,
        "masks": len(scan.entries),
        "max_abs_z": round(scan.max_abs_z, 3),
        "family_threshold": round(threshold, 3),
        "significant": len(scan.significant()),
    }
    marks = {"significant": not scan.significant()}
    spectrum = walsh_transform(anf_to_tt(generator.config.combiner))
    ci = correlation_immunity(spectrum)
    if ci < generator.config.combiner.num_vars:
        mask, _ = weight_witness(spectrum, ci + 1)
        witness = scan.entry(mask)
        result["witness_subset"] = list(witness.subset)
        result["witness_z"] = round(witness.z_score, 3)
        marks["witness_z"] = abs(witness.z_score) > 4.0
    emit(config, result, marks)
    return EXIT_OK


def cmd_analyze_parity(config: CliConfig, args) -> int:
    result: Dict[str, object] = {}
    if args.periods:
        cascade = build_parity_cascade(parse_int_list(args.periods, "--periods"))
        result.update({"taps": cascade.term_count, "span": cascade.span})
        if args.input:
            residual = apply_cascade(cascade, read_bits(args.input, args.bits_format))
            result.update({
                "residual_length": int(residual.size),
                "residual_weight": int(residual.sum()),
                "all_zero": not residual.any(),
            })
    if args.guard_lengths:
        lengths = parse_int_list(args.guard_lengths, "--guard-lengths")
        result["degeneration_log2"] = degeneration_probability(lengths, args.check_bits)
    if not result:
        raise UsageError("укажите --periods и/или --guard-lengths")
    emit(config, result)
    return EXIT_OK


def cmd_analyze_recover(config: CliConfig, args) -> int:
    combiner = resolve_combiner(args)
    if combiner is None:
        raise UsageError("--combiner обязателен для восстановления")
    toy = toy_config(parse_registers(args.registers), combiner)
    bits = read_bits(args.input, args.bits_format)
    states = exhaustive_recovery(toy, bits, workers=config.verify_workers or 1, progress=show_progress(config))
    emit(config, {"candidates": len(states), "states": [list(s) for s in states[:args.limit]]})
    return EXIT_OK


def cmd_analyze_lc_audit(config: CliConfig, args) -> int:
    catalog = open_catalog(config, args.any_lengths)
    rows = lc_bound_audit(catalog, max_n=args.max_n, progress=show_progress(config))
    ok = all(r.ok for r in rows)
    if config.output_format == "json":
        for row in rows:
            emit(config, {"spec": row.spec_text, "lc": row.linear_complexity,
                          "lower": row.lower, "upper": row.upper, "ok": row.ok})
    else:
        for row in rows:
            print(f"{row.spec_text}  L={row.linear_complexity}  [{row.lower}, {row.upper}]  {mark(row.ok)}")
    return EXIT_OK if ok else EXIT_DATA


def design_config(catalog: Catalog, combiner: Optional[AnfFunction] = None) -> KsgConfig:
    """Конфигурация для оценок: оценки зависят только от длин и F"""
    return full_config(catalog, [0] * len(catalog.positions), combiner)


def cmd_bounds(config: CliConfig, args) -> int:
    catalog = open_catalog(config, args.any_lengths)
    combiner = resolve_combiner(args)
    if combiner is None and len(catalog.positions) == 16:
        combiner = combiner_f16()
    ksg_config = design_config(catalog, combiner)
    report = bounds_report(ksg_config, catalog.counts)
    result = report.as_dict()
    marks = {}
    if ksg_config.is_full and ksg_config.combiner == combiner_f16():
        for key, (low, high) in REFERENCE_FIGURES.items():
            value = result.get(key)
            if value is None:
                marks[key] = False
                continue
            marks[key] = value >= low if high is None else low <= value <= high
    emit(config, result, marks)
    return EXIT_OK


def _pending_path(args) -> Path:
    return Path(args.blob + ".pending")


def _load_device(config: CliConfig, args) -> DeviceAgent:
    """Устройство из blob; рядом может лежать отложенное поколение"""
    suc, catalog = load_suc(config, args)
    device = DeviceAgent(parse_sn(args.sn), suc, k=args.k, timeout=args.timeout)
    pending = _pending_path(args)
    if pending.exists():
        device.pending = import_blob(pending.read_bytes(), catalog).snapshot()
    return device


def _save_device(args, device: DeviceAgent):
    write_atomic(Path(args.blob), export_blob(device.suc))
    pending = _pending_path(args)
    if device.pending is None:
        pending.unlink(missing_ok=True)
        return
    current = device.suc.snapshot()
    device.suc.restore(device.pending)
    try:
        write_atomic(pending, export_blob(device.suc))
    finally:
        device.suc.restore(current)


def _protocol_parties(config: CliConfig, args):
    device = _load_device(config, args)
    ta = TrustedAuthority(UirStore(config.uir_path), t=args.t, session_timeout=args.timeout)
    return ta, device


def _finish_session(config: CliConfig, args, device: DeviceAgent, result: Dict[str, object]) -> int:
    _save_device(args, device)
    emit(config, {**result, "device_cursor": device.cursor})
    return EXIT_OK


def cmd_ta_enroll(config: CliConfig, args) -> int:
    ta, device = _protocol_parties(config, args)
    record = asyncio.run(enroll(ta, device, t=args.t, k=args.k))
    return _finish_session(config, args, device, {"sn": record.sn.hex(), "t": record.t, "k": record.k})


def cmd_ta_identify(config: CliConfig, args) -> int:
    ta, device = _protocol_parties(config, args)
    result = asyncio.run(identify(ta, device))
    return _finish_session(config, args, device, {"accepted": result.ok, "index": result.ta.index})


def cmd_ta_update(config: CliConfig, args) -> int:
    ta, device = _protocol_parties(config, args)
    record = asyncio.run(update(ta, device))
    return _finish_session(config, args, device, {"sn": record.sn.hex(), "t": record.t, "cursor": record.cursor})


def cmd_ta_serve(config: CliConfig, args) -> int:
    ta = TrustedAuthority(UirStore(config.uir_path), t=args.t, session_timeout=args.timeout)

    async def serve():
        server = await ta.serve(config.ta_host, config.ta_port)
        async with server:
            await server.serve_forever()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        logger.info("🔄 TA остановлен")
    return EXIT_OK


def cmd_device_run(config: CliConfig, args) -> int:
    device = _load_device(config, args)
    purpose = SessionPurpose[args.purpose.upper()]
    outcome = asyncio.run(device.run(config.ta_host, config.ta_port, purpose))
    _save_device(args, device)
    outcome.raise_for_error()
    emit(config, {"purpose": args.purpose, "accepted": outcome.accepted,
                  "index": outcome.index, "device_cursor": device.cursor})
    return EXIT_OK


# ---------------------------------------------------------------- разбор аргументов


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(prog="suc-kit", description="SUC-kit: шифры на NLFSR, проверка и протоколы")
    parser.add_argument("--format", choices=("text", "json"), default="text", help="формат вывода")
    parser.add_argument("-v", "--verbose", action="store_true", help="подробные логи")
    parser.add_argument("--catalog", help="путь к каталогу (SUC_CATALOG_PATH)")
    parser.add_argument("--any-lengths", action="store_true", help="разрешить игрушечные длины регистров")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliArgumentParser)

    catalog = sub.add_parser("catalog", help="каталог функций обратной связи")
    catalog_sub = catalog.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    verify = catalog_sub.add_parser("verify", help="исчерпывающая проверка периодов")
    verify.add_argument("--workers", type=int)
    verify.set_defaults(handler=cmd_catalog_verify)
    catalog_sub.add_parser("info", help="мощности и отпечаток").set_defaults(handler=cmd_catalog_info)
    export = catalog_sub.add_parser("export", help="каноническая сериализация")
    export.add_argument("--output")
    export.add_argument("--canonical", action="store_true", help="без комментариев и provenance")
    export.set_defaults(handler=cmd_catalog_export)

    bf = sub.add_parser("bf", help="булевы функции")
    bf_sub = bf.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    for name, handler in (("profile", cmd_bf_profile), ("walsh", cmd_bf_walsh)):
        p = bf_sub.add_parser(name)
        p.add_argument("--builtin", help="F16, MAJ3, XOR2, AND2")
        p.add_argument("--anf", help="num_vars:constant:terms")
        p.add_argument("--tt-hex", dest="tt_hex")
        p.add_argument("--vars", type=int)
        p.set_defaults(handler=handler)

    suc = sub.add_parser("suc", help="создание и опрос SUC")
    suc_sub = suc.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    create = suc_sub.add_parser("create")
    create.add_argument("--seed", help="32 байта hex (детерминированный режим)")
    create.add_argument("--out", required=True)
    create.add_argument("--combiner", help="имя встроенной функции или ANF")
    create.add_argument("--workers", type=int)
    create.set_defaults(handler=cmd_suc_create)
    resp = suc_sub.add_parser("respond")
    resp.add_argument("--blob", required=True)
    resp.add_argument("--k", type=int, default=DEFAULT_K)
    resp.add_argument("--count", type=int, default=1)
    resp.set_defaults(handler=cmd_suc_respond)
    suc_info = suc_sub.add_parser("info")
    suc_info.add_argument("--blob", required=True)
    suc_info.set_defaults(handler=cmd_suc_info)

    ks = sub.add_parser("keystream", help="первые биты ключевого потока")
    ks.add_argument("--seed")
    ks.add_argument("--blob")
    ks.add_argument("--combiner")
    ks.add_argument("--bits", type=int, default=256)
    ks.add_argument("--as-bits", action="store_true", help="вывод строкой 0/1 вместо hex")
    ks.set_defaults(handler=cmd_keystream)

    analyze = sub.add_parser("analyze", help="криптоанализ")
    an_sub = analyze.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    bm = an_sub.add_parser("bm")
    bm.add_argument("--input", required=True, help="файл последовательности или '-'")
    bm.add_argument("--bits-format", choices=("auto", "text", "binary"), default="auto")
    bm.set_defaults(handler=cmd_analyze_bm)
    corr = an_sub.add_parser("correlation")
    corr.add_argument("--seed")
    corr.add_argument("--blob")
    corr.add_argument("--combiner")
    corr.add_argument("--bits", type=int, default=1_000_000)
    corr.add_argument("--max-order", type=int, default=8)
    corr.set_defaults(handler=cmd_analyze_correlation)
    parity = an_sub.add_parser("parity")
    parity.add_argument("--periods", help="T_1,T_2,...")
    parity.add_argument("--input")
    parity.add_argument("--bits-format", choices=("auto", "text", "binary"), default="auto")
    parity.add_argument("--guard-lengths", help="длины регистров-стражей через запятую")
    parity.add_argument("--check-bits", type=int, default=256)
    parity.set_defaults(handler=cmd_analyze_parity)
    recover = an_sub.add_parser("recover")
    recover.add_argument("--registers", required=True, help="N:rff;N:rff;...")
    recover.add_argument("--combiner", required=True)
    recover.add_argument("--input", required=True)
    recover.add_argument("--bits-format", choices=("auto", "text", "binary"), default="auto")
    recover.add_argument("--limit", type=int, default=16)
    recover.set_defaults(handler=cmd_analyze_recover)
    audit = an_sub.add_parser("lc-audit")
    audit.add_argument("--max-n", type=int, default=16)
    audit.set_defaults(handler=cmd_analyze_lc_audit)

    bounds = sub.add_parser("bounds", help="отчет об оценках стойкости")
    bounds.add_argument("--combiner")
    bounds.set_defaults(handler=cmd_bounds)

    ta = sub.add_parser("ta", help="доверенный центр")
    ta_sub = ta.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    serve = ta_sub.add_parser("serve")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(handler=cmd_ta_serve)
    for name, handler in (("enroll", cmd_ta_enroll), ("identify", cmd_ta_identify), ("update", cmd_ta_update)):
        p = ta_sub.add_parser(name, help="сессия с устройством из blob в памяти")
        p.add_argument("--blob", required=True)
        p.add_argument("--sn", required=True, help="16 байт hex")
        p.add_argument("--k", type=int, default=DEFAULT_K)
        p.set_defaults(handler=handler)
    for p in (serve, *[ta_sub.choices[n] for n in ("enroll", "identify", "update")]):
        p.add_argument("--uir")
        p.add_argument("--t", type=int, default=DEFAULT_T)
        p.add_argument("--timeout", type=float, default=5.0)

    device = sub.add_parser("device", help="устройство")
    device_sub = device.add_subparsers(dest="action", required=True, parser_class=CliArgumentParser)
    run = device_sub.add_parser("run")
    run.add_argument("--blob", required=True)
    run.add_argument("--sn", required=True)
    run.add_argument("--purpose", choices=("enroll", "identify", "update"), default="identify")
    run.add_argument("--host")
    run.add_argument("--port", type=int)
    run.add_argument("--k", type=int, default=DEFAULT_K)
    run.add_argument("--timeout", type=float, default=5.0)
    run.set_defaults(handler=cmd_device_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    colorama_init(autoreset=True)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = CliConfig.from_env(args)
    except (UsageError, ValueError) as e:
        print(f"ошибка: {e}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(config.log_dir, config.verbose)
    logger.info(f"🔄 Команда: {args.command} {getattr(args, 'action', '') or ''}".rstrip())

    try:
        return args.handler(config, args)
    except UsageError as e:
        return fail(config, e, "usage", EXIT_USAGE)
    except ProtocolError as e:
        return fail(config, e, type(e).__name__, EXIT_PROTOCOL)
    except (CatalogError, ValueError, OSError) as e:
        return fail(config, e, type(e).__name__, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
