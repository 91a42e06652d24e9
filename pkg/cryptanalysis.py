"""
Криптоанализ для SUC-kit

Проверки со стороны измерений:
- алгоритм Берлекэмпа-Месси и эталонный поиск минимального LFSR
- эксперимент с нижней границей линейной сложности на игрушечных KSG
- корреляционное сканирование подмножеств регистров (одно преобразование Уолша)
- каскад проверок четности по периодам регистров
- исчерпывающее восстановление состояния игрушечных генераторов
"""

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from boolean_analysis import WalshSpectrum, anf_to_tt, hadamard_transform, popcounts
from feedback_catalog import Catalog, expand_forms
from ksg import KsgConfig, lc_lower_bound, nlfsr_lc_floor, period_lcm
from nlfsr_core import canonical_start, cached_successor_table, degenerate_state, register_stream, spec_to_text

logger = logging.getLogger(__name__)

MAX_RECOVERY_STATE_BITS = 22


class ParityCascadeError(ValueError):
    """Последовательность короче охвата каскада"""


@dataclass(frozen=True)
class BmResult:
    """Минимальный LFSR: s_n = Σ_{i=1..L} c_i s_{n-i}, c_0 = 1"""
    linear_complexity: int
    connection_polynomial: Tuple[int, ...]


def _as_bits(bits: Sequence[int]) -> List[int]:
    return [int(b) & 1 for b in np.asarray(bits, dtype=np.uint8).ravel()]


def berlekamp_massey(bits: Sequence[int]) -> BmResult:
    """
    Синтез минимального LFSR над GF(2).

    Многочлены и окно последовательности хранятся как int (битовые множества),
    невязка - четность C & окно.
    """
    seq = _as_bits(bits)
    if not seq:
        raise ValueError("пустая последовательность")
    c, b = 1, 1
    lc, m = 0, 1
    window = 0  # бит j = s_{n-j}
    for n, s in enumerate(seq):
        window = (window << 1) | s
        if (c & window).bit_count() & 1 == 0:
            m += 1
            continue
        if 2 * lc <= n:
            t = c
            c ^= b << m
            lc = n + 1 - lc
            b = t
            m = 1
        else:
            c ^= b << m
            m += 1
    return BmResult(lc, tuple((c >> i) & 1 for i in range(lc + 1)))


def linear_complexity(bits: Sequence[int]) -> int:
    """Только L, без многочлена: последовательность целиком живет в одном int"""
    seq = _as_bits(bits)
    s = int.from_bytes(np.packbits(np.asarray(seq, dtype=np.uint8), bitorder="little").tobytes(), "little")
    sb, sc = s, s
    deg_c = 0
    m = 0
    for n in range(len(seq)):
        disc = sc & (1 << m)
        m += 1
        if disc:
            sc >>= m
            m = 0
            if 2 * deg_c <= n:
                sb, sc = sc, sb
                deg_c = n + 1 - deg_c
            sc ^= sb
    return deg_c


def linear_complexity_profile(bits: Sequence[int], step: int = 1) -> List[Tuple[int, int]]:
    """Пары (длина префикса, L) через каждые step бит"""
    seq = _as_bits(bits)
    profile = []
    c, b = 1, 1
    lc, m = 0, 1
    window = 0
    for n, s in enumerate(seq):
        window = (window << 1) | s
        if (c & window).bit_count() & 1:
            if 2 * lc <= n:
                c, b = c ^ (b << m), c
                lc = n + 1 - lc
                m = 1
            else:
                c ^= b << m
                m += 1
        else:
            m += 1
        if (n + 1) % step == 0 or n + 1 == len(seq):
            profile.append((n + 1, lc))
    return profile


def lfsr_generate(connection: Sequence[int], seed: Sequence[int], k: int) -> List[int]:
    """Последовательность длины k из многочлена связи и первых L бит"""
    taps = list(connection)[1:]
    lc = len(taps)
    out = list(seed[:lc])
    if len(out) < lc:
        raise ValueError(f"нужно {lc} начальных бит, получено {len(out)}")
    while len(out) < k:
        n = len(out)
        acc = 0
        for i, c in enumerate(taps, start=1):
            if c:
                acc ^= out[n - i]
        out.append(acc)
    return out[:k]


def brute_force_min_lfsr(bits: Sequence[int], max_length: int = 12) -> Optional[int]:
    """Эталон: перебор всех многочленов связи степени L = 0, 1, ... max_length"""
    seq = _as_bits(bits)
    for lc in range(0, min(max_length, len(seq)) + 1):
        for coeffs in range(1 << lc):
            taps = [(coeffs >> i) & 1 for i in range(lc)]
            ok = True
            for n in range(lc, len(seq)):
                acc = 0
                for i, c in enumerate(taps, start=1):
                    if c:
                        acc ^= seq[n - i]
                if acc != seq[n]:
                    ok = False
                    break
            if ok:
                return lc
    return None


def min_lfsr_by_elimination(bits: Sequence[int]) -> int:
    """
    Эталон: наименьшее L, при котором система s_n = Σ c_i s_{n-i} (n = L..len-1)
    совместна над GF(2). Проверка гауссовым исключением со столбцом правой части.
    """
    seq = _as_bits(bits)
    total = len(seq)
    for lc in range(0, total + 1):
        pivots: Dict[int, int] = {}
        consistent = True
        for n in range(lc, total):
            # биты 1..lc - коэффициенты, бит 0 - правая часть
            row = seq[n]
            for i in range(1, lc + 1):
                if seq[n - i]:
                    row |= 1 << i
            while row > 1:
                top = row.bit_length()
                if top not in pivots:
                    pivots[top] = row
                    break
                row ^= pivots[top]
            if row == 1:
                consistent = False
                break
        if consistent:
            return lc
    return total


# ---------------------------------------------------------------- линейная сложность каталога


@dataclass(frozen=True)
class LcAuditRow:
    spec_text: str
    length_n: int
    linear_complexity: int
    lower: int
    upper: int

    @property
    def ok(self) -> bool:
        return self.lower <= self.linear_complexity <= self.upper


def lc_bound_audit(catalog: Catalog, max_n: int = 16, progress: bool = False) -> List[LcAuditRow]:
    """B-M по двум периодам каждой формы каждой записи с N <= max_n"""
    specs = [spec for entry in catalog.iter_entries() if entry.length_n <= max_n for spec in expand_forms(entry)]
    rows = []
    for spec in tqdm(specs, desc="lc-audit", disable=not progress):
        n = spec.length_n
        period = (1 << n) - 1
        bits, _ = register_stream(spec, canonical_start(spec), 2 * period)
        lc = linear_complexity(bits)
        row = LcAuditRow(spec_to_text(spec), n, lc, nlfsr_lc_floor(n), period)
        if not row.ok:
            logger.warning(f"⚠️ {row.spec_text}: L = {lc} вне [{row.lower}, {row.upper}]")
        rows.append(row)
    logger.info(f"✅ Аудит линейной сложности: {sum(r.ok for r in rows)}/{len(rows)} в границах")
    return rows


# ---------------------------------------------------------------- лемма о линейной сложности


@dataclass
class LcExperimentReport:
    register_lcs: Tuple[int, ...]
    combined_lc: int
    sample_bits: int
    period_lcm: int
    calculator_bound: Optional[int]
    witness_monomial: Optional[Tuple[int, ...]]
    lemma_bound: Optional[int]

    @property
    def bound_available(self) -> bool:
        return self.lemma_bound is not None

    @property
    def holds(self) -> Optional[bool]:
        if self.lemma_bound is None:
            return None
        return self.lemma_bound <= self.combined_lc <= self.period_lcm


def lc_bound_experiment(config: KsgConfig, states: Optional[Sequence[int]] = None) -> LcExperimentReport:
    """
    Меряет L каждого регистра (по двум периодам) и L ключевого потока
    (по двум НОК периодов); сравнивает с произведением L_i по моному-свидетелю.
    """
    states = list(states) if states is not None else [canonical_start(spec) for spec in config.registers]
    register_lcs = []
    streams = []
    lcm = period_lcm(config)
    sample = 2 * lcm
    for spec, s in zip(config.registers, states):
        period = (1 << spec.length_n) - 1
        own, _ = register_stream(spec, s, 2 * period)
        register_lcs.append(linear_complexity(own))
        streams.append(register_stream(spec, s, sample)[0])

    table = anf_to_tt(config.combiner).bits
    index = np.zeros(sample, dtype=np.uint32)
    for i, bits in enumerate(streams):
        index |= bits.astype(np.uint32) << np.uint32(i)
    combined = linear_complexity(table[index])

    bound = lc_lower_bound(config)
    lemma = None
    if bound.available:
        lemma = math.prod(register_lcs[i - 1] for i in bound.witness_monomial)
    report = LcExperimentReport(
        register_lcs=tuple(register_lcs),
        combined_lc=combined,
        sample_bits=sample,
        period_lcm=lcm,
        calculator_bound=bound.bound,
        witness_monomial=bound.witness_monomial,
        lemma_bound=lemma,
    )
    if lemma is None:
        logger.info(f"⚠️ Условия леммы не выполнены, измерено L = {combined}")
    else:
        logger.info(f"✅ L = {combined}, произведение по свидетелю {lemma}, НОК {lcm}")
    return report


# ---------------------------------------------------------------- корреляции


@dataclass(frozen=True)
class CorrelationEntry:
    mask: int
    subset: Tuple[int, ...]
    bias: float
    z_score: float


@dataclass
class CorrelationScan:
    """Смещения ключевого потока относительно XOR подмножеств регистров"""
    sample_size: int
    max_order: int
    entries: List[CorrelationEntry]
    coefficients: np.ndarray = field(repr=False)

    @property
    def max_abs_z(self) -> float:
        return max((abs(e.z_score) for e in self.entries), default=0.0)

    def entry(self, mask: int) -> CorrelationEntry:
        return _make_entry(mask, int(self.coefficients[mask]), self.sample_size)

    def family_threshold(self, family_error: float = 1e-3, floor: float = 4.0) -> float:
        """Порог |z| для семейства масок с поправкой Бонферрони, не ниже floor"""
        if not self.entries:
            return floor
        per_test = family_error / len(self.entries)
        z = statistics.NormalDist().inv_cdf(1 - per_test / 2)
        return max(floor, z)

    def significant(self, threshold: Optional[float] = None) -> List[CorrelationEntry]:
        limit = self.family_threshold() if threshold is None else threshold
        return [e for e in self.entries if abs(e.z_score) > limit]


def _make_entry(mask: int, coefficient: int, sample: int) -> CorrelationEntry:
    subset = tuple(i + 1 for i in range(mask.bit_length()) if (mask >> i) & 1)
    return CorrelationEntry(mask, subset, coefficient / sample, coefficient / math.sqrt(sample))


def correlation_scan(keystream: Sequence[int], register_streams: Sequence[Sequence[int]],
                     max_order: int) -> CorrelationScan:
    """
    Совместная гистограмма (выходы регистров, знак z_t) и одно преобразование
    Адамара дают Σ_t (-1)^{z_t ⊕ ω·x_t} сразу для всех масок ω.
    """
    z = np.asarray(keystream, dtype=np.uint8)
    m = len(register_streams)
    if m > 24:
        raise ValueError("корреляционное сканирование поддерживает до 24 регистров")
    index = np.zeros(z.size, dtype=np.uint32)
    for i, stream in enumerate(register_streams):
        bits = np.asarray(stream, dtype=np.uint8)[: z.size]
        if bits.size != z.size:
            raise ValueError(f"поток регистра {i + 1} короче ключевого потока")
        index |= bits.astype(np.uint32) << np.uint32(i)
    signs = 1 - 2 * z.astype(np.int64)
    hist = np.bincount(index, weights=signs, minlength=1 << m).astype(np.int64)
    coefficients = hadamard_transform(hist)

    weights = popcounts(m)
    masks = np.flatnonzero((weights >= 1) & (weights <= max_order))
    entries = [_make_entry(int(w), int(coefficients[w]), z.size) for w in masks]
    scan = CorrelationScan(z.size, max_order, entries, coefficients)
    logger.info(f"✅ Корреляции: {len(entries)} масок до порядка {max_order}, max|z| = {scan.max_abs_z:.2f}")
    return scan


def weight_witness(spectrum: WalshSpectrum, weight: int) -> Tuple[int, int]:
    """Маска заданного веса с наибольшим |W(ω)|: (маска, коэффициент)"""
    weights = popcounts(spectrum.num_vars)
    candidates = np.flatnonzero(weights == weight)
    if candidates.size == 0:
        raise ValueError(f"нет масок веса {weight}")
    best = candidates[np.argmax(np.abs(spectrum.coefficients[candidates]))]
    return int(best), int(spectrum.coefficients[best])


def weight9_witness(spectrum: WalshSpectrum) -> Tuple[int, int]:
    return weight_witness(spectrum, 9)


# ---------------------------------------------------------------- каскад четности


@dataclass(frozen=True)
class ParityCascade:
    periods: Tuple[int, ...]

    @property
    def term_count(self) -> int:
        return 1 << len(self.periods)

    @property
    def span(self) -> int:
        return sum(self.periods)

    @property
    def offsets(self) -> Tuple[int, ...]:
        """Суммы всех подмножеств периодов"""
        sums = [0]
        for p in self.periods:
            sums += [s + p for s in sums]
        return tuple(sorted(sums))


def build_parity_cascade(periods: Sequence[int]) -> ParityCascade:
    periods = tuple(int(p) for p in periods)
    if any(p < 1 for p in periods):
        raise ValueError(f"периоды должны быть положительными: {periods}")
    return ParityCascade(periods)


def apply_cascade(cascade: ParityCascade, seq: Sequence[int], order: Optional[Sequence[int]] = None) -> np.ndarray:
    """residual(t) = XOR по всем суммам подмножеств s от seq(t + s)"""
    residual = np.asarray(seq, dtype=np.uint8)
    if residual.size <= cascade.span:
        raise ParityCascadeError(
            f"длина последовательности {residual.size} не превышает охват каскада {cascade.span}"
        )
    stages = cascade.periods if order is None else [cascade.periods[i] for i in order]
    for period in stages:
        residual = residual[:-period] ^ residual[period:]
    return residual


def degeneration_probability(guard_register_lengths: Sequence[int], check_bits: int) -> int:
    """log2 ожидаемого числа состояний, проходящих все check_bits проверок"""
    if check_bits < 0:
        raise ValueError(f"check_bits должно быть >= 0, получено {check_bits}")
    return sum(guard_register_lengths) - check_bits


# ---------------------------------------------------------------- полный перебор


def _prefix_table(spec, k: int) -> np.ndarray:
    """bits[s, t] = выход регистра на такте t из состояния s"""
    succ = cached_successor_table(spec)
    states = np.arange(succ.size, dtype=np.uint32)
    out = np.empty((succ.size, k), dtype=np.uint8)
    for t in range(k):
        out[:, t] = states & np.uint32(1)
        states = succ[states]
    return out


def exhaustive_recovery(config: KsgConfig, keystream: Sequence[int], workers: int = 1,
                        progress: bool = False) -> List[Tuple[int, ...]]:
    """Все невырожденные начальные состояния, дающие заданный префикс ключевого потока"""
    if config.total_length > MAX_RECOVERY_STATE_BITS:
        raise ValueError(f"Σ N = {config.total_length} превышает {MAX_RECOVERY_STATE_BITS} бит")
    z = np.asarray(keystream, dtype=np.uint8)
    k = z.size
    table = anf_to_tt(config.combiner).bits
    prefixes = [_prefix_table(spec, k) for spec in config.registers]
    valid = []
    for spec in config.registers:
        states = np.arange(1 << spec.length_n, dtype=np.uint32)
        valid.append(states[states != degenerate_state(spec)])

    first, rest = valid[0], valid[1:]
    grids = np.meshgrid(*rest, indexing="ij") if rest else []
    rest_flat = [g.ravel() for g in grids]

    def search(chunk: np.ndarray) -> List[Tuple[int, ...]]:
        found = []
        for s0 in chunk:
            alive = np.ones(rest_flat[0].size if rest_flat else 1, dtype=bool)
            for t in range(k):
                idx = np.full(alive.size, prefixes[0][s0, t], dtype=np.uint32)
                for i, states in enumerate(rest_flat, start=1):
                    idx |= prefixes[i][states, t].astype(np.uint32) << np.uint32(i)
                alive &= table[idx] == z[t]
                if not alive.any():
                    break
            for j in np.flatnonzero(alive):
                found.append((int(s0),) + tuple(int(states[j]) for states in rest_flat))
        return found

    chunks = np.array_split(first, max(1, min(workers * 4, first.size)))
    results: List[Tuple[int, ...]] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for part in tqdm(pool.map(search, chunks), total=len(chunks), desc="recover", disable=not progress):
            results.extend(part)
    results.sort()
    logger.info(f"✅ Перебор {config.total_length} бит состояния: {len(results)} совместимых состояний")
    return results
