"""
Генератор ключевого потока (KSG) для SUC-kit

16 регистров NLFSR, объединенных функцией F, игрушечные конфигурации
и калькуляторы оценок стойкости: нижняя граница линейной сложности,
период, полный перебор, корреляционная и алгебраическая атаки.

Все оценки считаются точно в целых числах Python; log2 - только для вывода.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from boolean_analysis import anf_to_tt, combiner_f16, correlation_immunity, walsh_transform
from feedback_catalog import DESIGN_LENGTHS, Catalog, cardinality_log2
from nlfsr_core import (
    AnfFunction,
    DegenerateStateError,
    FeedbackForm,
    FeedbackSpec,
    degenerate_state,
    derive_form,
    parse_rff,
    register_stream,
)

logger = logging.getLogger(__name__)

# до этого размера дешевле шагать в Python, чем строить степени таблиц переходов
STEP_THRESHOLD = 4096

FAST_MATMUL_OMEGA = 2.38


class KsgConfigError(ValueError):
    """Некорректная конфигурация генератора"""


@dataclass(frozen=True)
class KsgConfig:
    """Регистры по позициям (x_i <- A_i) и комбинирующая функция"""
    registers: Tuple[FeedbackSpec, ...]
    combiner: AnfFunction

    def __post_init__(self):
        registers = tuple(self.registers)
        if not registers:
            raise KsgConfigError("конфигурация без регистров")
        if self.combiner.num_vars != len(registers):
            raise KsgConfigError(
                f"арность комбинирующей функции {self.combiner.num_vars} != числу регистров {len(registers)}"
            )
        object.__setattr__(self, "registers", registers)

    @property
    def lengths(self) -> Tuple[int, ...]:
        return tuple(spec.length_n for spec in self.registers)

    @property
    def total_length(self) -> int:
        return sum(self.lengths)

    @property
    def is_full(self) -> bool:
        return self.lengths == DESIGN_LENGTHS


@dataclass(frozen=True)
class KsgState:
    """Состояния регистров и счетчик тактов t"""
    register_states: Tuple[int, ...]
    t: int = 0


def full_config(catalog: Catalog, selection: Sequence[int], combiner: Optional[AnfFunction] = None) -> KsgConfig:
    """Конфигурация из каталога: selection[i] - индекс в A_i для позиции i"""
    positions = catalog.positions
    if len(selection) != len(positions):
        raise KsgConfigError(f"ожидалось {len(positions)} индексов выбора, получено {len(selection)}")
    registers = tuple(catalog.spec_at(n, j) for n, j in zip(positions, selection))
    if combiner is None:
        if len(registers) != 16:
            raise KsgConfigError("комбинирующая функция по умолчанию определена только для 16 регистров")
        combiner = combiner_f16()
    return KsgConfig(registers, combiner)


def toy_config(rffs: Sequence[Tuple[int, str]], combiner: AnfFunction,
               forms: Optional[Sequence[FeedbackForm]] = None) -> KsgConfig:
    """Игрушечная конфигурация из пар (N, rff-нотация)"""
    forms = forms or [FeedbackForm.BASIC] * len(rffs)
    registers = tuple(derive_form(parse_rff(text, n), n, form) for (n, text), form in zip(rffs, forms))
    return KsgConfig(registers, combiner)


def xor_combiner(m: int) -> AnfFunction:
    return AnfFunction(m, tuple((i,) for i in range(1, m + 1)), 0)


def _validate_states(config: KsgConfig, states: Sequence[int]) -> Tuple[int, ...]:
    states = tuple(int(s) for s in states)
    if len(states) != len(config.registers):
        raise KsgConfigError(f"ожидалось {len(config.registers)} состояний, получено {len(states)}")
    for i, (spec, s) in enumerate(zip(config.registers, states), start=1):
        if not 0 <= s <= spec.full_mask:
            raise KsgConfigError(f"состояние регистра {i} не помещается в {spec.length_n} бит")
        if s == degenerate_state(spec):
            raise DegenerateStateError(f"вырожденное состояние регистра {i} (N={spec.length_n})")
    return states


class Ksg:
    """Генератор: владелец один, состояние меняется на месте"""

    def __init__(self, config: KsgConfig, states: Sequence[int], t: int = 0):
        states = _validate_states(config, states)
        self.config = config
        self._states = list(states)
        self.t = t
        self._table = anf_to_tt(config.combiner).bits
        self._table_bytes = self._table.tobytes()

    @property
    def state(self) -> KsgState:
        return KsgState(tuple(self._states), self.t)

    def set_state(self, state: KsgState):
        self._states = list(_validate_states(self.config, state.register_states))
        self.t = state.t

    def next_bits(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError(f"k должно быть >= 0, получено {k}")
        if k <= STEP_THRESHOLD:
            out = self._step_bits(k)
        else:
            out = self._bulk_bits(k)
        self.t += k
        return out

    def _step_bits(self, k: int) -> np.ndarray:
        specs = self.config.registers
        table = self._table_bytes
        states = self._states
        out = bytearray(k)
        m = len(specs)
        for c in range(k):
            idx = 0
            for i in range(m):
                idx |= (states[i] & 1) << i
            out[c] = table[idx]
            for i in range(m):
                states[i] = specs[i].next_state(states[i])
        return np.frombuffer(bytes(out), dtype=np.uint8).copy()

    def _bulk_bits(self, k: int) -> np.ndarray:
        index = np.zeros(k, dtype=np.uint32)
        for i, spec in enumerate(self.config.registers):
            bits, self._states[i] = register_stream(spec, self._states[i], k)
            index |= bits.astype(np.uint32) << np.uint32(i)
        return self._table[index]

    def register_streams(self, k: int) -> List[np.ndarray]:
        """Выходы каждого регистра на k тактов вперед без сдвига генератора"""
        return [register_stream(spec, s, k)[0] for spec, s in zip(self.config.registers, self._states)]


def ksg_init(config: KsgConfig, states: Sequence[int]) -> Ksg:
    return Ksg(config, states)


def next_bits(generator: Ksg, k: int) -> np.ndarray:
    return generator.next_bits(k)


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    """Упаковка старшим битом вперед; хвост дополняется нулями"""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="big").tobytes()


def bytes_to_bits(data: bytes, k: Optional[int] = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")
    return bits if k is None else bits[:k]


def bits_to_hex(bits: Sequence[int]) -> str:
    return bits_to_bytes(bits).hex()


def bits_to_text(bits: Sequence[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


# ---------------------------------------------------------------- оценки


@dataclass(frozen=True)
class LcBound:
    """Нижняя граница линейной сложности по лемме о мономе максимальной степени"""
    bound: Optional[int]
    witness_monomial: Optional[Tuple[int, ...]]
    reason: str

    @property
    def available(self) -> bool:
        return self.bound is not None

    @property
    def log2(self) -> Optional[float]:
        return math.log2(self.bound) if self.bound else None


def nlfsr_lc_floor(n: int) -> int:
    """Нижняя граница линейной сложности последовательности NLFSR длины n"""
    return (1 << (n - 1)) + n


def _pairwise_coprime(values: Sequence[int]) -> bool:
    return all(math.gcd(a, b) == 1 for i, a in enumerate(values) for b in values[i + 1:])


def lc_lower_bound(config: KsgConfig) -> LcBound:
    """
    Условие 1: моном максимальной степени d с попарно взаимно простыми длинами.
    Условие 2: для мономов степени d, отличающихся от него одной переменной
    (x_{i_j} заменен на x_k), gcd(N_{i_j}, N_k) = 1.
    """
    d = config.combiner.degree
    if d == 0:
        return LcBound(None, None, "комбинирующая функция постоянна")
    lengths = config.lengths
    top = [t for t in config.combiner.terms if len(t) == d]
    best: Optional[LcBound] = None
    for mono in top:
        mono_lengths = [lengths[i - 1] for i in mono]
        if not _pairwise_coprime(mono_lengths):
            continue
        ok = True
        for other in top:
            if other == mono:
                continue
            removed = set(mono) - set(other)
            added = set(other) - set(mono)
            if len(removed) == 1 and len(added) == 1:
                a, b = removed.pop(), added.pop()
                if math.gcd(lengths[a - 1], lengths[b - 1]) != 1:
                    ok = False
                    break
        if not ok:
            continue
        bound = math.prod(nlfsr_lc_floor(n) for n in mono_lengths)
        if best is None or bound > best.bound:
            best = LcBound(bound, mono, "условия 1 и 2 выполнены")
    if best is None:
        return LcBound(None, None, "нет монома степени d, удовлетворяющего условиям 1 и 2")
    return best


def period_lcm(config: KsgConfig) -> int:
    """Точный НОК периодов 2^{N_i} - 1 (gcd(2^a-1, 2^b-1) = 2^{gcd(a,b)}-1)"""
    acc = 1
    for n in config.lengths:
        t = (1 << n) - 1
        acc = acc * t // math.gcd(acc, t)
    return acc


def brute_force_complexity(config: KsgConfig, counts: Sequence[int]) -> float:
    """log2 сложности полного перебора: Σ N_i + Σ log2|A_i|"""
    if len(counts) != len(config.registers):
        raise KsgConfigError(f"ожидалось {len(config.registers)} значений |A_i|, получено {len(counts)}")
    return config.total_length + cardinality_log2(counts)


def correlation_floor(config: KsgConfig, ci: int) -> int:
    """Сумма (ci + 1) наименьших длин регистров"""
    if ci < 0:
        raise ValueError(f"ci должно быть >= 0, получено {ci}")
    lengths = sorted(config.lengths)
    if ci + 1 > len(lengths):
        raise KsgConfigError(f"ci={ci} требует {ci + 1} регистров, есть {len(lengths)}")
    return sum(lengths[:ci + 1])


@dataclass(frozen=True)
class AlgebraicAttackEstimate:
    """Оценка алгебраической атаки по мономам максимальной степени"""
    top_monomial: Tuple[int, ...]
    degree: int
    monomial_count_log2: float
    literal_monomial_product_log2: float
    omega: float

    @property
    def cost_log2(self) -> float:
        return self.omega * self.monomial_count_log2


def algebraic_attack_estimate(config: KsgConfig, omega: float = FAST_MATMUL_OMEGA) -> AlgebraicAttackEstimate:
    """
    Степень: Σ(N_i - 1) по регистрам монома максимальной степени.
    Число мономов: Σ по мономам максимальной степени произведений 2^{N_i - 1}.
    Стоимость: ω · log2(число мономов).
    """
    d = config.combiner.degree
    if d == 0:
        raise KsgConfigError("оценка не определена для постоянной функции")
    lengths = config.lengths
    top = [t for t in config.combiner.terms if len(t) == d]
    degrees = {t: sum(lengths[i - 1] - 1 for i in t) for t in top}
    witness = max(top, key=lambda t: (degrees[t], t))
    count = sum(1 << degrees[t] for t in top)
    literal = math.prod((1 << lengths[i - 1]) - 2 for i in witness)
    return AlgebraicAttackEstimate(
        top_monomial=witness,
        degree=degrees[witness],
        monomial_count_log2=math.log2(count),
        literal_monomial_product_log2=math.log2(literal) if literal > 0 else float("-inf"),
        omega=omega,
    )


@dataclass(frozen=True)
class BmAttackComplexity:
    time_log2: float
    data_log2: float


def bm_attack_complexity(bound: LcBound) -> Optional[BmAttackComplexity]:
    """B-M: время L^2, данные 2L"""
    if not bound.available:
        return None
    return BmAttackComplexity(2 * math.log2(bound.bound), math.log2(2 * bound.bound))


@dataclass(frozen=True)
class LinearPartBounds:
    """Оценки для линейной части комбинирующей функции"""
    positions: Tuple[int, ...]
    lc_lower: int
    lc_upper: int
    periods: Tuple[int, ...]

    @property
    def t_max(self) -> int:
        return sum(self.periods)


def linear_positions(combiner: AnfFunction) -> Tuple[int, ...]:
    return tuple(t[0] for t in combiner.terms if len(t) == 1)


def linear_part_bounds(config: KsgConfig, positions: Optional[Sequence[int]] = None) -> LinearPartBounds:
    positions = tuple(positions) if positions is not None else linear_positions(config.combiner)
    lengths = [config.lengths[i - 1] for i in positions]
    return LinearPartBounds(
        positions=positions,
        lc_lower=sum(nlfsr_lc_floor(n) for n in lengths),
        lc_upper=sum((1 << n) - 1 for n in lengths),
        periods=tuple((1 << n) - 1 for n in lengths),
    )


@dataclass
class BoundReport:
    """Сводка оценок стойкости; все значения вычисляются"""
    lc_lower_bound: Optional[int]
    period_lcm: int
    brute_force_log2: float
    witness_monomial: Optional[Tuple[int, ...]]
    cardinality_log2: float
    state_bits: int
    correlation_immunity: int
    correlation_floor: int
    algebraic: Optional[AlgebraicAttackEstimate]
    bm_attack: Optional[BmAttackComplexity]
    linear_part: LinearPartBounds
    lc_reason: str = ""
    extras: Dict[str, object] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, object]:
        lc = self.lc_lower_bound
        return {
            "lc_lower_bound": str(lc) if lc is not None else None,
            "lc_lower_bound_log2": round(math.log2(lc), 4) if lc else None,
            "lc_witness_monomial": list(self.witness_monomial) if self.witness_monomial else None,
            "lc_reason": self.lc_reason,
            "period_lcm": str(self.period_lcm),
            "period_lcm_log2": round(math.log2(self.period_lcm), 4),
            "state_bits": self.state_bits,
            "cardinality_log2": round(self.cardinality_log2, 4),
            "brute_force_log2": round(self.brute_force_log2, 4),
            "correlation_immunity": self.correlation_immunity,
            "correlation_floor": self.correlation_floor,
            "algebraic_degree": self.algebraic.degree if self.algebraic else None,
            "algebraic_monomials_log2": round(self.algebraic.monomial_count_log2, 4) if self.algebraic else None,
            "algebraic_literal_product_log2": (
                round(self.algebraic.literal_monomial_product_log2, 4) if self.algebraic else None
            ),
            "algebraic_cost_log2": round(self.algebraic.cost_log2, 4) if self.algebraic else None,
            "bm_time_log2": round(self.bm_attack.time_log2, 4) if self.bm_attack else None,
            "bm_data_log2": round(self.bm_attack.data_log2, 4) if self.bm_attack else None,
            "linear_part_lc_lower": self.linear_part.lc_lower,
            "linear_part_lc_upper": self.linear_part.lc_upper,
            "linear_part_t_max": self.linear_part.t_max,
            **self.extras,
        }


def bounds_report(config: KsgConfig, counts: Sequence[int], ci: Optional[int] = None) -> BoundReport:
    """Все оценки для конфигурации и мощностей |A_i|"""
    if ci is None:
        ci = correlation_immunity(walsh_transform(anf_to_tt(config.combiner)))
    lc = lc_lower_bound(config)
    try:
        algebraic = algebraic_attack_estimate(config)
    except KsgConfigError:
        algebraic = None
    card = cardinality_log2(counts)
    report = BoundReport(
        lc_lower_bound=lc.bound,
        period_lcm=period_lcm(config),
        brute_force_log2=brute_force_complexity(config, counts),
        witness_monomial=lc.witness_monomial,
        cardinality_log2=card,
        state_bits=config.total_length,
        correlation_immunity=ci,
        correlation_floor=correlation_floor(config, min(ci, len(config.registers) - 1)),
        algebraic=algebraic,
        bm_attack=bm_attack_complexity(lc),
        linear_part=linear_part_bounds(config),
        lc_reason=lc.reason,
    )
    logger.info(f"✅ Оценки посчитаны для {len(config.registers)} регистров, Σ N = {config.total_length}")
    return report
