"""
Анализ булевых функций для SUC-kit

Точный расчет криптографических критериев комбинирующей функции:
- преобразование Мёбиуса АНФ <-> таблица истинности
- быстрое преобразование Уолша-Адамара
- корреляционная иммунность, нелинейность, алгебраическая степень
- алгебраическая иммунность через гауссово исключение над GF(2)

Соглашение: в таблице истинности x_1 - младший бит индекса входа.
"""

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from nlfsr_core import AnfFunction

logger = logging.getLogger(__name__)

MAX_TT_VARS = 24
MAX_AI_VARS = 16


@dataclass(frozen=True, eq=False)
class TruthTable:
    """Таблица истинности: bits[x] = f(x), x_1 - младший бит x"""
    num_vars: int
    bits: np.ndarray

    def __post_init__(self):
        if not 0 <= self.num_vars <= MAX_TT_VARS:
            raise ValueError(f"поддерживается до {MAX_TT_VARS} переменных, получено {self.num_vars}")
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.shape != (1 << self.num_vars,):
            raise ValueError(f"таблица должна содержать 2^{self.num_vars} значений, получено {bits.shape}")
        if np.any(bits > 1):
            raise ValueError("таблица истинности должна состоять из 0 и 1")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def weight(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_balanced(self) -> bool:
        return 2 * self.weight == self.bits.size

    def complement(self) -> "TruthTable":
        return TruthTable(self.num_vars, self.bits ^ 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TruthTable):
            return NotImplemented
        return self.num_vars == other.num_vars and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.num_vars, self.bits.tobytes()))


@dataclass(frozen=True, eq=False)
class WalshSpectrum:
    """Спектр Уолша в знаковом соглашении: W(ω) = Σ_x (-1)^{f(x) ⊕ x·ω}"""
    num_vars: int
    coefficients: np.ndarray

    def __getitem__(self, mask: int) -> int:
        return int(self.coefficients[mask])

    @property
    def max_abs(self) -> int:
        return int(np.max(np.abs(self.coefficients)))


@dataclass(frozen=True)
class BfProfile:
    """Пять критериев комбинирующей функции"""
    num_vars: int
    balanced: bool
    algebraic_degree: int
    correlation_immunity: int
    nonlinearity: int
    algebraic_immunity: Optional[int]


def _mobius_inplace(values: np.ndarray, n: int) -> np.ndarray:
    """Преобразование Мёбиуса над GF(2), совпадает со своим обратным"""
    for i in range(n):
        view = values.reshape(-1, 2, 1 << i)
        view[:, 1, :] ^= view[:, 0, :]
    return values


def hadamard_transform(values: np.ndarray) -> np.ndarray:
    """Быстрое преобразование Адамара вектора длины 2^n (int64, без нормировки)"""
    out = np.array(values, dtype=np.int64)
    n = out.size.bit_length() - 1
    if out.size != 1 << n:
        raise ValueError(f"длина вектора {out.size} не степень двойки")
    for i in range(n):
        view = out.reshape(-1, 2, 1 << i)
        a = view[:, 0, :].copy()
        b = view[:, 1, :]
        view[:, 0, :] = a + b
        view[:, 1, :] = a - b
    return out


def popcounts(n: int) -> np.ndarray:
    """Вес Хэмминга каждого индекса 0..2^n-1"""
    weights = np.zeros(1 << n, dtype=np.uint8)
    for i in range(n):
        view = weights.reshape(-1, 2, 1 << i)
        view[:, 1, :] += 1
    return weights


def anf_to_tt(f: AnfFunction) -> TruthTable:
    n = f.num_vars
    if n > MAX_TT_VARS:
        raise ValueError(f"поддерживается до {MAX_TT_VARS} переменных, получено {n}")
    coeffs = np.zeros(1 << n, dtype=np.uint8)
    coeffs[0] = f.constant
    for mask in f.term_masks():
        coeffs[mask] = 1
    return TruthTable(n, _mobius_inplace(coeffs, n))


def tt_to_anf(tt: TruthTable) -> AnfFunction:
    n = tt.num_vars
    coeffs = _mobius_inplace(tt.bits.copy(), n)
    terms = []
    for mask in np.flatnonzero(coeffs[1:]) + 1:
        mask = int(mask)
        terms.append(tuple(i + 1 for i in range(n) if (mask >> i) & 1))
    return AnfFunction(n, tuple(terms), int(coeffs[0]))


def tt_to_hex(tt: TruthTable) -> str:
    """Шестнадцатеричная запись: бит x лежит в байте x // 8 на позиции x % 8"""
    return np.packbits(tt.bits, bitorder="little").tobytes().hex()


def tt_from_hex(text: str, num_vars: int) -> TruthTable:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")
    size = 1 << num_vars
    if bits.size < size or np.any(bits[size:]):
        raise ValueError(f"hex-строка не соответствует таблице на {num_vars} переменных")
    return TruthTable(num_vars, bits[:size])


def walsh_transform(tt: TruthTable) -> WalshSpectrum:
    signed = 1 - 2 * tt.bits.astype(np.int64)
    return WalshSpectrum(tt.num_vars, hadamard_transform(signed))


def walsh_transform_direct(tt: TruthTable) -> WalshSpectrum:
    """Медленный эталон: прямая двойная сумма, n <= 10"""
    n = tt.num_vars
    if n > 10:
        raise ValueError("прямая сумма Уолша допустима только до 10 переменных")
    xs = np.arange(1 << n, dtype=np.uint32)
    weights = popcounts(n)
    parity = weights[np.bitwise_and.outer(xs, xs)] & 1
    signs = 1 - 2 * (parity ^ tt.bits[:, None]).astype(np.int64)
    return WalshSpectrum(n, signs.sum(axis=0))


def literal_walsh_value(tt: TruthTable, omega: int) -> int:
    """
    Буквальное значение F(ω) = Σ_x f(x)(-1)^{x·ω}.

    Связь со знаковым спектром: W(ω) = 2^n·[ω=0] - 2·F(ω).
    """
    xs = np.arange(1 << tt.num_vars, dtype=np.uint32)
    parity = popcounts(tt.num_vars)[xs & np.uint32(omega)] & 1
    return int(np.sum(tt.bits.astype(np.int64) * (1 - 2 * parity.astype(np.int64))))


def correlation_immunity(spectrum: WalshSpectrum) -> int:
    """Наибольшее t, при котором W(ω) = 0 для всех 1 <= wt(ω) <= t"""
    weights = popcounts(spectrum.num_vars)
    nonzero = spectrum.coefficients != 0
    for t in range(1, spectrum.num_vars + 1):
        if np.any(nonzero & (weights == t)):
            return t - 1
    return spectrum.num_vars


def nonlinearity(spectrum: WalshSpectrum) -> int:
    return (1 << (spectrum.num_vars - 1)) - spectrum.max_abs // 2 if spectrum.num_vars else 0


def nonlinearity_bruteforce(tt: TruthTable) -> int:
    """Медленный эталон: расстояние до всех 2^(n+1) аффинных функций"""
    n = tt.num_vars
    if n > 10:
        raise ValueError("перебор аффинных функций допустим только до 10 переменных")
    xs = np.arange(1 << n, dtype=np.uint32)
    weights = popcounts(n)
    best = 1 << n
    for omega in range(1 << n):
        linear = weights[xs & np.uint32(omega)] & 1
        dist = int(np.count_nonzero(linear != tt.bits))
        best = min(best, dist, (1 << n) - dist)
    return best


def algebraic_degree(anf: AnfFunction) -> int:
    return anf.degree


def _monomials(n: int, degree: int) -> List[Tuple[int, ...]]:
    return list(combinations(range(n), degree))


def _eval_vector(points: np.ndarray, mask: int) -> int:
    """Значения монома на точках носителя как битовое целое"""
    m = np.uint32(mask)
    hits = (points & m) == m
    return int.from_bytes(np.packbits(hits, bitorder="little").tobytes(), "little")


class _AnnihilatorSearch:
    """
    Инкрементальное исключение над GF(2) для одной функции.

    Строки - векторы значений мономов на носителе (int как битовое множество),
    вместе с комбинацией мономов, из которой получена строка. Ведущий элемент - старший
    бит (bit_length за O(1)). Строка, обнулившаяся при редукции, дает аннулятор.
    """

    def __init__(self, support: np.ndarray, n: int):
        self.support = support
        self.n = n
        self.pivots: Dict[int, Tuple[int, int]] = {}
        self.monomials: List[int] = []

    def add_degree(self, degree: int) -> Optional[AnfFunction]:
        for combo in _monomials(self.n, degree):
            mask = sum(1 << i for i in combo)
            index = len(self.monomials)
            self.monomials.append(mask)
            row = _eval_vector(self.support, mask)
            history = 1 << index
            while row:
                top = row.bit_length()
                pivot = self.pivots.get(top)
                if pivot is None:
                    self.pivots[top] = (row, history)
                    break
                row ^= pivot[0]
                history ^= pivot[1]
            if not row:
                return self._to_anf(history)
        return None

    def _to_anf(self, history: int) -> AnfFunction:
        terms = []
        constant = 0
        j = 0
        while history:
            if history & 1:
                mask = self.monomials[j]
                if mask == 0:
                    constant ^= 1
                else:
                    terms.append(tuple(i + 1 for i in range(self.n) if (mask >> i) & 1))
            history >>= 1
            j += 1
        return AnfFunction.from_terms(self.n, terms, constant)


def annihilator(tt: TruthTable, degree: int) -> Optional[AnfFunction]:
    """Ненулевой аннулятор g степени <= degree с f·g = 0, либо None"""
    if tt.num_vars > MAX_AI_VARS:
        raise ValueError(f"аннуляторы считаются только до {MAX_AI_VARS} переменных")
    support = np.flatnonzero(tt.bits).astype(np.uint32)
    search = _AnnihilatorSearch(support, tt.num_vars)
    for d in range(degree + 1):
        found = search.add_degree(d)
        if found is not None:
            return found
    return None


def algebraic_immunity(tt: TruthTable) -> int:
    """Минимальная степень ненулевого аннулятора f или f ⊕ 1"""
    n = tt.num_vars
    if n > MAX_AI_VARS:
        raise ValueError(f"алгебраическая иммунность считается только до {MAX_AI_VARS} переменных")
    searches = [
        _AnnihilatorSearch(np.flatnonzero(tt.bits).astype(np.uint32), n),
        _AnnihilatorSearch(np.flatnonzero(tt.bits ^ 1).astype(np.uint32), n),
    ]
    for d in range(n + 1):
        for search in searches:
            if search.add_degree(d) is not None:
                logger.debug(f"✅ аннулятор степени {d} найден")
                return d
    return n


def restrict(anf: AnfFunction, fixed: Mapping[int, int]) -> AnfFunction:
    """Подстановка констант вместо переменных; число переменных сохраняется"""
    terms = []
    constant = anf.constant
    for term in anf.terms:
        if any(fixed.get(i) == 0 for i in term):
            continue
        rest = tuple(i for i in term if i not in fixed)
        if rest:
            terms.append(rest)
        else:
            constant ^= 1
    return AnfFunction.from_terms(anf.num_vars, terms, constant)


def profile(f: AnfFunction) -> BfProfile:
    tt = anf_to_tt(f)
    spectrum = walsh_transform(tt)
    ai = algebraic_immunity(tt) if f.num_vars <= MAX_AI_VARS else None
    result = BfProfile(
        num_vars=f.num_vars,
        balanced=tt.is_balanced,
        algebraic_degree=algebraic_degree(f),
        correlation_immunity=correlation_immunity(spectrum),
        nonlinearity=nonlinearity(spectrum),
        algebraic_immunity=ai,
    )
    logger.info(f"✅ Профиль функции на {f.num_vars} переменных: {profile_report(result)['summary']}")
    return result


def profile_report(result: BfProfile) -> Dict[str, object]:
    """Структурированный отчет по профилю"""
    ai = "n/a" if result.algebraic_immunity is None else str(result.algebraic_immunity)
    summary = (
        f"balanced={'yes' if result.balanced else 'no'}, degree={result.algebraic_degree}, "
        f"CI={result.correlation_immunity}, NL={result.nonlinearity}, AI={ai}"
    )
    bound = None
    if result.num_vars % 2 == 0 and result.num_vars:
        bound = (1 << (result.num_vars - 1)) - (1 << (result.num_vars // 2 - 1))
    return {
        "num_vars": result.num_vars,
        "balanced": result.balanced,
        "algebraic_degree": result.algebraic_degree,
        "correlation_immunity": result.correlation_immunity,
        "nonlinearity": result.nonlinearity,
        "nonlinearity_bound": bound,
        "algebraic_immunity": result.algebraic_immunity,
        "algebraic_immunity_bound": math.ceil(result.num_vars / 2),
        "summary": summary,
    }


# Комбинирующая функция генератора ключевого потока на 16 переменных
F16_TERMS = (
    (1,), (2,), (3,), (4,), (5,), (6,), (7,), (8,),
    (9, 11), (10, 11), (10, 12), (13, 15), (14, 15), (14, 16),
    (9, 10, 11), (10, 11, 12), (13, 14, 15, 16),
)


def combiner_f16() -> AnfFunction:
    return AnfFunction(16, F16_TERMS, 0)


def builtin_functions() -> Dict[str, AnfFunction]:
    """Реестр именованных функций"""
    return {
        "F16": combiner_f16(),
        "MAJ3": AnfFunction(3, ((1, 2), (1, 3), (2, 3)), 0),
        "XOR2": AnfFunction(2, ((1,), (2,)), 0),
        "AND2": AnfFunction(2, ((1, 2),), 0),
    }
