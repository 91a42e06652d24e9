"""
Ядро NLFSR для SUC-kit

Представление, шаг, преобразование форм и исчерпывающая проверка периода
одиночных регистров сдвига с нелинейной обратной связью (конфигурация Фибоначчи):
- ANF-функции в нотации RFF ("1,2,(2,4)")
- четыре формы обратной связи: basic, reverse, complement, reverse_complement
- пошаговая генерация и векторизованная таблица переходов на numpy
- проверка максимального периода 2^N - 1

Соглашение о битах: состояние хранится как int, бит i = ячейка i.
Выход - ячейка 0, сдвиг к ячейке 0, обратная связь входит в ячейку N-1.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from itertools import combinations
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_LENGTH = 26

Term = Tuple[int, ...]


class RffParseError(ValueError):
    """Ошибка разбора RFF-нотации"""


class DegenerateStateError(ValueError):
    """Регистр находится в вырожденном (неподвижном) состоянии"""


class FeedbackForm(Enum):
    """Формы функции обратной связи"""
    BASIC = "basic"
    REVERSE = "reverse"
    COMPLEMENT = "complement"
    REVERSE_COMPLEMENT = "reverse_complement"

    @property
    def is_reversed(self) -> bool:
        return self in (FeedbackForm.REVERSE, FeedbackForm.REVERSE_COMPLEMENT)

    @property
    def is_complemented(self) -> bool:
        return self in (FeedbackForm.COMPLEMENT, FeedbackForm.REVERSE_COMPLEMENT)


FORM_ORDER = (
    FeedbackForm.BASIC,
    FeedbackForm.REVERSE,
    FeedbackForm.COMPLEMENT,
    FeedbackForm.REVERSE_COMPLEMENT,
)


@dataclass(frozen=True)
class AnfFunction:
    """Булева функция в АНФ: constant XOR (XOR произведений переменных x_1..x_n)"""
    num_vars: int
    terms: Tuple[Term, ...] = ()
    constant: int = 0

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError(f"num_vars должен быть >= 0, получено {self.num_vars}")
        if self.constant not in (0, 1):
            raise ValueError(f"constant должен быть 0 или 1, получено {self.constant}")
        canonical = []
        for term in self.terms:
            indices = tuple(sorted(int(i) for i in term))
            if not indices:
                raise ValueError("пустой терм недопустим, используйте constant")
            if len(set(indices)) != len(indices):
                raise ValueError(f"повтор переменной в терме {term}")
            if indices[0] < 1 or indices[-1] > self.num_vars:
                raise ValueError(f"индекс терма {term} вне диапазона [1, {self.num_vars}]")
            canonical.append(indices)
        canonical.sort()
        for a, b in zip(canonical, canonical[1:]):
            if a == b:
                raise ValueError(f"повторяющийся терм {a}")
        object.__setattr__(self, "terms", tuple(canonical))

    @classmethod
    def from_terms(cls, num_vars: int, terms: Iterable[Iterable[int]], constant: int = 0) -> "AnfFunction":
        """Собирает функцию, сокращая повторяющиеся термы по модулю 2"""
        acc = set()
        const = constant & 1
        for term in terms:
            key = tuple(sorted(set(term)))
            if not key:
                const ^= 1
            elif key in acc:
                acc.remove(key)
            else:
                acc.add(key)
        return cls(num_vars, tuple(acc), const)

    @property
    def degree(self) -> int:
        """Наибольшая длина терма"""
        return max((len(t) for t in self.terms), default=0)

    def term_masks(self, shift: int = 0) -> Tuple[int, ...]:
        """Маски термов: переменная x_i -> бит (i - 1 + shift)"""
        return tuple(sum(1 << (i - 1 + shift) for i in t) for t in self.terms)

    def evaluate(self, assignment: int) -> int:
        """Значение на наборе, где бит (i-1) числа assignment = x_i"""
        acc = self.constant
        for mask in self._masks:
            if assignment & mask == mask:
                acc ^= 1
        return acc

    def evaluate_bits(self, bits: Sequence[int]) -> int:
        """Значение на наборе, заданном списком bits[i-1] = x_i"""
        assignment = 0
        for i, b in enumerate(bits):
            if b:
                assignment |= 1 << i
        return self.evaluate(assignment)

    @cached_property
    def _masks(self) -> Tuple[int, ...]:
        return self.term_masks()

    def __str__(self) -> str:
        parts = ["1"] if self.constant else []
        parts += ["x" + "·x".join(str(i) for i in t) for t in self.terms]
        return " ⊕ ".join(parts) if parts else "0"


def parse_rff(text: str, n: int) -> AnfFunction:
    """
    Разбирает RFF-нотацию для регистра длины n.

    "1,2,(2,4)" -> x1 ⊕ x2 ⊕ x2·x4. Индексы должны лежать в [1, n-1].
    """
    if n < 2:
        raise RffParseError(f"длина регистра должна быть >= 2, получено {n}")
    cleaned = re.sub(r"\s+", "", text or "")
    if not cleaned:
        raise RffParseError("пустая RFF")

    tokens = re.findall(r"\([^()]*\)|[^,()]+|[()]", cleaned)
    if ",".join(tokens) != cleaned:
        raise RffParseError(f"некорректная RFF: {text!r}")

    terms: List[Term] = []
    for token in tokens:
        if re.fullmatch(r"\d+", token):
            indices = (int(token),)
        elif re.fullmatch(r"\(\d+(,\d+)*\)", token):
            indices = tuple(int(x) for x in token[1:-1].split(","))
            if len(set(indices)) != len(indices):
                raise RffParseError(f"повтор переменной в терме {token}")
        else:
            raise RffParseError(f"некорректный фрагмент {token!r} в {text!r}")
        for i in indices:
            if i == 0:
                raise RffParseError(f"RFF не может использовать x0: {text!r}")
            if i >= n:
                raise RffParseError(f"индекс {i} вне диапазона [1, {n - 1}] в {text!r}")
        key = tuple(sorted(indices))
        if key in terms:
            raise RffParseError(f"повторяющийся терм {token} в {text!r}")
        terms.append(key)

    return AnfFunction(n - 1, tuple(terms), 0)


def format_rff(anf: AnfFunction) -> str:
    """Обратная к parse_rff запись в каноническом порядке"""
    if anf.constant:
        raise ValueError("RFF-нотация не выражает константу, используйте format_anf")
    if not anf.terms:
        raise ValueError("RFF-нотация не выражает нулевую функцию")
    return ",".join(
        str(t[0]) if len(t) == 1 else "(" + ",".join(str(i) for i in t) + ")"
        for t in anf.terms
    )


def format_anf(anf: AnfFunction) -> str:
    """Полная запись АНФ: "num_vars:constant:термы" (термы в RFF-нотации, могут быть пустыми)"""
    body = format_rff(AnfFunction(anf.num_vars, anf.terms, 0)) if anf.terms else ""
    return f"{anf.num_vars}:{anf.constant}:{body}"


def parse_anf(text: str) -> AnfFunction:
    """Разбор записи format_anf"""
    try:
        num_vars_text, const_text, body = text.strip().split(":", 2)
        num_vars = int(num_vars_text)
        constant = int(const_text)
    except ValueError as e:
        raise RffParseError(f"некорректная запись АНФ {text!r}: {e}") from e
    if constant not in (0, 1):
        raise RffParseError(f"константа должна быть 0 или 1 в {text!r}")
    if not body:
        return AnfFunction(num_vars, (), constant)
    parsed = parse_rff(body, num_vars + 1)
    return AnfFunction(num_vars, parsed.terms, constant)


def feedback_type(anf: AnfFunction) -> str:
    """
    Классифицирует RFF по квадратичным шаблонам опубликованных списков:
    f1 = x_a⊕x_b⊕x_c·x_d, f2 = x_a⊕x_b·x_c⊕x_d·x_e, f3 = x_a⊕x_b⊕x_c⊕x_d⊕x_e·x_h,
    и дополнительному f4 = x_a⊕x_b⊕x_c⊕x_d·x_e⊕x_h·x_k.
    """
    if anf.constant or anf.degree != 2:
        return "other"
    linear = sum(1 for t in anf.terms if len(t) == 1)
    quadratic = sum(1 for t in anf.terms if len(t) == 2)
    return {(2, 1): "f1", (1, 2): "f2", (4, 1): "f3", (3, 2): "f4"}.get((linear, quadratic), "other")


def _reverse_anf(anf: AnfFunction, n: int) -> AnfFunction:
    return AnfFunction(anf.num_vars, tuple(tuple(n - i for i in t) for t in anf.terms), anf.constant)


def _complement_anf(anf: AnfFunction) -> AnfFunction:
    """g(x̄): каждый терм раскрывается в XOR всех своих подмножеств"""
    expanded: List[Tuple[int, ...]] = []
    for term in anf.terms:
        for size in range(len(term) + 1):
            expanded.extend(combinations(term, size))
    return AnfFunction.from_terms(anf.num_vars, expanded, anf.constant)


def derive_form(basic_rff: AnfFunction, n: int, form: FeedbackForm) -> "FeedbackSpec":
    """
    Строит спецификацию формы из базовой RFF.

    reverse: индекс i -> n - i; complement: g(x̄_1..x̄_{n-1}), у функций
    максимального периода константа становится 1; reverse_complement: оба.
    """
    if basic_rff.num_vars != n - 1:
        raise ValueError(f"RFF на {basic_rff.num_vars} переменных не подходит для N={n}")
    rff = basic_rff
    if form.is_reversed:
        rff = _reverse_anf(rff, n)
    if form.is_complemented:
        rff = _complement_anf(rff)
    return FeedbackSpec(n, rff, form)


@dataclass(frozen=True)
class FeedbackSpec:
    """Регистр длины N с обратной связью f = x0 ⊕ rff(x_1..x_{N-1})"""
    length_n: int
    rff: AnfFunction
    form: FeedbackForm = FeedbackForm.BASIC

    def __post_init__(self):
        if self.length_n < 2:
            raise ValueError(f"длина регистра должна быть >= 2, получено {self.length_n}")
        if self.rff.num_vars != self.length_n - 1:
            raise ValueError(
                f"RFF должна быть над x_1..x_{self.length_n - 1}, получено {self.rff.num_vars} переменных"
            )

    @cached_property
    def _state_masks(self) -> Tuple[int, ...]:
        # x_i живет в бите i состояния
        return self.rff.term_masks(shift=1)

    @property
    def basic_rff(self) -> AnfFunction:
        """Базовая RFF: преобразования форм - инволюции"""
        return derive_form(self.rff, self.length_n, self.form).rff

    @property
    def full_mask(self) -> int:
        return (1 << self.length_n) - 1

    def feedback(self, state: int) -> int:
        """Бит обратной связи f(state)"""
        acc = (state & 1) ^ self.rff.constant
        for mask in self._state_masks:
            if state & mask == mask:
                acc ^= 1
        return acc

    def next_state(self, state: int) -> int:
        """Сдвиг вправо, f записывается в ячейку N-1"""
        return (state >> 1) | (self.feedback(state) << (self.length_n - 1))

    def __str__(self) -> str:
        try:
            return spec_to_text(self)
        except ValueError:
            # функция без RFF-записи (например, чистый сдвиг)
            return f"{self.length_n}:{self.form.value}:x0 ⊕ {self.rff}"


def degenerate_state(spec: FeedbackSpec) -> int:
    """Исключенная неподвижная точка: все нули для basic/reverse, все единицы для complement-форм"""
    return spec.full_mask if spec.form.is_complemented else 0


def canonical_start(spec: FeedbackSpec) -> int:
    """Каноническое невырожденное начальное состояние"""
    return degenerate_state(spec) ^ 1


def spec_to_text(spec: FeedbackSpec) -> str:
    """Сериализация "N:form:rff-text" (RFF записывается в базовой форме)"""
    return f"{spec.length_n}:{spec.form.value}:{format_rff(spec.basic_rff)}"


def spec_from_text(text: str) -> FeedbackSpec:
    """Обратное к spec_to_text: N:form:rff"""
    try:
        n_text, form_text, rff_text = text.strip().split(":", 2)
        n = int(n_text)
        form = FeedbackForm(form_text)
    except ValueError as e:
        raise RffParseError(f"некорректная спецификация {text!r}: {e}") from e
    return derive_form(parse_rff(rff_text, n), n, form)


@dataclass
class Nlfsr:
    """Регистр с текущим состоянием; владелец один, разделять между потоками нельзя"""
    spec: FeedbackSpec
    state: int
    steps_taken: int = 0

    def __post_init__(self):
        if not 0 <= self.state <= self.spec.full_mask:
            raise ValueError(f"состояние {self.state} не помещается в {self.spec.length_n} бит")
        self._check_state()

    def _check_state(self):
        if self.state == degenerate_state(self.spec):
            raise DegenerateStateError(
                f"вырожденное состояние {self.state:0{self.spec.length_n}b} для формы {self.spec.form.value}"
            )

    @classmethod
    def from_bits(cls, spec: FeedbackSpec, bits: Sequence[int]) -> "Nlfsr":
        """bits[i] = ячейка i"""
        if len(bits) != spec.length_n:
            raise ValueError(f"ожидалось {spec.length_n} бит, получено {len(bits)}")
        return cls(spec, sum((b & 1) << i for i, b in enumerate(bits)))

    def state_bits(self) -> List[int]:
        """Ячейки 0..N-1"""
        return [(self.state >> i) & 1 for i in range(self.spec.length_n)]


def step(nlfsr: Nlfsr) -> int:
    """Один такт: выдает ячейку 0, сдвигает, записывает f(старое состояние) в ячейку N-1"""
    nlfsr._check_state()
    out = nlfsr.state & 1
    nlfsr.state = nlfsr.spec.next_state(nlfsr.state)
    nlfsr.steps_taken += 1
    return out


def generate(nlfsr: Nlfsr, k: int) -> List[int]:
    """k последовательных выходов step"""
    if k < 0:
        raise ValueError(f"k должно быть >= 0, получено {k}")
    nlfsr._check_state()
    spec = nlfsr.spec
    state = nlfsr.state
    out = []
    for _ in range(k):
        out.append(state & 1)
        state = spec.next_state(state)
    nlfsr.state = state
    nlfsr.steps_taken += k
    return out


def successor_table(spec: FeedbackSpec) -> np.ndarray:
    """Таблица переходов: succ[s] = следующее состояние, для всех 2^N состояний"""
    n = spec.length_n
    if n > MAX_EXHAUSTIVE_LENGTH:
        raise ValueError(f"N={n} превышает предел {MAX_EXHAUSTIVE_LENGTH} для полной таблицы")
    states = np.arange(1 << n, dtype=np.uint32)
    fb = (states & np.uint32(1)) ^ np.uint32(spec.rff.constant)
    for mask in spec._state_masks:
        m = np.uint32(mask)
        fb ^= ((states & m) == m).astype(np.uint32)
    return (states >> np.uint32(1)) | (fb << np.uint32(n - 1))


@lru_cache(maxsize=24)
def cached_successor_table(spec: FeedbackSpec) -> np.ndarray:
    """successor_table только для чтения, с кэшем"""
    table = successor_table(spec)
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class PeriodReport:
    """Результат исчерпывающей проверки периода"""
    length_n: int
    period: int
    is_max_period: bool
    off_cycle_state: Optional[int] = None


def _prime_factors(m: int) -> List[int]:
    factors = []
    d = 2
    while d * d <= m:
        if m % d == 0:
            factors.append(d)
            while m % d == 0:
                m //= d
        d += 1 if d == 2 else 2
    if m > 1:
        factors.append(m)
    return factors


def _exact_period(succ: np.ndarray, start: int, n: int) -> Tuple[int, np.ndarray]:
    """Длина цикла через start: метка = минимум по орбите (удвоение указателей)"""
    labels = np.arange(succ.size, dtype=np.uint32)
    jump = succ.copy()
    for _ in range(n + 1):
        labels = np.minimum(labels, labels[jump])
        jump = jump[jump]
    on_cycle = labels == labels[start]
    return int(np.count_nonzero(on_cycle)), on_cycle


def verify_max_period(spec: FeedbackSpec) -> PeriodReport:
    """
    Исчерпывающая проверка периода.

    Сначала тест показателя: succ^M(start) = start и succ^(M/p)(start) != start для всех
    простых p | M, где M = 2^N - 1 (N возведений таблицы в квадрат). Если тест не пройден,
    точная длина цикла считается удвоением указателей.
    """
    n = spec.length_n
    if n > MAX_EXHAUSTIVE_LENGTH:
        raise ValueError(f"N={n} превышает предел {MAX_EXHAUSTIVE_LENGTH} для исчерпывающей проверки")

    succ = successor_table(spec)
    full = (1 << n) - 1
    start = canonical_start(spec)
    degenerate = degenerate_state(spec)

    exponents = [full] + [full // p for p in _prime_factors(full)]
    points = [start] * len(exponents)
    power = succ
    for bit in range(n):
        for j, e in enumerate(exponents):
            if (e >> bit) & 1:
                points[j] = int(power[points[j]])
        if bit < n - 1:
            power = power[power]

    order_ok = points[0] == start and all(p != start for p in points[1:])
    if order_ok and int(succ[degenerate]) == degenerate:
        logger.debug(f"✅ {spec}: период 2^{n}-1")
        return PeriodReport(n, full, True, degenerate)

    period, on_cycle = _exact_period(succ, start, n)
    off_cycle = None
    if period == full:
        off_cycle = int(np.flatnonzero(~on_cycle)[0])
    is_max = period == full and off_cycle == degenerate
    logger.debug(f"⚠️ {spec}: период {period} из {full}")
    return PeriodReport(n, period, is_max, off_cycle)


def is_modified_de_bruijn(seq: Sequence[int], n: int) -> bool:
    """Каждое ненулевое n-битное окно встречается ровно один раз за циклический период"""
    length = (1 << n) - 1
    bits = np.asarray(seq, dtype=np.uint32).ravel()
    if bits.size != length:
        raise ValueError(f"длина последовательности {bits.size}, ожидалось 2^{n}-1 = {length}")
    extended = np.concatenate([bits, bits[: n - 1]])
    windows = np.zeros(length, dtype=np.uint32)
    for j in range(n):
        windows |= extended[j:j + length] << np.uint32(j)
    if np.any(windows == 0):
        return False
    return np.unique(windows).size == length


def register_stream(spec: FeedbackSpec, state: int, k: int) -> Tuple[np.ndarray, int]:
    """
    Быстрая генерация k бит: орбита строится удвоением по степеням таблицы переходов.

    Возвращает (биты uint8, состояние после k шагов).
    """
    if k < 0:
        raise ValueError(f"k должно быть >= 0, получено {k}")
    succ = cached_successor_table(spec)
    states = np.array([state], dtype=np.uint32)
    power = succ
    while states.size <= k:
        states = np.concatenate([states, power[states]])
        if states.size <= k:
            power = power[power]
    bits = (states[:k] & np.uint32(1)).astype(np.uint8)
    return bits, int(states[k])
