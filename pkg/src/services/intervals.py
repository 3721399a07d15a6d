from typing import Iterator, List, Tuple

from sortedcontainers import SortedDict

Interval = Tuple[int, int]


class IntervalSet:
    """Conjunto de intervalos fechados [lo, hi] de inteiros, disjuntos e ordenados"""

    def __init__(self, coalesce_adjacent: bool = True):
        self.coalesce_adjacent = coalesce_adjacent
        self._ranges = SortedDict()  # lo -> hi

    def __len__(self) -> int:
        return len(self._ranges)

    def __iter__(self) -> Iterator[Interval]:
        return iter(self._ranges.items())

    def __bool__(self) -> bool:
        return bool(self._ranges)

    def ranges(self) -> List[Interval]:
        return list(self._ranges.items())

    def clear(self) -> None:
        self._ranges.clear()

    def _gap(self) -> int:
        return 1 if self.coalesce_adjacent else 0

    def add(self, lo: int, hi: int) -> None:
        if lo > hi:
            raise ValueError(f"Intervalo invertido: [{lo}, {hi}]")
        gap = self._gap()
        ranges = self._ranges

        # Intervalo anterior que toca ou sobrepõe lo
        idx = ranges.bisect_right(lo) - 1
        if idx >= 0:
            prev_lo = ranges.keys()[idx]
            prev_hi = ranges[prev_lo]
            if prev_hi + gap >= lo:
                if prev_hi >= hi:
                    return
                lo = prev_lo
                del ranges[prev_lo]

        # Absorve os seguintes que começam dentro de [lo, hi + gap]
        while True:
            idx = ranges.bisect_left(lo)
            if idx >= len(ranges):
                break
            next_lo = ranges.keys()[idx]
            if next_lo > hi + gap:
                break
            hi = max(hi, ranges.pop(next_lo))

        ranges[lo] = hi

    def covers(self, key: int) -> bool:
        idx = self._ranges.bisect_right(key) - 1
        if idx < 0:
            return False
        lo = self._ranges.keys()[idx]
        return self._ranges[lo] >= key

    def covers_range(self, lo: int, hi: int) -> bool:
        idx = self._ranges.bisect_right(lo) - 1
        if idx < 0:
            return False
        start = self._ranges.keys()[idx]
        return self._ranges[start] >= hi

    def overlapping(self, lo: int, hi: int) -> List[Interval]:
        result = []
        idx = max(self._ranges.bisect_right(lo) - 1, 0)
        keys = self._ranges.keys()
        while idx < len(keys):
            r_lo = keys[idx]
            if r_lo > hi:
                break
            r_hi = self._ranges[r_lo]
            if r_hi >= lo:
                result.append((r_lo, r_hi))
            idx += 1
        return result

    def uncovered(self, lo: int, hi: int) -> List[Interval]:
        """Sub-faixas de [lo, hi] que não estão no conjunto"""
        gaps = []
        cursor = lo
        for r_lo, r_hi in self.overlapping(lo, hi):
            if r_lo > cursor:
                gaps.append((cursor, r_lo - 1))
            cursor = max(cursor, r_hi + 1)
            if cursor > hi:
                break
        if cursor <= hi:
            gaps.append((cursor, hi))
        return gaps

    def total_length(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self._ranges.items())

    @classmethod
    def from_sorted_keys(cls, keys, coalesce_adjacent: bool = True) -> 'IntervalSet':
        """Corridas maximais de chaves consecutivas"""
        result = cls(coalesce_adjacent)
        run_lo = run_hi = None
        for key in keys:
            if run_lo is None:
                run_lo = run_hi = key
            elif key <= run_hi + 1:
                run_hi = max(run_hi, key)
            else:
                result._ranges[run_lo] = run_hi
                run_lo = run_hi = key
        if run_lo is not None:
            result._ranges[run_lo] = run_hi
        return result
