from typing import Iterable


class NeumaierSum:
    """Running sum with Neumaier's compensation.

    Handles addends larger than the running sum (where plain Kahan loses the
    carry), which happens when a shell of cells outweighs everything before it.

    Example:
        >>> acc = NeumaierSum()
        >>> for x in (1.0, 1e100, 1.0, -1e100):
        ...     acc += x
        >>> acc.value
        2.0
    """

    __slots__ = ("total", "compensation")

    def __init__(self, start: float = 0.0):
        self.total = float(start)
        self.compensation = 0.0

    def add(self, x: float) -> None:
        x = float(x)
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.compensation += (self.total - t) + x
        else:
            self.compensation += (x - t) + self.total
        self.total = t

    def __iadd__(self, x: float) -> "NeumaierSum":
        self.add(x)
        return self

    @property
    def value(self) -> float:
        return self.total + self.compensation

    def __repr__(self):
        return f"NeumaierSum({self.value!r})"


def neumaier_sum(values: Iterable[float]) -> float:
    acc = NeumaierSum()
    for x in values:
        acc.add(x)
    return acc.value
