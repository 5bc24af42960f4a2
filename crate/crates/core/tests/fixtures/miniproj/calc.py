"""Small arithmetic helpers."""


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def div(a, b):
    if b == 0:
        raise ValueError("division by zero")
    return a / b


def mean(values):
    if not values:
        return 0
    total = 0
    for v in values:
        total = add(total, v)
    return div(total, len(values))
