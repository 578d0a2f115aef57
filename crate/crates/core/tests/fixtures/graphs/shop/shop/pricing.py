TAX = 0.2


def subtotal(items):
    return sum(i["price"] for i in items)


def tax(amount):
    return amount * TAX


def total(items):
    base = subtotal(items)
    return base + tax(base)


def discounted(items, pct):
    def apply(value):
        return value * (1 - pct)

    return apply(total(items))
