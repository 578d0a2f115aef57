def normalize(record):
    return {k.lower(): v for k, v in record.items()}


def validate(record):
    return "id" in record


def clean(records):
    out = []
    for r in records:
        n = normalize(r)
        if validate(n):
            out.append(n)
    return out


def make_counter():
    count = 0

    def bump():
        nonlocal count
        count += 1
        return count

    def bump_twice():
        bump()
        return bump()

    return bump_twice
