from flow import io as fio
from flow.steps import clean, make_counter
import flow.steps


def run(src, dst):
    data = fio.load(src)
    cleaned = clean(data)
    fio.save(dst, cleaned)
    return len(cleaned)


def run_strict(src):
    data = fio.load(src)
    return [flow.steps.validate(r) for r in data]


def counter():
    return make_counter()
