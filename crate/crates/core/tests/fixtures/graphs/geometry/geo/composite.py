from geo.shapes import Circle, Square as Sq
from geo.mixins import Serializable, Comparable
from geo import shapes


class Ring(Circle, Serializable, Comparable):
    def __init__(self, r, inner):
        super().__init__(r)
        self.inner = inner

    def area(self):
        outer = super().area()
        return outer - Circle(self.inner).area()

    def key(self):
        return self.area()

    def export(self):
        return self.to_dict()


def build(n):
    rings = [Ring(i + 2, i + 1) for i in range(n)]
    squares = [Sq(i) for i in range(n)]
    return rings, squares


def largest(n):
    rings, _ = build(n)
    best = rings[0]
    for r in rings:
        if best.less(r):
            best = r
    return best


def default_shape():
    return shapes.Shape()
