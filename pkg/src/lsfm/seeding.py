"""Splitmix64 seed derivation so every repeat gets an independent, reproducible seed."""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Fold a path of integers (repeat, size index, ...) into the master seed.

    The result fits in 63 bits so numpy and JSON accept it unchanged.
    """
    z = splitmix64(int(master) & MASK64)
    for p in path:
        z = splitmix64(z ^ (int(p) & MASK64))
    return z >> 1
