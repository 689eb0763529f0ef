"""Counter-based random numbers.

Every draw is a pure function of (seed, stream, counter), so any consumer can
be replayed in isolation and results do not depend on draw order, thread
interleaving, or how work is partitioned across cells.  The mixing function
is the splitmix64 finalizer (Steele, Lea, Flood: "Fast splittable
pseudorandom number generators", OOPSLA 2014), a full-avalanche 64-bit hash.
"""

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(x: int) -> int:
    # splitmix64 finalizer
    x &= _MASK
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def raw64(seed: int, stream: int, counter: int) -> int:
    """64 pseudo-random bits keyed by (seed, stream, counter)."""
    h = _mix(seed)
    h = _mix(h ^ _mix(stream))
    return _mix(h ^ (counter & _MASK))


def uniform01(seed: int, stream: int, counter: int) -> float:
    """Uniform double in [0, 1), 53 bits of precision."""
    return (raw64(seed, stream, counter) >> 11) * (1.0 / (1 << 53))
