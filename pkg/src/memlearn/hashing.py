"""64-bit mixing used for every table index in the package.

All hashed structures (Pythia planes, POPET weight tables, Athena planes,
Bloom filters) derive their indices from :func:`mix64`, the splitmix64
finalizer, salted with entries of :data:`SHIFT_CONSTANTS`. The constants are
the first outputs of a splitmix64 stream seeded with 0, forced odd.
"""

MASK64 = (1 << 64) - 1

SHIFT_CONSTANTS = (
    0xE220A8397B1DCDAF, 0x6E789E6AA1B965F5, 0x06C45D188009454F,
    0xF88BB8A8724C81ED, 0x1B39896A51A8749B, 0x53CB9F0C747EA2EB,
    0x2C829ABE1F4532E1, 0xC584133AC916AB3D, 0x3EE5789041C98AC3,
    0xF3B8488C368CB0A7, 0x657EECDD3CB13D09, 0xC2D326E0055BDEF7,
    0x8621A03FE0BBDB7B, 0x8E1F7555983AA92F, 0xB54E0F1600CC4D19,
    0x84BB3F97971D80AB, 0x7D29825C75521255, 0xC3CF17102B7F7F87,
    0x3466E9A083914F65, 0xD81A8D2B5A4485AD, 0xDB01602B100B9ED7,
    0xA9038A921825F10D, 0xEDF5F1D90DCA2F6B, 0x54496AD67BD2634D,
)


def mix64(x):
    """splitmix64 finalizer over the low 64 bits of ``x``."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fold(x, bits):
    """Reduce ``x`` to ``bits`` bits by mixing then xor-folding."""
    z = mix64(x)
    mask = (1 << bits) - 1
    out = 0
    while z:
        out ^= z & mask
        z >>= bits
    return out


def table_index(value, salt, rows):
    """Row of a ``rows``-entry table for ``value`` under ``salt`` (rows a power of two)."""
    return mix64(value + salt) & (rows - 1)
