import struct

def tensor(dims, values):
    out = b"EMT1" + bytes([len(dims)])
    out += b"".join(struct.pack("<I", d) for d in dims)
    out += b"".join(struct.pack("<f", v) for v in values)
    return out

def write(name, data):
    with open(name, "wb") as f:
        f.write(data)

mask_fg = [1.0, 0.75, 0.5, 0.25, 0.0, 1.0, 0.0, 0.5, 1.0]
write("mask_2x3x3.emt", tensor([2, 3, 3], [1.0 - v for v in mask_fg] + mask_fg))

score = [0.0, -0.0, 0.25, 1.0, 1e-40, 0.5,   # background
         0.0, 0.5, 1.0, 0.25, 0.75, 0.125]   # foreground
write("score_2x2x3.emt", tensor([2, 2, 3], score))

write("affinity_3x4.emt", tensor([3, 4], [i / 11.0 for i in range(12)]))

# Foreground channel of score_2x2x3, min-max normalized, rounded half away from zero.
fg = score[6:]
lo, hi = min(fg), max(fg)
gray = bytes(int((255 * (v - lo) / (hi - lo)) + 0.5) for v in fg)
write("score_2x2x3_fg.pgm", b"P5\n3 2\n255\n" + gray)

write("bad_magic.emt", b"XXXX" + tensor([2, 2], [1.0, 2.0, 3.0, 4.0])[4:])
write("truncated.emt", tensor([2, 4, 4], [0.5] * 32)[:-4])
write("rank4.emt", b"EMT1" + bytes([4]) + struct.pack("<4I", 1, 1, 1, 1) + struct.pack("<f", 0.0))
