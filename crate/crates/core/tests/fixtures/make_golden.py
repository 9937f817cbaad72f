"""Regenerates the step-edge fixture and its expected Sobel response.

Brute force, independent of the Rust implementation: replicated borders,
correlation with the two 3x3 Sobel kernels, L1 magnitude, clamp to 12 bits.
"""

import struct

W = H = 5
BITS = 12
MAXVAL = (1 << BITS) - 1

GX = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
GY = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]


def pgm(pixels):
    header = f"P5\n{W} {H}\n{MAXVAL}\n".encode()
    body = b"".join(struct.pack(">H", p) for row in pixels for p in row)
    return header + body


def at(img, x, y):
    return img[min(max(y, 0), H - 1)][min(max(x, 0), W - 1)]


def correlate(img, k, x, y):
    return sum(k[j][i] * at(img, x + i - 1, y + j - 1) for j in range(3) for i in range(3))


step = [[0 if x < 2 else 100 for x in range(W)] for _ in range(H)]
sobel = [
    [min(MAXVAL, abs(correlate(step, GX, x, y)) + abs(correlate(step, GY, x, y))) for x in range(W)]
    for y in range(H)
]

with open("step5x5.pgm", "wb") as f:
    f.write(pgm(step))
with open("step5x5_sobel.pgm", "wb") as f:
    f.write(pgm(sobel))
for row in sobel:
    print(row)
