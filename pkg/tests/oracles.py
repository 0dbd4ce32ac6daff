"""Naive pixel-loop reference implementations, independent of idol.metrics."""
import math


def dsc_loop(a, b):
    inter = sa = sb = 0
    for i in range(len(a)):
        for j in range(len(a[0])):
            sa += a[i][j]
            sb += b[i][j]
            if a[i][j] == 1 and b[i][j] == 1:
                inter += 1
    return 1.0 if sa + sb == 0 else 2.0 * inter / (sa + sb)


def mse_loop(a, b):
    s = 0.0
    n = 0
    for i in range(len(a)):
        for j in range(len(a[0])):
            s += (a[i][j] - b[i][j]) ** 2
            n += 1
    return s / n


def psnr_loop(a, b):
    m = mse_loop(a, b)
    return 100.0 if m < 1e-10 else 10.0 * math.log10(1.0 / m)


def mae_loop(a, b):
    s = 0.0
    n = 0
    for i in range(len(a)):
        for j in range(len(a[0])):
            s += abs(a[i][j] - b[i][j])
            n += 1
    return s / n
