"""Shared oracles and check utilities for the test suite.

Everything here is deliberately independent of the package internals:
the modal oracle is a plain triple loop over mode indices, and the
gradient checker uses central finite differences on the real and
imaginary parts separately.
"""

from __future__ import annotations

import math

import numpy as np


def oracle_modal_sum(lx, ly, lz, t60, source, receiver, f_hz, f_cutoff, c=343.0):
    """Brute-force modal transfer function, accumulated with math.fsum.

    Triple loop over integer mode indices; keeps every mode whose
    eigenfrequency is at or below f_cutoff.
    """
    omega = 2.0 * math.pi * f_hz
    tau = t60 / (3.0 * math.log(10.0))
    lim = 2.0 * f_cutoff / c
    re_terms, im_terms = [], []
    for nx in range(int(lim * lx) + 2):
        for ny in range(int(lim * ly) + 2):
            for nz in range(int(lim * lz) + 2):
                k_n_over_pi = math.sqrt(
                    (nx / lx) ** 2 + (ny / ly) ** 2 + (nz / lz) ** 2
                )
                if k_n_over_pi > lim + 1e-12 / max(lx, ly, lz):
                    continue
                omega_n = c * math.pi * k_n_over_pi
                norm = math.sqrt(
                    (2.0 if nx else 1.0) * (2.0 if ny else 1.0) * (2.0 if nz else 1.0)
                )
                psi_r = (
                    norm
                    * math.cos(nx * math.pi * receiver[0] / lx)
                    * math.cos(ny * math.pi * receiver[1] / ly)
                    * math.cos(nz * math.pi * receiver[2] / lz)
                )
                psi_s = (
                    norm
                    * math.cos(nx * math.pi * source[0] / lx)
                    * math.cos(ny * math.pi * source[1] / ly)
                    * math.cos(nz * math.pi * source[2] / lz)
                )
                den = complex(
                    (omega / c) ** 2 - (omega_n / c) ** 2,
                    -omega / (tau * c * c),
                )
                term = psi_r * psi_s / den
                re_terms.append(term.real)
                im_terms.append(term.imag)
    v = lx * ly * lz
    return complex(-math.fsum(re_terms) / v, -math.fsum(im_terms) / v)


def oracle_mode_count(lx, ly, lz, f_cutoff, c=343.0):
    """Number of modes with eigenfrequency <= f_cutoff, by brute force."""
    lim = 2.0 * f_cutoff / c
    count = 0
    for nx in range(int(lim * lx) + 2):
        for ny in range(int(lim * ly) + 2):
            for nz in range(int(lim * lz) + 2):
                k = math.sqrt((nx / lx) ** 2 + (ny / ly) ** 2 + (nz / lz) ** 2)
                if k <= lim + 1e-12 / max(lx, ly, lz):
                    count += 1
    return count


def rel_err(a, b, floor=1e-12):
    """Relative difference with an absolute floor for near-zero references."""
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / denom)


def check_gradients(build_loss, params, rng, n_samples=100, h=1e-5, rtol=1e-4):
    """Compare backprop gradients against central finite differences.

    build_loss() must rebuild the forward graph from the current
    parameter values and return the scalar loss tensor. Checks
    n_samples randomly chosen (parameter, entry, re/im) components
    spread across every parameter and returns the worst relative error.
    """
    loss = build_loss()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.grad = None

    names = sorted(params)
    worst = 0.0
    checked = 0
    # Visit every parameter at least once, then fill up with random picks.
    picks = []
    for name in names:
        picks.append(name)
    while len(picks) < n_samples:
        picks.append(names[rng.integers(len(names))])
    for name in picks[:n_samples]:
        p = params[name]
        flat = p.values.reshape(-1)
        idx = int(rng.integers(flat.size))
        part = "re" if rng.integers(2) == 0 else "im"
        delta = h if part == "re" else 1j * h
        orig = flat[idx]
        flat[idx] = orig + delta
        up = float(build_loss().values.real.reshape(-1)[0])
        flat[idx] = orig - delta
        dn = float(build_loss().values.real.reshape(-1)[0])
        flat[idx] = orig
        fd = (up - dn) / (2.0 * h)
        an = analytic[name].reshape(-1)[idx]
        an = an.real if part == "re" else an.imag
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        worst = max(worst, err)
        checked += 1
        assert err < rtol, (
            f"gradient mismatch for {name}[{idx}].{part}: "
            f"fd={fd:.10e} backprop={an:.10e} rel={err:.3e}"
        )
    return worst, checked
