import math

import pytest

from degenloc.model import FrequencyVector, Phase, builtin_function
from degenloc.operator import ModelParameters

CAL_LAM = 1e4
CAL_PHASE = Phase(0.1234, 0.3141)


def calibration_omega():
    return FrequencyVector((math.sqrt(5) - 1) / 2, math.sqrt(2) - 1)


def calibration_params(E=0.0, lam=CAL_LAM, phase=CAL_PHASE):
    return ModelParameters(lam, E, builtin_function("cos"), builtin_function("sin2"),
                           calibration_omega(), phase)


@pytest.fixture
def cal():
    return calibration_params()


def perturbation_instance(rng, adversarial=False, target=None):
    """Random (D, D', S, B, K, gamma, a, eps) meeting the perturbation hypotheses.

    Half the instances come from the calibration family, half from random
    diagonally dominant matrices.  Returns None when eps would drown in
    rounding of D.
    """
    import numpy as np
    from degenloc.greens import _distance_matrix, invert_tridiagonal
    from degenloc.operator import LatticeInterval, TridiagonalMatrix, assemble_H

    if rng.random() < 0.5:
        n = int(rng.integers(5, 80))
        D = rng.choice([-1.0, 1.0], n) * rng.uniform(2.5, 10.0, n)
    else:
        N = int(rng.integers(3, 40))
        p = calibration_params(E=float(rng.uniform(-CAL_LAM, CAL_LAM)),
                               phase=Phase(*rng.random(2)))
        D = assemble_H(p, LatticeInterval.centered(N)).diagonal.copy()
        n = D.size
    S = -np.ones(n - 1)
    G = invert_tridiagonal(TridiagonalMatrix(D, S))
    gamma = float(rng.uniform(0.2, 1.0))
    K = int(rng.integers(1, 6))
    dist = _distance_matrix(n)
    far = dist > K
    a = 1.0
    if np.any(far):
        a = max(1.0, 1.01 * float(np.max(np.abs(G.entries[far]) * np.exp(gamma * dist[far]))))
    B = max(1.0, 1.01 * G.operator_norm)
    c = float(rng.uniform(0.01, 0.49)) if target is None else target
    eps = c / (n * B ** 2 * math.exp(2 * gamma * K))
    if eps < 1e-10 * np.max(np.abs(D)):
        return None
    if adversarial:
        shift = -0.999 * eps * np.sign(D)
    else:
        shift = 0.999 * eps * rng.uniform(-1.0, 1.0, n)
    return D, D + shift, S, B, K, gamma, a, eps


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, ok, detail, seconds):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
