import numpy as np
import pytest

from nstack import autodiff as ad
from nstack.rns import PdaSignature, delta_from_arrays, rns_readings
from nstack.vrns import vrns_readings


def random_deltas(rng, Q, G, n, low=0.1, high=2.0):
    """n timesteps of (push, repl, pop) real weight arrays without a batch axis."""
    return [(rng.uniform(low, high, (Q, G, Q, G)), rng.uniform(low, high, (Q, G, Q, G)),
             rng.uniform(low, high, (Q, G, Q))) for _ in range(n)]


def zero_deltas(Q, G, n):
    return [(np.zeros((Q, G, Q, G)), np.zeros((Q, G, Q, G)), np.zeros((Q, G, Q))) for _ in range(n)]


def run_rns(sig, deltas, semiring=ad.LOG):
    tape = ad.Tape()
    ds = [delta_from_arrays(tape, *(a[None] for a in d), semiring=semiring) for d in deltas]
    return [r.data[0] for r in rns_readings(tape, sig, ds, semiring)]


def run_vrns(sig, deltas, v0, pushed, semiring=ad.LOG, legacy_init=False):
    """VRNS readings with vectors given directly (not as logits)."""
    tape = ad.Tape()
    ds = [delta_from_arrays(tape, *(a[None] for a in d), semiring=semiring) for d in deltas]
    rs = vrns_readings(tape, sig, ds, tape.constant(np.asarray(v0, dtype=float)),
                       [tape.constant(np.asarray(v, dtype=float)[None]) for v in pushed], semiring,
                       legacy_init=legacy_init, logits=False)
    return [r.data[0] for r in rs]


def max_rel(a, b, floor=1e-300):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))) if a.size else 0.0


def random_instances(seed, count, max_n=6, max_q=2, max_g=2, max_m=None):
    """(sig, deltas[, m]) tuples drawn with sizes up to the given limits."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        Q, G = (int(x) for x in rng.integers(1, [max_q + 1, max_g + 1]))
        n = int(rng.integers(1, max_n + 1))
        sig = PdaSignature(Q, G)
        item = (sig, random_deltas(rng, Q, G, n))
        if max_m is not None:
            m = int(rng.integers(1, max_m + 1))
            item += (m, rng.uniform(0.05, 0.95, m), [rng.uniform(0.05, 0.95, m) for _ in range(n)])
        out.append(item)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[tuple[str, str, str]] = []


def record(name, passed, detail):
    """Remember one acceptance line; ``passed`` may be True, False or None (not run)."""
    status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[passed]
    ACCEPTANCE.append((status, name, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{status:8s} {name}: {detail}")
