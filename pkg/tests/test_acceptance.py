"""Acceptance gate.  Each test carries the criterion it covers; conftest prints a
PASS/FAIL line per criterion at the end of the session."""

import itertools
import math
import time
import warnings

import numpy as np
import pytest

from qss_sim import analysis, qcore
from qss_sim.adversary import AttackStrategy
from qss_sim.analysis import OverlapParams
from qss_sim.errors import AbortSignal
from qss_sim.protocol import (
    MultiPhoton,
    ProtocolConfig,
    Session,
    Single,
    SignalPhoton,
    detect,
    enquiry,
    extract_key,
    hop_check,
    run,
)

L = qcore.LabelState
criterion = pytest.mark.criterion


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# ---------------------------------------------------------------------------
# 1. bound constants


@criterion(1, "bound constants at the EPR point")
def test_bound_constants():
    with Timer() as t:
        epr = OverlapParams.epr()
        p1 = analysis.p1_bound(epr)
        p2 = analysis.p2_bound(epr)
        direct = analysis.overlap_sum_direct(analysis.eight_states(epr.realize()))
        formula = analysis.overlap_sum_formula(epr)
    assert p1 == pytest.approx(1 - math.sqrt(2) / 7, abs=1e-9)
    assert p2 == pytest.approx(1 - math.sqrt(2) / 6, abs=1e-9)
    assert direct == pytest.approx(16 / math.sqrt(2), abs=1e-9)
    assert formula == pytest.approx(direct, abs=1e-9)
    assert t.elapsed < 1.0


@criterion(1, "bound constants at the EPR point")
def test_bound_constants_from_raw_vectors():
    """Independent route: build the eight states by hand and sum |<i|j>| directly."""
    r = 1 / math.sqrt(2)
    phi = np.array([r, 0, 0, r], dtype=complex)
    ops = [qcore.encoding_matrix(u, k) for k in (0, 1) for u in range(4)]
    vecs = [np.kron(op, np.eye(2)) @ phi for op in ops]
    total = sum(abs(np.vdot(vecs[i], vecs[j])) for i in range(8) for j in range(8) if i != j)
    assert total == pytest.approx(16 / math.sqrt(2), abs=1e-9)
    assert 1 - total / 56 == pytest.approx(1 - math.sqrt(2) / 7, abs=1e-9)


# ---------------------------------------------------------------------------
# 2. minimizer


@criterion(2, "overlap minimizer finds the EPR point")
def test_minimizer():
    with Timer() as t:
        best, value = analysis.minimize_overlap(seed=0)
    assert (best.x, best.q, best.z) == pytest.approx((0.0, 0.0, 0.5), abs=1e-6)
    assert value == pytest.approx(16 / math.sqrt(2), abs=1e-6)
    assert t.elapsed < 10.0


# ---------------------------------------------------------------------------
# 3. honest completeness


@criterion(3, "honest runs never abort and keys agree")
def test_honest_completeness():
    with Timer() as t:
        for m, n in itertools.product((2, 3), repeat=2):
            for seed in range(100):
                tr = run(ProtocolConfig(m=m, n=n, N=64, seed=seed))
                assert not tr.aborted, (m, n, seed, tr.abort_cause)
                assert extract_key(tr) == tr.predicted_key
                assert len(tr.group_key) > 0
    assert t.elapsed < 5.0


# ---------------------------------------------------------------------------
# 4. original protocol broken


@criterion(4, "EPR substitution breaks the original protocol")
def test_original_protocol_break():
    with Timer() as t:
        correct = total = detected = 0
        for seed in range(100):
            tr = run(ProtocolConfig(m=2, n=2, N=16, seed=seed, mode="original"), AttackStrategy.epr_substitution())
            detected += tr.aborted
            eve = tr.eve
            assert eve.key_bits > 0
            correct += round(eve.key_accuracy * eve.key_bits)
            total += eve.key_bits
    assert detected == 0
    assert correct == total
    assert t.elapsed < 2.0


# ---------------------------------------------------------------------------
# 5. improved protocol detects


def _single_photon_error_rate(m: int, transcripts: list) -> tuple[float, int]:
    matched = errors = 0
    for tr in transcripts:
        mt, er = tr.checked_stats(("M5",))
        matched += mt
        errors += er
    seed = len(transcripts)
    while matched < 10_000:
        mt, er = run(ProtocolConfig(m=m, seed=seed), AttackStrategy.single_photon()).checked_stats(("M5",))
        matched, errors, seed = matched + mt, errors + er, seed + 1
    return errors / matched, matched


@criterion(5, "improved protocol detects EPR and single-photon substitution")
def test_improved_protocol_detection():
    rates = {}
    with Timer() as t:
        for m in (2, 3):
            for attack in (AttackStrategy.epr_substitution(), AttackStrategy.single_photon()):
                runs = [run(ProtocolConfig(m=m, seed=seed), attack) for seed in range(200)]
                aborts = sum(tr.aborted for tr in runs) / len(runs)
                rates[(m, attack.kind.value)] = aborts
                assert aborts >= 0.99, (m, attack.kind, aborts)
                if attack.kind.value == "single-photon":
                    err, samples = _single_photon_error_rate(m, runs)
                    bound = (m - 1) / (2 * m)
                    print(f"m={m} single-photon error rate {err:.4f} over {samples} samples; bound {bound:.4f}")
                    assert samples >= 10_000
                    assert err >= bound - 0.03
    print("abort frequencies", rates)
    assert t.elapsed < 30.0


# ---------------------------------------------------------------------------
# 6. Trojan horse and invisible photons


def _trojan_session(samples: int, seed: int) -> tuple[Session, list[SignalPhoton]]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = ProtocolConfig(m=2, n=2, N=8, min_samples=samples, sample_fraction=0.01, seed=seed)
    s = Session(cfg)
    photons = []
    for k in range(samples):
        s.creator[k] = 1
        s.records[1].add(k, 0, 0)
        photons.append(SignalPhoton(k, MultiPhoton((Single(L(0, 0)), Single(L(0, 0))))))
    return s, photons


@criterion(6, "Trojan/PNS and invisible-photon defences")
def test_pns_two_photon_frequency():
    with Timer() as t:
        rng = np.random.default_rng(2024)
        carrier = MultiPhoton((Single(L(0, 0)), Single(L(0, 0))))
        events = sum(detect(carrier, int(rng.integers(0, 2)), rng, None)[1] for _ in range(10_000))
    assert abs(events / 10_000 - 0.5) <= 0.02
    assert t.elapsed < 10.0


@criterion(6, "Trojan/PNS and invisible-photon defences")
def test_trojan_abort_with_sixteen_samples():
    assert 1 - 0.5**16 >= 0.999
    trials, aborts = 2000, 0
    with Timer() as t:
        for seed in range(trials):
            s, photons = _trojan_session(16, seed)
            try:
                hop_check(2, photons, s)
            except AbortSignal as sig:
                assert sig.cause == "two-photon"
                aborts += 1
    assert aborts / trials >= 0.999
    assert t.elapsed < 10.0


@criterion(6, "Trojan/PNS and invisible-photon defences")
def test_trojan_full_runs_abort():
    assert all(run(ProtocolConfig(m=2, N=64, seed=s), AttackStrategy.trojan()).aborted for s in range(50))


@criterion(6, "Trojan/PNS and invisible-photon defences")
def test_invisible_photons_filtered():
    with Timer() as t:
        for m in (2, 3, 4):
            for seed in range(10):
                tr = run(ProtocolConfig(m=m, N=64, seed=seed), AttackStrategy.invisible())
                assert not tr.aborted
                assert tr.eve.info_bits == 0
                assert extract_key(tr) == tr.predicted_key
    assert t.elapsed < 10.0
    # sanity: the same attack leaks once the filter is switched off
    leak = run(ProtocolConfig(m=3, N=64, seed=0, filter_enabled=False), AttackStrategy.invisible())
    assert leak.eve.info_bits > 0


@criterion(6, "Trojan/PNS and invisible-photon defences")
@pytest.mark.parametrize("m", [2, 4])
def test_not_last_frequency(m):
    with Timer() as t:
        rng = np.random.default_rng(100 + m)
        chain = list(range(1, m + 1))
        trials = 10_000
        not_last = sum(enquiry(s, chain, lambda p, s_, prior: (0, 0), rng)[-1][0] != 1 for s in range(trials))
    assert abs(not_last / trials - (m - 1) / m) <= 0.02
    assert t.elapsed < 10.0


# ---------------------------------------------------------------------------
# 7. exactness suites


def _label_matches_vector(lab: qcore.LabelState, vec: np.ndarray) -> bool:
    return np.allclose(lab.decode().amplitudes, vec, atol=1e-12)


@criterion(7, "exact label arithmetic and gate identities")
def test_label_vs_statevector_exhaustive():
    with Timer() as t:
        gates = list(qcore.GateCode)
        count = 0
        for a, b in itertools.product((0, 1), repeat=2):
            start = L(a, b)
            for k in range(5):
                for seq in itertools.product(gates, repeat=k):
                    lab, vec = start, qcore.encode_bb84(a, b).amplitudes
                    for g in seq:
                        lab = qcore.label_apply(g, lab)
                        vec = qcore.gate_matrix(g) @ vec
                    assert _label_matches_vector(lab, vec), (a, b, seq)
                    count += 1
    assert count == 4 * sum(5**k for k in range(5))
    assert t.elapsed < 1.0


@criterion(7, "exact label arithmetic and gate identities")
def test_four_states_orthogonality():
    with Timer() as t:
        ops = [qcore.GateCode.S0, qcore.GateCode.S1, qcore.GateCode.S2, qcore.GateCode.S3]
        vecs = [qcore.apply_on_a(g, qcore.PHI_PLUS).amplitudes for g in ops]
        for i, j in itertools.combinations(range(4), 2):
            assert abs(np.vdot(vecs[i], vecs[j])) < 1e-12
        for v in vecs:
            assert abs(np.vdot(v, v) - 1) < 1e-12
    assert t.elapsed < 1.0


@criterion(7, "exact label arithmetic and gate identities")
def test_gate_identities():
    G = qcore.gate_matrix
    S0, S1, S2, S3, H = (G(g) for g in qcore.GateCode)
    with Timer() as t:
        np.testing.assert_allclose(H @ S2 @ H, S3, atol=1e-12)
        np.testing.assert_allclose(H @ S3 @ H, S2, atol=1e-12)
        np.testing.assert_allclose(H @ S1 @ H, -S1, atol=1e-12)
        np.testing.assert_allclose(H @ H, S0, atol=1e-12)
        np.testing.assert_allclose(S2 @ S3, S1, atol=1e-12)
        np.testing.assert_allclose(S1 @ S1, -S0, atol=1e-12)
        for g in (S1, S2, S3, H):
            np.testing.assert_allclose(g.conj().T @ g, S0, atol=1e-12)
    assert t.elapsed < 1.0


@criterion(7, "exact label arithmetic and gate identities")
def test_gram_properties():
    rng = np.random.default_rng(7)
    with Timer() as t:
        points = [OverlapParams.epr(), OverlapParams(0.2, -0.1, 0.6), OverlapParams(0.0, 0.3, 0.4)]
        for p in points:
            g = analysis.gram(analysis.eight_states(p.realize()))
            assert np.abs(g - g.conj().T).max() < 1e-12
            assert np.abs(np.diag(g) - 1).max() < 1e-12
        for _ in range(20):
            v = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            g = qcore.gram_matrix(v)
            assert np.abs(g - g.conj().T).max() < 1e-12
            assert np.abs(np.diag(g) - 1).max() < 1e-12
    assert t.elapsed < 1.0


# ---------------------------------------------------------------------------
# 8. qualitative security claim


@criterion(8, "security claim covered by the bound and detection suites")
def test_security_claim_proxies():
    """Not a single number: the bounds stay below one and attacks are caught."""
    epr = OverlapParams.epr()
    assert analysis.p1_bound(epr) < 1 and analysis.p2_bound(epr) < 1
    best, value = analysis.minimize_overlap(seed=1)
    assert 1 - value / 56 < 1
    caught = sum(run(ProtocolConfig(m=2, seed=s), AttackStrategy.epr_substitution()).aborted for s in range(20))
    assert caught == 20
