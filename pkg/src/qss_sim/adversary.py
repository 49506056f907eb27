"""Attack strategies against the secret sharing protocol."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import qcore
from .errors import ConfigError, DimensionError, NormalizationError, SpanError


@dataclass(frozen=True, eq=False)
class FakeSignalParams:
    """Unnormalized attacker kets for |phi> = |0>|alpha> + |1>|beta>."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.complex128).reshape(-1)
        beta = np.array(self.beta, dtype=np.complex128).reshape(-1)
        if alpha.shape != beta.shape or alpha.shape[0] < 2:
            raise DimensionError("alpha and beta need equal length S >= 2")
        z = np.vdot(alpha, alpha).real
        t = np.vdot(beta, beta).real
        if abs(z + t - 1.0) > 1e-9:
            raise NormalizationError(f"<alpha|alpha> + <beta|beta> = {z + t!r}, expected 1")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def epr(cls, dim_e: int = 2) -> "FakeSignalParams":
        alpha = np.zeros(dim_e, dtype=np.complex128)
        beta = np.zeros(dim_e, dtype=np.complex128)
        alpha[0] = beta[1] = 1 / np.sqrt(2)
        return cls(alpha, beta)

    @property
    def dim_e(self) -> int:
        return self.alpha.shape[0]

    @property
    def x(self) -> float:
        return float(2 * np.vdot(self.alpha, self.beta).real)

    @property
    def q(self) -> float:
        # (<a|b> - <b|a>) / i = 2 Im <a|b>
        return float(2 * np.vdot(self.alpha, self.beta).imag)

    @property
    def z(self) -> float:
        return float(np.vdot(self.alpha, self.alpha).real)

    @property
    def t(self) -> float:
        return float(np.vdot(self.beta, self.beta).real)

    def pair(self) -> qcore.BipartiteState:
        return qcore.make_pair(self.alpha, self.beta)

    def is_maximally_entangled(self, atol: float = 1e-9) -> bool:
        return abs(self.z - 0.5) < atol and abs(self.x) < atol and abs(self.q) < atol


# --------------------------------------------------------------------------
# measurements available to the attacker


class BellClass(enum.IntEnum):
    """Outcome of the four-state discrimination, named by the composite encoding."""

    ID = 0
    SIG1 = 1
    H_ = 2
    HSIG1 = 3

    @property
    def op_index(self) -> int:
        """Index into ``qcore.EIGHT_OPS`` of the representative operation."""
        return (0, 1, 4, 5)[self]


_R = 1 / np.sqrt(2)
ZERO = qcore.LabelState(0, 0)
# rows: Phi+, Psi-, (Phi- + Psi+)/sqrt2, (Phi- - Psi+)/sqrt2 in A,E order
_BELL_BASIS = np.array(
    [
        qcore.PHI_PLUS.amplitudes,
        qcore.PSI_MINUS.amplitudes,
        (qcore.PHI_MINUS.amplitudes + qcore.PSI_PLUS.amplitudes) * _R,
        (qcore.PHI_MINUS.amplitudes - qcore.PSI_PLUS.amplitudes) * _R,
    ]
)


def bell_probabilities(vecs: np.ndarray) -> np.ndarray:
    """Born weights of each flattened pair (rows, A-leading) on the four basis states."""
    vecs = np.asarray(vecs, dtype=np.complex128)
    dim_e = vecs.shape[1] // 2
    two = vecs.reshape(-1, 2, dim_e)[:, :, :2].reshape(-1, 4)
    return np.abs(two @ _BELL_BASIS.T.conj()) ** 2


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    r = rng.random(len(probs))[:, None] * cum[:, -1:]
    return np.minimum((r >= cum).sum(axis=1), probs.shape[1] - 1)


_EIGHT = np.array(qcore.EIGHT_OPS)


def _classify_many(ops: np.ndarray) -> np.ndarray:
    """Index of the eight-op each 2x2 matrix equals up to a global phase."""
    overlap = np.abs(np.einsum("gij,kij->kg", _EIGHT.conj(), ops)) / 2
    return overlap.argmax(axis=1)


def bell_discriminate(bs: qcore.BipartiteState, rng: np.random.Generator | None = None) -> BellClass:
    """Projective measurement in the orthonormal four-state basis.

    For S > 2 the basis is embedded in the first two ancilla levels.  Without
    ``rng`` the input must be a basis state up to phase.
    """
    probs = bell_probabilities(bs.amplitudes[None, :])[0]
    if abs(1.0 - probs.sum()) > 1e-9:
        raise SpanError(f"residual weight {1.0 - probs.sum():.3e} outside the Bell span")
    k = int(np.argmax(probs))
    if probs[k] > 1 - 1e-9:
        return BellClass(k)
    if rng is None:
        raise ValueError("outcome is random for this input; pass an rng")
    return BellClass(int(rng.choice(4, p=probs / probs.sum())))


@dataclass(frozen=True, eq=False)
class PrettyGoodMeasurement:
    """Square-root measurement for a weighted family of pure states.

    Element g is |mu_g><mu_g| with mu_g = rho^(-1/2) sqrt(p_g) phi_g; the
    projector onto the complement of the support closes the POVM.
    """

    vectors: np.ndarray  # rows mu_g
    complement: np.ndarray
    states: np.ndarray
    priors: np.ndarray

    @classmethod
    def build(cls, states, priors=None) -> "PrettyGoodMeasurement":
        phi = np.array([getattr(s, "amplitudes", s) for s in states], dtype=np.complex128)
        p = np.full(len(phi), 1 / len(phi)) if priors is None else np.asarray(priors, dtype=float)
        rho = (phi.T * p) @ phi.conj()
        w, v = np.linalg.eigh(rho)
        keep = w > 1e-12
        inv_sqrt = (v[:, keep] / np.sqrt(w[keep])) @ v[:, keep].conj().T
        mu = (inv_sqrt @ (phi.T * np.sqrt(p))).T
        supp = v[:, keep] @ v[:, keep].conj().T
        return cls(mu, np.eye(phi.shape[1]) - supp, phi, p)

    def operators(self) -> list[np.ndarray]:
        return [np.outer(m, m.conj()) for m in self.vectors]

    def probabilities(self, psi) -> np.ndarray:
        psi = np.asarray(getattr(psi, "amplitudes", psi), dtype=np.complex128)
        return np.abs(self.vectors.conj() @ psi) ** 2

    def success_probability(self) -> float:
        overlaps = np.abs(np.einsum("gi,gi->g", self.vectors.conj(), self.states)) ** 2
        return float(np.dot(self.priors, overlaps))

    def measure(self, psi, rng: np.random.Generator) -> int | None:
        """Sampled hypothesis index, or None for the complement outcome."""
        probs = self.probabilities(psi)
        r = rng.random()
        acc = 0.0
        for g, pg in enumerate(probs):
            acc += pg
            if r < acc:
                return g
        return None


# --------------------------------------------------------------------------
# attacker bookkeeping


class AttackKind(str, enum.Enum):
    EPR_SUBSTITUTION = "epr-substitution"
    SINGLE_PHOTON_SUBSTITUTION = "single-photon"
    TROJAN_MULTIPHOTON = "trojan"
    INVISIBLE_PHOTON = "invisible"
    FAKE_SIGNAL_GENERAL = "fake-signal"


@dataclass
class EveRecord:
    kind: str
    i0: int
    i1: object
    injected: int = 0
    intercepted: int = 0
    discriminations: int = 0
    discrimination_correct: int = 0
    answers_consistent: int = 0
    answers_commitment: int = 0
    answers_guess: int = 0
    times_last: int = 0
    times_not_last: int = 0
    probes_attached: int = 0
    probes_retrieved: int = 0
    info_bits: int = 0
    key_bits: int = 0
    key_accuracy: float | None = None
    detected: bool = False
    abort_step: str | None = None

    @property
    def discrimination_success(self) -> float | None:
        return self.discrimination_correct / self.discriminations if self.discriminations else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["discrimination_success"] = self.discrimination_success
        return d


def _replay(steps, start):
    lab = start
    for a, b in steps:
        lab = qcore.label_encode(a, b, lab)
    return lab


def eve_answer(
    me: int,
    chain: Sequence[int],
    prior: Sequence[tuple[int, int, int]],
    target: qcore.LabelState | None,
    commitment: tuple[int, int] | None,
    alphabet: Sequence[int],
    rng: np.random.Generator,
) -> tuple[int, int, str]:
    """Announcement of the attacker ``me`` for one enquired photon.

    ``target`` is the state she believes the checker measured.  She can make
    the checker's inference land on it only once every other chain party has
    spoken.  Otherwise she falls back on her commitment, then on a uniform
    guess over ``alphabet`` x {0, 1}.  Returns (a, b, how).
    """
    said = {p: (a, b) for p, a, b in prior}
    others = [p for p in chain if p != me]
    if target is not None and all(p in said for p in others):
        before = _replay([said[p] for p in others if p < me], ZERO)
        after = [said[p] for p in others if p > me]
        want = target.up_to_phase()
        for a in alphabet:
            for b in (0, 1):
                if _replay(after, qcore.label_encode(a, b, before)).up_to_phase() == want:
                    return a, b, "consistent"
    if commitment is not None:
        return commitment[0], commitment[1], "commitment"
    return int(rng.choice(np.asarray(alphabet))), int(rng.integers(0, 2)), "guess"



@dataclass(frozen=True)
class AttackStrategy:
    """Descriptor of an attack; ``spawn`` makes the stateful per-run attacker.

    ``i1`` is the interception point for the substitution attacks: an Alice
    index in (i0, m] or ``"bobs"``.  ``force_last`` is a diagnostic that lets
    the attacker answer every enquiry as though she spoke last.
    """

    kind: AttackKind
    i0: int = 1
    i1: object = "bobs"
    params: FakeSignalParams | None = None
    force_last: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))

    @classmethod
    def epr_substitution(cls, i0: int = 1, i1="bobs", **kw) -> "AttackStrategy":
        return cls(AttackKind.EPR_SUBSTITUTION, i0, i1, **kw)

    @classmethod
    def single_photon(cls, i0: int = 1, **kw) -> "AttackStrategy":
        return cls(AttackKind.SINGLE_PHOTON_SUBSTITUTION, i0, **kw)

    @classmethod
    def trojan(cls, i0: int = 1, **kw) -> "AttackStrategy":
        return cls(AttackKind.TROJAN_MULTIPHOTON, i0, **kw)

    @classmethod
    def invisible(cls, i0: int = 1, **kw) -> "AttackStrategy":
        return cls(AttackKind.INVISIBLE_PHOTON, i0, **kw)

    @classmethod
    def fake_signal(cls, params: FakeSignalParams, i0: int = 1, i1="bobs", **kw) -> "AttackStrategy":
        return cls(AttackKind.FAKE_SIGNAL_GENERAL, i0, i1, params=params, **kw)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "i0": self.i0, "i1": self.i1, "force_last": self.force_last}
        if self.params is not None:
            d["params"] = {
                "alpha": [[c.real, c.imag] for c in self.params.alpha],
                "beta": [[c.real, c.imag] for c in self.params.beta],
            }
        return d

    def spawn(self, session) -> "Attacker":
        m = session.config.m
        if not 1 <= self.i0 <= m:
            raise ConfigError(f"attacker index i0 must lie in 1..{m}, got {self.i0}")
        if self.kind in (AttackKind.EPR_SUBSTITUTION, AttackKind.FAKE_SIGNAL_GENERAL):
            if self.i1 != "bobs" and not (isinstance(self.i1, int) and self.i0 < self.i1 <= m):
                raise ConfigError(f"interception point i1 must be in {self.i0 + 1}..{m} or 'bobs', got {self.i1!r}")
        if self.kind is AttackKind.FAKE_SIGNAL_GENERAL and self.params is None:
            raise ConfigError("fake-signal attack needs FakeSignalParams")
        cls = {
            AttackKind.EPR_SUBSTITUTION: PairSubstitution,
            AttackKind.FAKE_SIGNAL_GENERAL: PairSubstitution,
            AttackKind.SINGLE_PHOTON_SUBSTITUTION: SinglePhotonSubstitution,
            AttackKind.TROJAN_MULTIPHOTON: ProbeAttack,
            AttackKind.INVISIBLE_PHOTON: ProbeAttack,
        }[self.kind]
        return cls(self, session)


class Attacker:
    """Hooks called by the protocol orchestrator; the base class does nothing."""

    def __init__(self, strategy: AttackStrategy, session):
        self.strategy = strategy
        self.i0 = strategy.i0
        i1 = strategy.i1 if strategy.kind in (AttackKind.EPR_SUBSTITUTION, AttackKind.FAKE_SIGNAL_GENERAL) else None
        self.record = EveRecord(strategy.kind.value, strategy.i0, i1)
        # photon id -> (label, checkpoint after which it is the photon's state)
        self.known: dict[int, tuple[qcore.LabelState, object]] = {}

    def skips_check(self, i: int) -> bool:
        return i == self.i0

    def on_encoded(self, session, i, photons):
        return photons

    def on_transit(self, session, dest, photons):
        return photons

    def target(self, session, pid, chain, said, checkpoint) -> qcore.LabelState | None:
        """State Eve knows photon ``pid`` is in when it reaches ``checkpoint``."""
        if pid not in self.known:
            return None
        lab, since = self.known[pid]
        start = session.config.m + 1 if since == "bobs" else since
        return _replay([said[p] for p in chain if p >= start], lab)

    def answer(self, session, pid, chain, prior, checkpoint) -> tuple[int, int]:
        if len(prior) == len(chain) - 1:
            self.record.times_last += 1
        else:
            self.record.times_not_last += 1
        if self.strategy.force_last:
            have = {p for p, _, _ in prior}
            prior = list(prior) + [(p, *session.records[p].get(pid)) for p in chain if p != self.i0 and p not in have]
        said = {p: (a, b) for p, a, b in prior}
        others_known = all(p in said for p in chain if p != self.i0)
        tgt = self.target(session, pid, chain, said, checkpoint) if others_known else None
        creator = session.creator[pid] == self.i0
        alphabet = (0, 1) if creator else session.config.alphabet
        a, b, how = eve_answer(self.i0, chain, prior, tgt, session.records[self.i0].get(pid), alphabet, session.rng)
        setattr(self.record, f"answers_{how}", getattr(self.record, f"answers_{how}") + 1)
        return a, b

    def finish(self, session, transcript) -> EveRecord:
        rec = self.record
        rec.detected, rec.abort_step = transcript.aborted, transcript.abort_step
        if transcript.aborted or not transcript.key_groups:
            return rec
        n, rng, hits = session.config.n, session.rng, 0
        for j, kbit in zip(transcript.key_groups, transcript.group_key):
            guess = 0
            for l in range(n):
                pid = n * j + l
                known = self.known.get(pid)
                if known is not None and known[1] == "bobs" and known[0].b == session.final_basis[pid]:
                    guess ^= known[0].a
                else:
                    guess ^= int(rng.integers(0, 2))
            hits += int(guess == kbit)
        rec.key_bits = len(transcript.group_key)
        rec.key_accuracy = hits / rec.key_bits
        return rec


class PairSubstitution(Attacker):
    """EPR (or general fake-signal) substitution with later interception.

    At her own step Eve keeps the photon she would have sent and forwards A
    halves of her pairs instead.  At ``i1`` she measures each returning pair,
    infers the composite encoding of the parties in between, applies it to
    the kept photon and forwards that.
    """

    def __init__(self, strategy, session):
        super().__init__(strategy, session)
        fp = strategy.params if strategy.params is not None else FakeSignalParams.epr()
        self.pair = fp.pair()
        self.epr_mode = strategy.kind is AttackKind.EPR_SUBSTITUTION
        self.pgm = None if self.epr_mode else PrettyGoodMeasurement.build(qcore.eight_transforms(self.pair))
        self.kept: dict[int, object] = {}
        self.pair_of: dict[int, int] = {}
        self.steered: dict[int, qcore.LabelState | None] = {}

    def on_encoded(self, session, i, photons):
        if i != self.i0:
            return photons
        from .protocol import EntangledHalf

        for ph in photons:
            self.kept[ph.pid] = ph.variant
            self.pair_of[ph.pid] = session.pairs.add(self.pair)
            ph.variant = EntangledHalf(self.pair_of[ph.pid])
        self.record.injected += len(photons)
        return photons

    def _guess_ops(self, states: np.ndarray, rng) -> np.ndarray:
        """Sampled op index per row of ``states`` (flattened pair vectors)."""
        if self.epr_mode:
            probs = bell_probabilities(states)
            picks = _sample_rows(probs, rng)
            return np.array([BellClass(k).op_index for k in picks], dtype=np.int64)
        probs = np.abs(states @ self.pgm.vectors.T.conj()) ** 2
        probs = np.hstack([probs, np.clip(1.0 - probs.sum(axis=1, keepdims=True), 0.0, None)])
        picks = _sample_rows(probs, rng)
        # the complement outcome leaves her with a uniform guess
        fallback = rng.integers(0, 8, size=len(picks))
        return np.where(picks == 8, fallback, picks)

    def on_transit(self, session, dest, photons):
        if dest != self.strategy.i1:
            return photons
        from .protocol import EntangledHalf, Single, apply_step

        hit = [
            ph
            for ph in photons
            if isinstance(ph.variant, EntangledHalf)
            and ph.pid in self.pair_of
            and session.pairs.is_live(ph.variant.pair_id)
        ]
        if not hit:
            return photons
        states = np.array([session.pairs.vector(ph.variant.pair_id) for ph in hit])
        truth = _classify_many(np.array([session.pairs.composite(ph.variant.pair_id) for ph in hit]))
        guesses = self._guess_ops(states, session.rng)
        for ph, g, t in zip(hit, guesses, truth):
            g = int(g)
            session.pairs.discard(ph.variant.pair_id)
            ph.variant = apply_step(self.kept.pop(ph.pid), g % 4, g // 4)
            self.record.discrimination_correct += int(g == t)
            if self.i0 == 1 and isinstance(ph.variant, Single) and isinstance(ph.variant.state, qcore.LabelState):
                self.known[ph.pid] = (ph.variant.state, dest)
        self.record.discriminations += len(hit)
        self.record.intercepted += len(hit)
        return photons

    def target(self, session, pid, chain, said, checkpoint):
        pair_id = self.pair_of.get(pid)
        if pair_id is not None and session.pairs.conditional(pair_id) is not None:
            if pid not in self.steered:
                self.steered[pid] = self._steer(session.pairs.conditional(pair_id), session.rng)
            lab = self.steered[pid]
            if lab is None:
                return None
            return _replay([said[p] for p in chain if p > self.i0], lab)
        return super().target(session, pid, chain, said, checkpoint)

    @staticmethod
    def _steer(e_state: np.ndarray, rng) -> qcore.LabelState | None:
        """Measure the kept E half in a random basis on its first two levels.

        Outcome e in basis beta is read as A having been |psi_{e beta}> at
        injection, which is exact for the maximally entangled pair.
        """
        beta = int(rng.integers(0, 2))
        v0, v1 = (s.amplitudes for s in qcore.basis_states(beta))
        p0 = abs(np.vdot(v0, e_state[:2])) ** 2
        p1 = abs(np.vdot(v1, e_state[:2])) ** 2
        r = rng.random()
        if r < p0:
            return qcore.LabelState(0, beta)
        if r < p0 + p1:
            return qcore.LabelState(1, beta)
        return None


class SinglePhotonSubstitution(Attacker):
    """Replace every photon bound for the Bobs with a fresh random BB84 state."""

    def on_transit(self, session, dest, photons):
        if dest != "bobs":
            return photons
        from .protocol import Single

        bits = session.rng.integers(0, 2, size=(len(photons), 2))
        for ph, (a, b) in zip(photons, bits):
            lab = qcore.LabelState(int(a), int(b))
            ph.variant = Single(lab)
            self.known[ph.pid] = (lab, "bobs")
        self.record.injected += len(photons)
        self.record.intercepted += len(photons)
        return photons


class ProbeAttack(Attacker):
    """Trojan (extra visible photon) or invisible-photon probing.

    Probes ride along with each signal from Eve's step and are pulled off just
    before the Bobs.  A probe attached by Alice 1 starts as a copy of the
    carrier, so after the other Alices' encodings it equals the carrier.
    """

    def __init__(self, strategy, session):
        super().__init__(strategy, session)
        self.invisible = strategy.kind is AttackKind.INVISIBLE_PHOTON

    def on_encoded(self, session, i, photons):
        if i != self.i0:
            return photons
        from .protocol import Invisible, MultiPhoton, Single

        for ph in photons:
            carrier = ph.variant
            probe = carrier if self.i0 == 1 else Single(ZERO)
            ph.variant = MultiPhoton((carrier, Invisible(probe) if self.invisible else probe))
        self.record.probes_attached += len(photons)
        return photons

    def on_transit(self, session, dest, photons):
        if dest != "bobs":
            return photons
        from .protocol import Invisible, MultiPhoton, Single

        for ph in photons:
            v = ph.variant
            if not (isinstance(v, MultiPhoton) and len(v.photons) == 2):
                continue
            carrier, probe = v.photons
            ph.variant = carrier
            self.record.probes_retrieved += 1
            inner = probe.inner if isinstance(probe, Invisible) else probe
            if self.i0 == 1 and isinstance(inner, Single) and isinstance(inner.state, qcore.LabelState):
                self.known[ph.pid] = (inner.state, "bobs")
        # a probe that never passed an honest encoder carries nothing
        self.record.info_bits = self.record.probes_retrieved if self.i0 < session.config.m else 0
        return photons


# --------------------------------------------------------------------------
# one-call drivers


def _drive(config, strategy: AttackStrategy) -> EveRecord:
    from .protocol import run

    return run(config, strategy).eve


def run_epr_substitution(config, i0: int = 1, i1="bobs") -> EveRecord:
    return _drive(config, AttackStrategy.epr_substitution(i0, i1))


def run_single_photon_substitution(config, i0: int = 1) -> EveRecord:
    return _drive(config, AttackStrategy.single_photon(i0))


def run_trojan(config, i0: int = 1) -> EveRecord:
    return _drive(config, AttackStrategy.trojan(i0))


def run_invisible(config, i0: int = 1) -> EveRecord:
    return _drive(config, AttackStrategy.invisible(i0))


def run_fake_signal_general(params: FakeSignalParams, config, i0: int = 1, i1="bobs") -> EveRecord:
    return _drive(config, AttackStrategy.fake_signal(params, i0, i1))
