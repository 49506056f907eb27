"""Party state machines and the run orchestrator for both protocol modes.

A run is a single logical timeline driven by one seeded generator.  Photons
carry a stable integer id: signal k of the first block has id k and decoys get
fresh ids as they are inserted.  Every private record, check and announcement
is keyed by photon id, so deleting or reordering photons never loses track of
who did what to which photon.

The classical channel is an ordered in-memory log of ``(step, party, payload)``
entries.  Attack strategies plug in through a small set of hooks on the
attacker object (see ``adversary.Attacker``).
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels, qcore
from .errors import AbortSignal, ConfigError, EncodingDomainError, IncompleteError, LengthError, StateError

BOBS = "bobs"
ZERO = qcore.LabelState(0, 0)


class Mode(str, enum.Enum):
    ORIGINAL = "original"
    IMPROVED = "improved"


class PauliSet(str, enum.Enum):
    FOUR = "four"
    THREE_012 = "three012"
    THREE_013 = "three013"

    @property
    def alphabet(self) -> tuple[int, ...]:
        return {"four": (0, 1, 2, 3), "three012": (0, 1, 2), "three013": (0, 1, 3)}[self.value]


class Origin(str, enum.Enum):
    SIGNAL = "signal"
    DECOY = "decoy"


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ProtocolConfig:
    m: int = 2
    n: int = 2
    N: int = 512
    decoy_counts: tuple[int, ...] | None = None
    sample_fraction: float = 0.2
    min_samples: int = 16
    epsilon_r: float = 0.0
    seed: int = 0
    pauli_set: PauliSet = PauliSet.FOUR
    filter_enabled: bool = True
    mode: Mode = Mode.IMPROVED

    def __post_init__(self):
        for name, lo in (("m", 2), ("n", 2), ("N", 1)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ConfigError(f"sample_fraction must lie in (0, 1), got {self.sample_fraction!r}")
        if not 0.0 <= self.epsilon_r <= 1.0:
            raise ConfigError(f"epsilon_r must lie in [0, 1], got {self.epsilon_r!r}")
        if self.min_samples < 0:
            raise ConfigError("min_samples must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
            object.__setattr__(self, "pauli_set", PauliSet(self.pauli_set))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.decoy_counts is None:
            counts = tuple(min(self.m**i - self.m ** (i - 1), 4 * self.min_samples) for i in range(2, self.m + 1))
        else:
            counts = tuple(int(c) for c in self.decoy_counts)
        if len(counts) != self.m - 1 or any(c < 0 for c in counts):
            raise ConfigError(f"decoy_counts needs {self.m - 1} non-negative entries, got {self.decoy_counts!r}")
        object.__setattr__(self, "decoy_counts", counts)
        if self.sample_fraction * self.n * self.N < self.min_samples:
            warnings.warn(
                f"sample_fraction*n*N = {self.sample_fraction * self.n * self.N:.1f} is below "
                f"min_samples={self.min_samples}; checks fall back to min_samples",
                stacklevel=3,
            )

    @property
    def alphabet(self) -> tuple[int, ...]:
        """Pauli indices an encoding Alice (i >= 2) may use in this mode."""
        return (0, 1) if self.mode is Mode.ORIGINAL else self.pauli_set.alphabet

    @property
    def signals(self) -> int:
        return self.n * self.N

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoy_counts"] = list(self.decoy_counts)
        d["mode"] = self.mode.value
        d["pauli_set"] = self.pauli_set.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if d.get("decoy_counts") is not None:
            d["decoy_counts"] = tuple(d["decoy_counts"])
        return cls(**d)


def sample_count(config: ProtocolConfig, available: int) -> int:
    """ceil(fraction * available), raised to min_samples, capped at what exists."""
    k = max(math.ceil(config.sample_fraction * available), config.min_samples)
    return min(k, available)


# --------------------------------------------------------------------------
# records and photons


@dataclass
class EncodingRecord:
    """Alice i's private choices, one (a, b) per photon id she touched."""

    party: int
    a_values: list[int] = field(default_factory=list)
    b_values: list[int] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not len(self.a_values) == len(self.b_values) == len(self.positions):
            raise LengthError("a_values, b_values and positions must have equal length")
        self._index = {p: k for k, p in enumerate(self.positions)}

    def add(self, pid: int, a: int, b: int) -> None:
        self._index[pid] = len(self.positions)
        self.positions.append(pid)
        self.a_values.append(int(a))
        self.b_values.append(int(b))

    def get(self, pid: int) -> tuple[int, int] | None:
        k = self._index.get(pid)
        return None if k is None else (self.a_values[k], self.b_values[k])

    def __contains__(self, pid) -> bool:
        return pid in self._index


@dataclass(frozen=True)
class Single:
    state: qcore.LabelState | qcore.PureState


@dataclass(frozen=True)
class EntangledHalf:
    pair_id: int


@dataclass(frozen=True)
class MultiPhoton:
    photons: tuple

    def __post_init__(self):
        if not self.photons:
            raise ValueError("MultiPhoton needs at least one inner photon")


@dataclass(frozen=True)
class Invisible:
    inner: object


@dataclass
class SignalPhoton:
    pid: int
    variant: object
    origin: Origin = Origin.SIGNAL
    creator: int = 1


_I2 = np.eye(2, dtype=np.complex128)


class PairRegistry:
    """Live A-E pair states; the A half travels, the E half stays with the attacker.

    Alongside each state the product of every gate applied to A is kept, so a
    test or report can compare an attacker's guess with the true composite.
    """

    def __init__(self):
        self._mats: dict[int, np.ndarray] = {}
        self._ops: dict[int, np.ndarray] = {}
        self._cond: dict[int, np.ndarray] = {}
        self._next = 0

    def add(self, bs: qcore.BipartiteState) -> int:
        pid = self._next
        self._next += 1
        self._mats[pid] = bs.as_matrix().copy()
        self._ops[pid] = _I2
        return pid

    def is_live(self, pid: int) -> bool:
        return pid in self._mats

    def apply(self, pid: int, u: np.ndarray) -> None:
        if pid not in self._mats:
            raise StateError(f"pair {pid} is not live")
        self._mats[pid] = u @ self._mats[pid]
        self._ops[pid] = u @ self._ops[pid]

    def state(self, pid: int) -> qcore.BipartiteState:
        if pid not in self._mats:
            raise StateError(f"pair {pid} is not live")
        return qcore.BipartiteState(self._mats[pid].reshape(-1))

    def vector(self, pid: int) -> np.ndarray:
        """Flattened A-leading amplitudes without re-validating normalization."""
        return self._mats[pid].reshape(-1)

    def composite(self, pid: int) -> np.ndarray:
        return self._ops[pid]

    def measure_a(self, pid: int, basis, rng: np.random.Generator) -> int:
        """Measure the A half; the pair dies and E keeps its conditional state."""
        mat = self._mats.pop(pid)
        v0, v1 = qcore.basis_states(basis)
        amp0 = v0.amplitudes.conj() @ mat
        p0 = float(np.vdot(amp0, amp0).real)
        outcome = 0 if rng.random() < p0 else 1
        amp = amp0 if outcome == 0 else v1.amplitudes.conj() @ mat
        self._cond[pid] = amp / np.linalg.norm(amp)
        return outcome

    def conditional(self, pid: int) -> np.ndarray | None:
        return self._cond.get(pid)

    def pop(self, pid: int) -> qcore.BipartiteState:
        st = self.state(pid)
        self.discard(pid)
        return st

    def discard(self, pid: int) -> None:
        del self._mats[pid]


def apply_step(variant, a: int, b: int, pairs: PairRegistry | None = None):
    """One encoding step (sigma_a then H^b) on whatever the photon physically is."""
    if isinstance(variant, Single):
        if isinstance(variant.state, qcore.LabelState):
            return Single(qcore.label_encode(a, b, variant.state))
        return Single(qcore.PureState(qcore.encoding_matrix(a, b) @ variant.state.amplitudes))
    if isinstance(variant, EntangledHalf):
        pairs.apply(variant.pair_id, qcore.encoding_matrix(a, b))
        return variant
    if isinstance(variant, MultiPhoton):
        return MultiPhoton(tuple(apply_step(p, a, b, pairs) for p in variant.photons))
    if isinstance(variant, Invisible):
        # invisible probes still pass through the modulators
        return Invisible(apply_step(variant.inner, a, b, pairs))
    raise TypeError(f"unknown photon variant {variant!r}")


def visible_parts(variant) -> list:
    if isinstance(variant, Invisible):
        return []
    if isinstance(variant, MultiPhoton):
        return [x for p in variant.photons for x in visible_parts(p)]
    return [variant]


def detect(variant, basis, rng, pairs: PairRegistry | None, pns: bool = True) -> tuple[int | None, bool]:
    """Measure a photon in ``basis``.

    Returns ``(outcome, two_photon)``.  With ``pns`` the signal first meets a
    50/50 splitter: k visible photons give a two-detector event with
    probability 1 - 2**(1-k).  Outcome is None when nothing visible arrives.
    """
    parts = visible_parts(variant)
    if not parts:
        return None, False
    if pns and len(parts) > 1 and rng.random() < 1.0 - 2.0 ** (1 - len(parts)):
        return None, True
    first = parts[0]
    if isinstance(first, EntangledHalf):
        return pairs.measure_a(first.pair_id, basis, rng), False
    if isinstance(first.state, qcore.LabelState):
        return qcore.measure_label(first.state, basis, rng), False
    return qcore.measure(first.state, basis, rng)[0], False


def strip_invisible(photons: list[SignalPhoton]) -> tuple[list[SignalPhoton], int]:
    """Filter stage: drop every invisible component, returning the stripped count."""
    out, stripped = [], 0

    def clean(v):
        nonlocal stripped
        if isinstance(v, Invisible):
            stripped += 1
            return None
        if isinstance(v, MultiPhoton):
            inner = [c for c in (clean(p) for p in v.photons) if c is not None]
            if not inner:
                return None
            return inner[0] if len(inner) == 1 else MultiPhoton(tuple(inner))
        return v

    for ph in photons:
        v = clean(ph.variant)
        if v is not None:
            ph.variant = v
            out.append(ph)
    return out, stripped


# --------------------------------------------------------------------------
# check results and transcript


@dataclass
class CheckResult:
    stage: str
    checker: str
    photons: list[int] = field(default_factory=list)
    bases: list[int] = field(default_factory=list)
    outcomes: list[int | None] = field(default_factory=list)
    expected: list[int | None] = field(default_factory=list)
    matched: int = 0
    errors: int = 0
    stripped: int = 0
    two_photon_events: int = 0
    aborted: bool = False
    cause: str | None = None

    @property
    def error_rate(self) -> float:
        return self.errors / self.matched if self.matched else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["error_rate"] = self.error_rate
        return d


@dataclass
class RunTranscript:
    config: ProtocolConfig
    announcements: list = field(default_factory=list)
    check_results: list[CheckResult] = field(default_factory=list)
    aborted: bool = False
    abort_step: str | None = None
    abort_cause: str | None = None
    bob_outcomes: dict = field(default_factory=dict)
    key_groups: list[int] = field(default_factory=list)
    group_key: list[int] = field(default_factory=list)
    predicted_key: list[int] = field(default_factory=list)
    checked_ids: list[int] = field(default_factory=list)
    photon_counts: list = field(default_factory=list)
    final_basis: dict = field(default_factory=dict)
    eve: object = None

    def checked_stats(self, stages: Sequence[str] | None = None) -> tuple[int, int]:
        """(basis-matched samples, errors) summed over checks, optionally by stage."""
        rs = [c for c in self.check_results if stages is None or c.stage in stages]
        return sum(c.matched for c in rs), sum(c.errors for c in rs)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "aborted": self.aborted,
            "abort_step": self.abort_step,
            "abort_cause": self.abort_cause,
            "announcements": [list(a) for a in self.announcements],
            "check_results": [c.to_dict() for c in self.check_results],
            "bob_outcomes": [[j, l, d] for (j, l), d in sorted(self.bob_outcomes.items())],
            "key_groups": list(self.key_groups),
            "group_key": list(self.group_key),
            "predicted_key": list(self.predicted_key),
            "checked_ids": sorted(self.checked_ids),
            "photon_counts": [list(p) for p in self.photon_counts],
            "final_basis": [[p, b] for p, b in sorted(self.final_basis.items())],
            "eve": None if self.eve is None else self.eve.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# session: the shared state of one run


class Session:
    """Everything one run needs: generator, private records, pair registry, log."""

    def __init__(self, config: ProtocolConfig, attack=None):
        self.config = config
        self.rng = np.random.default_rng(int(config.seed))
        self.records = {i: EncodingRecord(i) for i in range(1, config.m + 1)}
        self.creator: dict[int, int] = {}
        self.pairs = PairRegistry()
        self.log: list = []
        self.checks: list[CheckResult] = []
        self.checked_ids: list[int] = []
        self.photon_counts: list = []
        self.final_basis: dict[int, int] = {}
        self.next_id = config.signals
        self.eve = attack.spawn(self) if attack is not None else None

    def announce(self, step: str, party: str, payload) -> None:
        self.log.append((step, party, payload))

    def chain(self, pid: int, checkpoint: int) -> list[int]:
        """Alices that acted on photon ``pid`` before it reached ``checkpoint``.

        ``checkpoint`` is the receiving Alice's index, or m + 1 for the Bobs.
        The creator comes first (her (a, b) describes the prepared state).
        """
        return list(range(self.creator[pid], checkpoint))

    def answer(self, party: int, pid: int, chain: list[int], prior: list, checkpoint: int) -> tuple[int, int]:
        if self.eve is not None and party == self.eve.i0:
            return self.eve.answer(self, pid, chain, prior, checkpoint)
        return self.records[party].get(pid)

    def skips_check(self, i: int) -> bool:
        return self.eve is not None and self.eve.skips_check(i)

    def on_encoded(self, i: int, photons: list) -> list:
        return photons if self.eve is None else self.eve.on_encoded(self, i, photons)

    def on_transit(self, dest, photons: list) -> list:
        return photons if self.eve is None else self.eve.on_transit(self, dest, photons)


def replay_steps(steps: Sequence[tuple[int, int]], start: qcore.LabelState = ZERO) -> qcore.LabelState:
    lab = start
    for a, b in steps:
        lab = qcore.label_encode(a, b, lab)
    return lab


# --------------------------------------------------------------------------
# party operations


def alice_initial_block(A1: Sequence[int], B1: Sequence[int], rec: EncodingRecord | None = None) -> list[SignalPhoton]:
    """Alice 1's block: photon k carries |psi_{A1[k] B1[k]}>."""
    if len(A1) != len(B1):
        raise LengthError(f"|A1| = {len(A1)} but |B1| = {len(B1)}")
    out = []
    for k, (a, b) in enumerate(zip(A1, B1)):
        if a not in (0, 1) or b not in (0, 1):
            raise EncodingDomainError(f"Alice 1 prepares bits only, got a={a}, b={b}")
        out.append(SignalPhoton(k, Single(qcore.LabelState(int(a), int(b))), Origin.SIGNAL, 1))
        if rec is not None:
            rec.add(k, a, b)
    return out


def alice_encode(
    i: int,
    photons: list[SignalPhoton],
    rec: EncodingRecord,
    alphabet: Sequence[int] = (0, 1, 2, 3),
    pairs: PairRegistry | None = None,
) -> list[SignalPhoton]:
    """Apply Alice i's recorded step to every photon in the stream."""
    if i < 2:
        raise ConfigError("encoding Alices are numbered from 2")
    for ph in photons:
        ab = rec.get(ph.pid)
        if ab is None:
            raise StateError(f"Alice {i} has no encoding for photon {ph.pid}")
        a, b = ab
        if a not in alphabet or b not in (0, 1):
            raise EncodingDomainError(f"(a={a}, b={b}) outside allowed alphabet {tuple(alphabet)} x {{0,1}}")
        ph.variant = apply_step(ph.variant, a, b, pairs)
    return photons


def insert_decoys(
    i: int,
    photons: list[SignalPhoton],
    count: int,
    rng: np.random.Generator,
    next_id: int | None = None,
    rec: EncodingRecord | None = None,
) -> tuple[list[SignalPhoton], list[int]]:
    """Insert ``count`` uniformly random BB84 decoys at uniformly random slots.

    Returns the new stream and the decoy positions within it.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return photons, []
    if next_id is None:
        next_id = max((p.pid for p in photons), default=-1) + 1
    total = len(photons) + count
    slots = np.sort(rng.choice(total, size=count, replace=False))
    bits = rng.integers(0, 2, size=(count, 2))
    is_decoy = np.zeros(total, dtype=bool)
    is_decoy[slots] = True
    out, src, d = [], iter(photons), 0
    for pos in range(total):
        if is_decoy[pos]:
            a, b = int(bits[d, 0]), int(bits[d, 1])
            pid = next_id + d
            out.append(SignalPhoton(pid, Single(qcore.LabelState(a, b)), Origin.DECOY, i))
            if rec is not None:
                rec.add(pid, a, b)
            d += 1
        else:
            out.append(next(src))
    return out, [int(s) for s in slots]


def enquiry(
    s: int,
    chain: Sequence[int],
    answer: Callable[[int, int, list], tuple[int, int]],
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Ask the chain parties for their (a, b) on photon ``s`` in a fresh random order.

    ``answer(party, s, prior)`` sees every announcement made before its turn.
    """
    order = rng.permutation(len(chain))
    prior: list[tuple[int, int, int]] = []
    for k in order:
        party = chain[k]
        a, b = answer(party, s, list(prior))
        prior.append((party, int(a), int(b)))
    return prior


def expected_label(announced: Sequence[tuple[int, int, int]]) -> qcore.LabelState:
    """State the checker infers from announcements, applied in party order."""
    return replay_steps([(a, b) for _, a, b in sorted(announced)])


def _check(stage: str, checker: str, checkpoint: int, photons: list[SignalPhoton], session: Session):
    cfg, rng = session.config, session.rng
    res = CheckResult(stage, checker)
    if cfg.filter_enabled:
        photons, res.stripped = strip_invisible(photons)
    k = sample_count(cfg, len(photons))
    picked = set(int(x) for x in rng.choice(len(photons), size=k, replace=False)) if k else set()
    session.checks.append(res)
    for idx in sorted(picked):
        ph = photons[idx]
        basis = int(rng.integers(0, 2))
        outcome, two = detect(ph.variant, basis, rng, session.pairs)
        res.photons.append(ph.pid)
        res.bases.append(basis)
        res.outcomes.append(outcome)
        if two:
            res.two_photon_events += 1
            res.expected.append(None)
            res.aborted, res.cause = True, "two-photon"
            session.checked_ids.append(ph.pid)
            raise AbortSignal(stage, "two-photon", res)
        chain = session.chain(ph.pid, checkpoint)
        answers = enquiry(ph.pid, chain, lambda p, s, prior: session.answer(p, s, chain, prior, checkpoint), rng)
        session.announce(stage, checker, {"photon": ph.pid, "basis": basis, "outcome": outcome, "answers": answers})
        lab = expected_label(answers)
        if outcome is not None and lab.b == basis:
            res.matched += 1
            res.expected.append(lab.a)
            res.errors += int(outcome != lab.a)
        else:
            res.expected.append(None)
    session.checked_ids.extend(ph.pid for k_, ph in enumerate(photons) if k_ in picked and ph.origin is Origin.SIGNAL)
    if res.error_rate > cfg.epsilon_r:
        res.aborted, res.cause = True, "error-rate"
        raise AbortSignal(stage, "error-rate", res)
    return [ph for k_, ph in enumerate(photons) if k_ not in picked], res


def hop_check(i: int, photons: list[SignalPhoton], session: Session) -> tuple[list[SignalPhoton], CheckResult]:
    """Alice i's arrival check: filter, sample, PNS split, measure, enquire.

    Returns the unsampled photons and the check record; raises AbortSignal.
    """
    if not 2 <= i <= session.config.m:
        raise ConfigError(f"hop checks run at Alice 2..m, got {i}")
    return _check("M2", f"alice{i}", i, photons, session)


def bob_arrival_check(l: int, photons: list[SignalPhoton], session: Session) -> tuple[list[SignalPhoton], CheckResult]:
    """Bob l's check; the enquiry reaches every Alice that touched a sample."""
    return _check("M5", f"bob{l}", session.config.m + 1, photons, session)


def route_to_bobs(photons: list[SignalPhoton], n: int) -> list[list[SignalPhoton]]:
    """Signal id k goes to Bob k mod n; decoys are dealt round-robin in stream order."""
    out: list[list[SignalPhoton]] = [[] for _ in range(n)]
    d = 0
    for ph in photons:
        if ph.origin is Origin.SIGNAL:
            out[ph.pid % n].append(ph)
        else:
            out[d % n].append(ph)
            d += 1
    return out


def final_measure_bob(
    l: int,
    photons: list[SignalPhoton],
    b_announcements: dict[int, dict[int, int]],
    rng: np.random.Generator,
    pairs: PairRegistry | None = None,
) -> dict[int, int]:
    """Measure each remaining photon in Z if the XOR of announced b's is 0, else X.

    ``b_announcements[i][pid]`` is Alice i's announced b for photon pid.
    """
    out = {}
    for ph in photons:
        if ph.origin is Origin.DECOY:
            raise StateError(f"Bob {l} still holds decoy {ph.pid}")
        basis = 0
        for bs in b_announcements.values():
            basis ^= bs[ph.pid]
        outcome, _ = detect(ph.variant, basis, rng, pairs, pns=False)
        out[ph.pid] = outcome
    return out


def group_xor(outcomes: dict[tuple[int, int], int], n: int, groups: Sequence[int]) -> list[int]:
    key = []
    for j in groups:
        bit = 0
        for l in range(n):
            bit ^= outcomes[(j, l)]
        key.append(bit)
    return key


def extract_key(transcript: RunTranscript) -> list[int]:
    """K_j = XOR over Bobs of d_{nj+l} for every group with no checked share."""
    if transcript.aborted:
        raise IncompleteError(f"run aborted at {transcript.abort_step}; no key")
    cfg = transcript.config
    checked = set(transcript.checked_ids)
    for pid in range(cfg.signals):
        if pid not in checked and (pid // cfg.n, pid % cfg.n) not in transcript.bob_outcomes:
            raise IncompleteError(f"no outcome for unchecked signal {pid}")
    return group_xor(transcript.bob_outcomes, cfg.n, transcript.key_groups)


def predicted_key(
    config: ProtocolConfig,
    records: dict[int, EncodingRecord],
    groups: Sequence[int] | None = None,
    use_numba: bool | None = None,
) -> list[int]:
    """Key the Alices expect, by replaying every recorded step on labels."""
    groups = list(range(config.N)) if groups is None else list(groups)
    if not groups:
        return []
    pids = np.array([config.n * j + l for j in groups for l in range(config.n)], dtype=np.int64)
    a_mat = np.empty((config.m, pids.size), dtype=np.int64)
    b_mat = np.empty_like(a_mat)
    for i in range(1, config.m + 1):
        rec = records[i]
        for k, pid in enumerate(pids):
            a_mat[i - 1, k], b_mat[i - 1, k] = rec.get(int(pid))
    codes = _kernels.replay_labels(np.full(pids.size, ZERO.code), a_mat, b_mat, use_numba=use_numba)
    # final basis is the XOR of b's, which is the label basis by construction
    d = (codes & 1).reshape(len(groups), config.n)
    return [int(x) for x in np.bitwise_xor.reduce(d, axis=1)]


# --------------------------------------------------------------------------
# orchestration


def _random_record(session: Session, i: int, photons: list[SignalPhoton], alphabet) -> None:
    rng, rec = session.rng, session.records[i]
    a = rng.choice(np.asarray(alphabet), size=len(photons))
    b = rng.integers(0, 2, size=len(photons))
    for ph, ai, bi in zip(photons, a, b):
        rec.add(ph.pid, int(ai), int(bi))


def _announce_b(session: Session, pids: list[int], order: Sequence[int]) -> dict[int, dict[int, int]]:
    out = {}
    for i in order:
        rec = session.records[i]
        bs = {pid: rec.get(pid)[1] for pid in pids}
        session.announce("M6", f"alice{i}", {"B": [bs[p] for p in pids]})
        out[i] = bs
    return out


def _original_check(session: Session, outcomes: dict[int, int]) -> dict[int, int]:
    """Original-mode check: compare XOR of announced a's with Bobs' outcomes."""
    cfg, rng = session.config, session.rng
    pids = sorted(outcomes)
    k = sample_count(cfg, len(pids))
    picked = sorted(int(pids[x]) for x in rng.choice(len(pids), size=k, replace=False)) if k else []
    res = CheckResult("M7", "bobs")
    session.checks.append(res)
    chain = list(range(1, cfg.m + 1))
    for pid in picked:
        prior: list = []
        for party in chain:
            a, b = session.answer(party, pid, chain, list(prior), cfg.m + 1)
            prior.append((party, int(a), int(b)))
        want = 0
        for _, a, _ in prior:
            want ^= a & 1
        got = outcomes[pid]
        session.announce("M7", "enquiry", {"photon": pid, "a": [a for _, a, _ in prior], "d": got})
        res.photons.append(pid)
        res.bases.append(session.final_basis[pid])
        res.outcomes.append(got)
        res.expected.append(want)
        res.matched += 1
        res.errors += int(got != want)
    session.checked_ids.extend(picked)
    if res.error_rate > cfg.epsilon_r:
        res.aborted, res.cause = True, "error-rate"
        raise AbortSignal("M7", "error-rate", res)
    return {p: d for p, d in outcomes.items() if p not in set(picked)}


def _run_steps(session: Session) -> dict[int, int]:
    cfg, rng = session.config, session.rng
    improved = cfg.mode is Mode.IMPROVED
    nN = cfg.signals

    A1 = rng.integers(0, 2, size=nN)
    B1 = rng.integers(0, 2, size=nN)
    photons = alice_initial_block(A1.tolist(), B1.tolist(), session.records[1])
    for ph in photons:
        session.creator[ph.pid] = 1
    photons = session.on_encoded(1, photons)
    session.photon_counts.append((1, len(photons)))

    for i in range(2, cfg.m + 1):
        photons = session.on_transit(i, photons)
        if improved and not session.skips_check(i):
            photons, _ = hop_check(i, photons, session)
        _random_record(session, i, photons, cfg.alphabet)
        photons = alice_encode(i, photons, session.records[i], cfg.alphabet, session.pairs)
        photons = session.on_encoded(i, photons)
        if improved:
            photons, _ = insert_decoys(i, photons, cfg.decoy_counts[i - 2], rng, session.next_id, session.records[i])
            for ph in photons:
                if ph.pid >= session.next_id:
                    session.creator[ph.pid] = i
            session.next_id += cfg.decoy_counts[i - 2]
        session.photon_counts.append((i, len(photons)))

    photons = session.on_transit(BOBS, photons)
    per_bob = route_to_bobs(photons, cfg.n)

    if improved:
        for l in range(cfg.n):
            per_bob[l], _ = bob_arrival_check(l, per_bob[l], session)
        # decoy positions are disclosed over the classical channel, then dropped
        for i in range(2, cfg.m + 1):
            mine = [p for p in session.records[i].positions if session.creator.get(p) == i]
            session.announce("M6", f"alice{i}", {"decoys": mine})
        decoys = {pid for pid, c in session.creator.items() if pid >= nN}
        per_bob = [[ph for ph in lst if ph.pid not in decoys] for lst in per_bob]

    remaining = sorted(ph.pid for lst in per_bob for ph in lst)
    order = [int(i) + 1 for i in rng.permutation(cfg.m)] if improved else list(range(1, cfg.m + 1))
    session.announce("M6", "order", {"order": order})
    b_ann = _announce_b(session, remaining, order)
    for pid in remaining:
        bit = 0
        for bs in b_ann.values():
            bit ^= bs[pid]
        session.final_basis[pid] = bit

    outcomes: dict[int, int] = {}
    for l in range(cfg.n):
        outcomes.update(final_measure_bob(l, per_bob[l], b_ann, rng, session.pairs))
    if not improved:
        outcomes = _original_check(session, outcomes)
    return outcomes


def run(config: ProtocolConfig, attack=None) -> RunTranscript:
    """Execute one seeded run of the configured protocol mode."""
    if not isinstance(config, ProtocolConfig):
        raise ConfigError("run needs a ProtocolConfig")
    session = Session(config, attack)
    tr = RunTranscript(config)
    try:
        outcomes = _run_steps(session)
    except AbortSignal as sig:
        tr.aborted, tr.abort_step, tr.abort_cause = True, sig.step, sig.cause
        outcomes = {}
    tr.announcements = session.log
    tr.check_results = session.checks
    tr.checked_ids = list(session.checked_ids)
    tr.photon_counts = session.photon_counts
    tr.final_basis = dict(session.final_basis)
    n = config.n
    tr.bob_outcomes = {(pid // n, pid % n): d for pid, d in outcomes.items()}
    if not tr.aborted:
        tr.key_groups = [j for j in range(config.N) if all((j, l) in tr.bob_outcomes for l in range(n))]
        tr.group_key = extract_key(tr)
        tr.predicted_key = predicted_key(config, session.records, tr.key_groups)
    if session.eve is not None:
        tr.eve = session.eve.finish(session, tr)
    return tr
