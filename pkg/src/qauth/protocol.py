"""Trusted server, Alice and Bob as explicit state machines, and full protocol trials.

Message order within one trial:

1. Alice -> Tr: encrypted request naming Bob.
2. Tr -> Alice, Tr -> Bob: the same tamper specification under each party's key.
3-4. Tr emits ``k + d`` signal pairs; Eve (if any) sits on one or both paths.
5. Both parties measure and check the tamper slots; any failure restarts the round.
6. Alice discloses ``m`` key bits to Bob in the clear.
7. Bob accepts iff every disclosed bit matches his own measurement.

Tamper-spec plaintext (inside a TAMPER_SPEC frame, fields in order)::

    session   u64
    k         u32
    body      u32 d, then d x (position u32, basis u8, bit u8)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import adversary as adv
from .classical import (
    ChannelTranscript, FrameError, MsgType, SecretKey, decode_frame, decode_request,
    encode_frame, encode_request, receive, send, send_clear,
)
from .qchannel import (
    IDEAL_SOURCE, Basis, PairRegistry, Photon, PhotonSourceModel, SignalKind, SignalPair,
    emit_signal, measure,
)
from .rng import SplitMix64, sample_subset

ALICE, BOB, SERVER = "alice", "bob", "tr"
DEFAULT_KEYS = {ALICE: SecretKey(0xA11CE5EC12E7A11C), BOB: SecretKey(0xB0B5EC12E7B0B0B5)}

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_TRIPLE = struct.Struct("<IBB")


class ProtocolError(Exception):
    pass


class SpecParseError(ProtocolError):
    """The tamper specification did not decrypt to a valid message."""


class ParamError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ProtocolParams:
    k: int
    d: int
    error_threshold: float = 0.0
    m: int | None = None
    key_basis: Basis = Basis.RECTILINEAR
    max_restarts: int = 3
    target_D: float | None = None

    def __post_init__(self):
        if self.m is None:
            object.__setattr__(self, "m", self.k)
        object.__setattr__(self, "key_basis", Basis(self.key_basis))
        if self.k < 1:
            raise ParamError("k", "need at least one key bit")
        if self.d < 0:
            raise ParamError("d", "must be non-negative")
        if not 1 <= self.m <= self.k:
            raise ParamError("m", f"must satisfy 1 <= m <= k, got m={self.m}, k={self.k}")
        if not 0.0 <= self.error_threshold < 1.0:
            raise ParamError("error_threshold", "must lie in [0, 1)")
        if self.max_restarts < 0:
            raise ParamError("max_restarts", "must be non-negative")

    @property
    def n(self) -> int:
        return self.k + self.d

    @classmethod
    def for_target(cls, D: float, **kw) -> "ProtocolParams":
        from .analysis import size_parameters
        k, d = size_parameters(D)
        return cls(k=k, d=d, target_D=D, **kw)


@dataclass(frozen=True)
class TamperSpec:
    """Locations, bases and polarizations of the tamper slots in a stream of ``k + d``."""

    k: int
    positions: tuple[int, ...]
    entries: tuple[tuple[Basis, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        object.__setattr__(self, "entries", tuple((Basis(b), int(x)) for b, x in self.entries))
        if len(self.positions) != len(self.entries):
            raise ValueError("one entry per tamper position")
        n = self.length
        if any(not 0 <= p < n for p in self.positions):
            raise ValueError(f"tamper position outside [0, {n})")
        if any(b >= a for a, b in zip(self.positions[1:], self.positions)):
            raise ValueError("positions must be strictly increasing")
        if any(x not in (0, 1) for _, x in self.entries):
            raise ValueError("tamper bits must be 0 or 1")

    @property
    def d(self) -> int:
        return len(self.positions)

    @property
    def length(self) -> int:
        return self.k + len(self.positions)

    def key_slots(self) -> list[int]:
        tamper = set(self.positions)
        return [s for s in range(self.length) if s not in tamper]

    def lookup(self) -> dict[int, tuple[Basis, int]]:
        return dict(zip(self.positions, self.entries))


def build_tamper_spec(k: int, d: int, rng: SplitMix64) -> TamperSpec:
    positions = sample_subset(k + d, d, rng)
    entries = []
    for _ in positions:
        basis = Basis(rng.bit())
        entries.append((basis, rng.bit()))
    return TamperSpec(k, tuple(positions), tuple(entries))


def encode_tamper_spec(spec: TamperSpec, session: int = 0) -> bytes:
    body = [_U32.pack(spec.d)]
    body += [_TRIPLE.pack(p, int(b), x) for p, (b, x) in zip(spec.positions, spec.entries)]
    return encode_frame(MsgType.TAMPER_SPEC, [_U64.pack(session), _U32.pack(spec.k), b"".join(body)])


def decode_tamper_spec(data: bytes) -> tuple[int, TamperSpec]:
    try:
        _, fields = decode_frame(data, MsgType.TAMPER_SPEC)
        if len(fields) != 3 or len(fields[0]) != 8 or len(fields[1]) != 4:
            raise FrameError("tamper spec needs session, k and body fields")
        (session,), (k,) = _U64.unpack(fields[0]), _U32.unpack(fields[1])
        body = fields[2]
        if len(body) < 4:
            raise FrameError("missing tamper count")
        (d,) = _U32.unpack_from(body, 0)
        if len(body) != 4 + d * _TRIPLE.size:
            raise FrameError("tamper body length does not match count")
        triples = [_TRIPLE.unpack_from(body, 4 + i * _TRIPLE.size) for i in range(d)]
        if k < 1 or any(b > 1 for _, b, _ in triples):
            raise FrameError("bad k or basis code")
        spec = TamperSpec(k, tuple(p for p, _, _ in triples), tuple((b, x) for _, b, x in triples))
    except (FrameError, ValueError, struct.error) as exc:
        raise SpecParseError(str(exc)) from exc
    return session, spec


@dataclass(frozen=True)
class Disclosure:
    session: int
    slots: tuple[int, ...]
    bits: tuple[int, ...]

    def encode(self) -> bytes:
        return encode_frame(MsgType.DISCLOSURE, [
            _U64.pack(self.session),
            b"".join(_U32.pack(s) for s in self.slots),
            bytes(self.bits),
        ])

    @classmethod
    def decode(cls, data: bytes) -> "Disclosure":
        _, fields = decode_frame(data, MsgType.DISCLOSURE)
        if len(fields) != 3 or len(fields[0]) != 8 or len(fields[1]) != 4 * len(fields[2]):
            raise FrameError("malformed disclosure")
        slots = struct.unpack(f"<{len(fields[2])}I", fields[1])
        return cls(_U64.unpack(fields[0])[0], slots, tuple(fields[2]))


class Verdict(enum.Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass(frozen=True)
class PartyResult:
    key_slots: tuple[int, ...]
    key_bits: tuple[int, ...]
    tamper_errors: int
    tamper_checked: int
    verdict: Verdict

    @property
    def error_rate(self) -> float:
        return self.tamper_errors / self.tamper_checked if self.tamper_checked else 0.0

    def bit_at(self, slot: int) -> int:
        return self.key_bits[self.key_slots.index(slot)]


def tamper_verdict(errors: int, checked: int, threshold: float) -> Verdict:
    if checked == 0:
        return Verdict.PASS
    return Verdict.PASS if errors <= threshold * checked else Verdict.FAIL


def party_measure(stream: list[list[Photon]], spec: TamperSpec, params: ProtocolParams,
                  rng: SplitMix64) -> PartyResult:
    """Measure a received arm stream; only the first photon of each slot is detected."""
    if len(stream) != spec.length or spec.length != params.n:
        raise ProtocolError("stream length does not match k + d")
    tamper = spec.lookup()
    key_slots, key_bits, errors = [], [], 0
    for slot, arm in enumerate(stream):
        entry = tamper.get(slot)
        if entry is None:
            key_slots.append(slot)
            key_bits.append(measure(arm[0], params.key_basis, rng))
        else:
            basis, expected = entry
            errors += measure(arm[0], basis, rng) != expected
    verdict = tamper_verdict(errors, spec.d, params.error_threshold)
    return PartyResult(tuple(key_slots), tuple(key_bits), errors, spec.d, verdict)


def authenticate(disclosure: Disclosure, bob_result: PartyResult) -> bool:
    """Step 7: exact match of every disclosed bit against Bob's own measurement."""
    if bob_result.verdict is not Verdict.PASS:
        raise ProtocolError("Bob cannot authenticate after a failed tamper check")
    if not disclosure.slots:
        raise ProtocolError("empty disclosure")
    if len(disclosure.slots) != len(disclosure.bits):
        return False
    lookup = dict(zip(bob_result.key_slots, bob_result.key_bits))
    return all(lookup.get(s) == b for s, b in zip(disclosure.slots, disclosure.bits))


@dataclass
class ServerRound:
    spec: TamperSpec
    spec_msg_alice: int
    spec_msg_bob: int
    stream_alice: list[list[Photon]]
    stream_bob: list[list[Photon]]
    registry: PairRegistry
    signals: list[SignalPair]


@dataclass
class _ServerSession:
    alice: str
    bob: str
    spec: TamperSpec | None = None
    pair_ids: tuple[int, ...] = ()


class TrustedServer:
    """Tr. Keeps, per session, only the tamper spec and the ids of the pairs it emitted."""

    def __init__(self, keys: dict[str, SecretKey], source: PhotonSourceModel = IDEAL_SOURCE):
        self._keys = dict(keys)
        self.source = source
        self.sessions: dict[int, _ServerSession] = {}

    def handle_request(self, transcript: ChannelTranscript, index: int) -> int:
        msg = transcript[index]
        try:
            sender, peer, session = decode_request(receive(transcript, index, self._keys[msg.sender]))
        except (KeyError, FrameError) as exc:
            raise ProtocolError(f"rejected request: {exc}") from exc
        if sender != msg.sender or peer not in self._keys:
            raise ProtocolError("request names an unknown party")
        self.sessions[session] = _ServerSession(sender, peer)
        return session

    def restart_session(self, session: int) -> int:
        """Abandon ``session`` after a failed tamper check; the next round uses a fresh id."""
        old = self.sessions[session]
        new = max(self.sessions) + 1
        self.sessions[new] = _ServerSession(old.alice, old.bob)
        return new

    def server_round(self, session: int, params: ProtocolParams, rng: SplitMix64,
                     transcript: ChannelTranscript, spec: TamperSpec | None = None) -> ServerRound:
        sess = self.sessions[session]
        if spec is None:
            spec = build_tamper_spec(params.k, params.d, rng)
        elif spec.k != params.k or spec.d != params.d:
            raise ProtocolError("pinned spec does not match k, d")
        plaintext = encode_tamper_spec(spec, session)
        idx_a = send(transcript, self._keys[sess.alice], SERVER, sess.alice, plaintext)
        idx_b = send(transcript, self._keys[sess.bob], SERVER, sess.bob, plaintext)

        registry = PairRegistry()
        tamper = spec.lookup()
        signals = []
        for slot in range(spec.length):
            entry = tamper.get(slot)
            if entry is None:
                signals.append(emit_signal(SignalKind.KEY, None, None, self.source, rng, registry))
            else:
                signals.append(emit_signal(SignalKind.TAMPER, entry[0], entry[1], self.source, rng, registry))
        sess.spec = spec
        sess.pair_ids = tuple(registry.entries)
        return ServerRound(spec, idx_a, idx_b, [s.alice_arm for s in signals],
                           [s.bob_arm for s in signals], registry, signals)


class PartyState(enum.Enum):
    IDLE = "idle"
    AWAITING_SPEC = "awaiting-spec"
    SPEC_RECEIVED = "spec-received"
    MEASURED = "measured"
    DONE = "done"
    ABORTED = "aborted"


class Party:
    """Alice or Bob. Bob's session starts when Tr's spec message arrives."""

    def __init__(self, name: str, key: SecretKey):
        self.name = name
        self.key = key
        self.state = PartyState.IDLE
        self.session: int | None = None
        self.spec: TamperSpec | None = None
        self.result: PartyResult | None = None

    def _expect(self, *states: PartyState) -> None:
        if self.state not in states:
            raise ProtocolError(f"{self.name}: illegal transition from {self.state.value}")

    def request(self, transcript: ChannelTranscript, peer: str, session: int) -> int:
        self._expect(PartyState.IDLE)
        idx = send(transcript, self.key, self.name, SERVER, encode_request(self.name, peer, session))
        self.session = session
        self.state = PartyState.AWAITING_SPEC
        return idx

    def receive_spec(self, transcript: ChannelTranscript, index: int) -> TamperSpec:
        self._expect(PartyState.IDLE, PartyState.AWAITING_SPEC)
        try:
            session, spec = decode_tamper_spec(receive(transcript, index, self.key))
        except SpecParseError:
            self.state = PartyState.ABORTED
            raise
        if self.session is not None and session != self.session:
            self.state = PartyState.ABORTED
            raise SpecParseError("session id mismatch")
        self.session, self.spec = session, spec
        self.state = PartyState.SPEC_RECEIVED
        return spec

    def measure_stream(self, stream: list[list[Photon]], params: ProtocolParams,
                       rng: SplitMix64) -> PartyResult:
        self._expect(PartyState.SPEC_RECEIVED)
        self.result = party_measure(stream, self.spec, params, rng)
        self.state = PartyState.MEASURED
        return self.result

    def disclose(self, transcript: ChannelTranscript, peer: str, m: int) -> Disclosure:
        self._expect(PartyState.MEASURED)
        r = self.result
        disclosure = Disclosure(self.session, r.key_slots[:m], r.key_bits[:m])
        send_clear(transcript, self.name, peer, disclosure.encode())
        self.state = PartyState.DONE
        return disclosure

    def verify(self, transcript: ChannelTranscript, index: int) -> bool:
        self._expect(PartyState.MEASURED)
        disclosure = Disclosure.decode(receive(transcript, index, None))
        self.state = PartyState.DONE
        return disclosure.session == self.session and authenticate(disclosure, self.result)

    def restart(self, session: int) -> None:
        self._expect(PartyState.MEASURED)
        self.spec, self.result = None, None
        self.session = session
        self.state = PartyState.AWAITING_SPEC if self.name == ALICE else PartyState.IDLE
        if self.name != ALICE:
            self.session = None


@dataclass
class TrialOutcome:
    authenticated: bool
    alice_accepted: bool
    eavesdropping_detected: bool
    restarts: int
    restart_limit_exceeded: bool
    eve_key_bits_known: int
    eve_forged_auth: bool
    forge_guessed_bits: int
    alice_tamper_errors: int
    alice_tamper_checked: int
    bob_tamper_errors: int
    bob_tamper_checked: int
    key_agreement: bool
    coverage_success: bool
    disturbed_tamper_slots: int

    @property
    def alice_tamper_error_rate(self) -> float:
        return self.alice_tamper_errors / self.alice_tamper_checked if self.alice_tamper_checked else 0.0

    @property
    def bob_tamper_error_rate(self) -> float:
        return self.bob_tamper_errors / self.bob_tamper_checked if self.bob_tamper_checked else 0.0

    def as_row(self) -> tuple[int, ...]:
        """Integer record in the trial kernels' field order (see ``qauth.kernel.FIELDS``)."""
        return (
            int(self.alice_accepted), int(self.eve_forged_auth), int(self.eavesdropping_detected),
            self.restarts, int(self.restart_limit_exceeded), self.eve_key_bits_known,
            self.forge_guessed_bits, self.alice_tamper_errors, self.alice_tamper_checked,
            self.bob_tamper_errors, self.bob_tamper_checked, int(self.key_agreement),
            int(self.coverage_success), self.disturbed_tamper_slots,
        )


@dataclass
class RoundRecord:
    spec: TamperSpec
    alice: PartyResult
    bob: PartyResult
    knowledge: adv.EveKnowledge


class Session:
    """One full trial: request, up to ``max_restarts + 1`` rounds, disclosure and verdict.

    ``pinned_specs`` replaces the server's random tamper specs round by round
    (used to replay fixed scenarios).
    """

    def __init__(self, params: ProtocolParams, strategy: adv.AdversaryStrategy | None,
                 rng: SplitMix64, source: PhotonSourceModel = IDEAL_SOURCE,
                 keys: dict[str, SecretKey] | None = None,
                 pinned_specs: list[TamperSpec] | None = None):
        self.params = params
        self.strategy = strategy or adv.AdversaryStrategy.passive()
        self.strategy.validate(params.k, params.d)
        self.rng = rng
        self.keys = dict(keys or DEFAULT_KEYS)
        self.transcript = ChannelTranscript()
        self.server = TrustedServer(self.keys, source)
        self.alice = Party(ALICE, self.keys[ALICE])
        self.bob = Party(BOB, self.keys[BOB])
        self.pinned = list(pinned_specs or [])
        self.rounds: list[RoundRecord] = []
        self.disclosure: Disclosure | None = None
        self.forged: adv.ForgedToken | None = None

    def _eve_spec(self, msg_index: int) -> TamperSpec | None:
        # Eve decrypts in time only when the scenario grants it.
        if not self.strategy.knows_plaintext:
            return None
        return decode_tamper_spec(receive(self.transcript, msg_index, self.keys[ALICE]))[1]

    def _round(self, session: int) -> RoundRecord:
        params, rng = self.params, self.rng
        pinned = self.pinned[len(self.rounds)] if len(self.rounds) < len(self.pinned) else None
        sr = self.server.server_round(session, params, rng, self.transcript, pinned)
        self.alice.receive_spec(self.transcript, sr.spec_msg_alice)
        self.bob.receive_spec(self.transcript, sr.spec_msg_bob)

        eve_spec = self._eve_spec(sr.spec_msg_alice)
        knowledge = adv.EveKnowledge(key_basis=params.key_basis)
        streams = {ALICE: sr.stream_alice, BOB: sr.stream_bob}
        for arm in self.strategy.arms:
            streams[arm], knowledge = adv.apply(self.strategy, streams[arm], eve_spec, rng,
                                                params.key_basis, knowledge)

        a = self.alice.measure_stream(streams[ALICE], params, rng)
        b = self.bob.measure_stream(streams[BOB], params, rng)
        adv.measure_retained(knowledge, rng)
        knowledge.disturbed_tamper_slots = len(knowledge.measured_slots & set(sr.spec.positions))
        record = RoundRecord(sr.spec, a, b, knowledge)
        self.rounds.append(record)
        return record

    def run(self) -> TrialOutcome:
        params = self.params
        session = 0
        self.alice.request(self.transcript, BOB, session)
        self.server.handle_request(self.transcript, 0)

        detected, restarts, exceeded = False, 0, False
        a_err = a_chk = b_err = b_chk = 0
        coverage_success = False
        while True:
            rec = self._round(session)
            a_err += rec.alice.tamper_errors
            a_chk += rec.alice.tamper_checked
            b_err += rec.bob.tamper_errors
            b_chk += rec.bob.tamper_checked
            passed = rec.alice.verdict is Verdict.PASS and rec.bob.verdict is Verdict.PASS
            if len(self.rounds) == 1:
                key_slots = rec.spec.key_slots()
                coverage_success = passed and all(s in rec.knowledge.measured_slots for s in key_slots)
            if passed:
                break
            detected = True
            if restarts == params.max_restarts:
                exceeded = True
                break
            restarts += 1
            session = self.server.restart_session(session)
            self.alice.restart(session)
            self.bob.restart(session)

        rec = self.rounds[-1]
        key_slots = rec.spec.key_slots()
        alice_ok = forged = False
        guessed = 0
        if not exceeded:
            self.disclosure = self.alice.disclose(self.transcript, BOB, params.m)
            alice_ok = self.bob.verify(self.transcript, len(self.transcript) - 1)
            self.forged = adv.forge_attempt(rec.knowledge, self.disclosure.slots, params.k,
                                            params.m, self.rng)
            guessed = self.forged.guessed
            forged = authenticate(Disclosure(session, self.forged.slots, self.forged.bits), rec.bob)

        return TrialOutcome(
            authenticated=alice_ok or forged,
            alice_accepted=alice_ok,
            eavesdropping_detected=detected,
            restarts=restarts,
            restart_limit_exceeded=exceeded,
            eve_key_bits_known=rec.knowledge.known_key_bits(key_slots),
            eve_forged_auth=forged,
            forge_guessed_bits=guessed,
            alice_tamper_errors=a_err,
            alice_tamper_checked=a_chk,
            bob_tamper_errors=b_err,
            bob_tamper_checked=b_chk,
            key_agreement=rec.alice.key_bits == rec.bob.key_bits,
            coverage_success=coverage_success,
            disturbed_tamper_slots=rec.knowledge.disturbed_tamper_slots,
        )


def server_round(params: ProtocolParams, rng: SplitMix64, *, keys: dict[str, SecretKey] | None = None,
                 source: PhotonSourceModel = IDEAL_SOURCE, transcript: ChannelTranscript | None = None,
                 spec: TamperSpec | None = None) -> ServerRound:
    """Steps 2-4 for a fresh session initiated by Alice."""
    keys = dict(keys or DEFAULT_KEYS)
    transcript = transcript if transcript is not None else ChannelTranscript()
    server = TrustedServer(keys, source)
    idx = send(transcript, keys[ALICE], ALICE, SERVER, encode_request(ALICE, BOB, 0))
    session = server.handle_request(transcript, idx)
    return server.server_round(session, params, rng, transcript, spec)


def run_protocol(params: ProtocolParams, strategy: adv.AdversaryStrategy | None, rng: SplitMix64,
                 source: PhotonSourceModel = IDEAL_SOURCE) -> TrialOutcome:
    return Session(params, strategy, rng, source).run()
