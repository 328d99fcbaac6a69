"""Full-duplex turn-taking state machine.

States: ``listening``, ``awaiting_transcript``, ``awaiting_verdict``,
``responding``. Transition table (anything else is a protocol violation):

=====================  =====================  ====================  ==================================
state                  event                  next                  actions
=====================  =====================  ====================  ==================================
listening              speech_start           listening             -
listening              speech_end(s)          awaiting_transcript   transcribe(s)
listening              transcript/verdict     listening             - (only for a cancelled segment)
awaiting_transcript    transcript("")         listening             -
awaiting_transcript    transcript(text)       awaiting_verdict      detect_turn(s)
awaiting_verdict       verdict(unfinished)    listening             -
awaiting_verdict       verdict(finished)      responding            start_generation(s)
awaiting_verdict       speech_start           listening             cancel_verdict(s)
responding             response_chunk         responding            emit
responding             response_done          listening             commit_turn
responding             speech_start           listening             abort_generation, commit_partial
=====================  =====================  ====================  ==================================

Timing is ordinal: no timers, no wall clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

LISTENING = "listening"
AWAITING_TRANSCRIPT = "awaiting_transcript"
AWAITING_VERDICT = "awaiting_verdict"
RESPONDING = "responding"
STATES = (LISTENING, AWAITING_TRANSCRIPT, AWAITING_VERDICT, RESPONDING)

SPEECH_START = "speech_start"
SPEECH_END = "speech_end"
TRANSCRIPT = "transcript"
VERDICT = "verdict"
RESPONSE_CHUNK = "response_chunk"
RESPONSE_DONE = "response_done"
EVENT_KINDS = (SPEECH_START, SPEECH_END, TRANSCRIPT, VERDICT, RESPONSE_CHUNK, RESPONSE_DONE)

FINISHED = "finished"
UNFINISHED = "unfinished"


class ProtocolViolation(RuntimeError):
    def __init__(self, state: str, event: "Event", reason: str = ""):
        self.state = state
        self.event = event
        msg = f"event {event.kind!r} (segment {event.segment}) is illegal in state {state!r}"
        super().__init__(msg + (f": {reason}" if reason else ""))


@dataclass(frozen=True)
class Event:
    kind: str
    segment: int | None = None
    payload: object = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_record(self) -> dict:
        rec: dict = {"kind": self.kind, "segment": self.segment}
        if self.payload is not None:
            rec["payload"] = self.payload
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "Event":
        payload = rec.get("payload")
        if isinstance(payload, list):
            payload = tuple(payload)
        return cls(rec["kind"], rec.get("segment"), payload)


@dataclass(frozen=True)
class Action:
    kind: str
    segment: int | None = None
    payload: object = None

    def to_record(self) -> dict:
        rec: dict = {"kind": self.kind, "segment": self.segment}
        if self.payload is not None:
            rec["payload"] = list(self.payload) if isinstance(self.payload, tuple) else self.payload
        return rec


@dataclass(frozen=True)
class CommittedTurn:
    role: str
    text: str
    segment: int | None
    truncated: bool = False


@dataclass(frozen=True)
class DuplexState:
    mode: str = LISTENING
    segment: int | None = None          # segment currently being processed
    last_segment: int = 0               # highest segment id seen on speech_end
    cancelled: frozenset = frozenset()  # segments whose pending results must be dropped
    transcript: str = ""
    partial: tuple[str, ...] = ()       # response chunks emitted so far
    history: tuple[CommittedTurn, ...] = ()


def step(state: DuplexState, event: Event) -> tuple[DuplexState, list[Action]]:
    mode, kind = state.mode, event.kind
    if mode == LISTENING:
        if kind == SPEECH_START:
            return state, []
        if kind == SPEECH_END:
            seg = event.segment
            if seg is None or seg <= state.last_segment:
                raise ProtocolViolation(mode, event, f"segment ids must strictly increase (last {state.last_segment})")
            return replace(state, mode=AWAITING_TRANSCRIPT, segment=seg, last_segment=seg), [Action("transcribe", seg)]
        if kind in (TRANSCRIPT, VERDICT) and event.segment in state.cancelled:
            return state, []
    elif mode == AWAITING_TRANSCRIPT:
        if kind == TRANSCRIPT and event.segment == state.segment:
            text = (event.payload or "").strip()
            if not text:
                return replace(state, mode=LISTENING, segment=None), []
            return replace(state, mode=AWAITING_VERDICT, transcript=text), [Action("detect_turn", state.segment)]
    elif mode == AWAITING_VERDICT:
        if kind == VERDICT and event.segment == state.segment:
            if event.payload == FINISHED:
                user = CommittedTurn("user", state.transcript, state.segment)
                return (
                    replace(state, mode=RESPONDING, partial=(), history=state.history + (user,)),
                    [Action("start_generation", state.segment, state.transcript)],
                )
            if event.payload == UNFINISHED:
                return replace(state, mode=LISTENING, segment=None, transcript=""), []
            raise ProtocolViolation(mode, event, f"verdict must be {FINISHED!r} or {UNFINISHED!r}")
        if kind == SPEECH_START:
            seg = state.segment
            return (
                replace(state, mode=LISTENING, segment=None, transcript="", cancelled=state.cancelled | {seg}),
                [Action("cancel_verdict", seg)],
            )
    elif mode == RESPONDING:
        seg = state.segment
        if kind == RESPONSE_CHUNK:
            chunk = tuple(event.payload or ())
            return replace(state, partial=state.partial + chunk), [Action("emit", seg, chunk)]
        if kind == RESPONSE_DONE:
            turn = CommittedTurn("assistant", "".join(state.partial), seg)
            done = replace(state, mode=LISTENING, segment=None, transcript="", partial=(), history=state.history + (turn,))
            return done, [Action("commit_turn", seg, turn.text)]
        if kind == SPEECH_START:
            turn = CommittedTurn("assistant", "".join(state.partial), seg, truncated=True)
            aborted = replace(state, mode=LISTENING, segment=None, transcript="", partial=(), history=state.history + (turn,))
            return aborted, [Action("abort_generation", seg), Action("commit_partial", seg, turn.text)]
    raise ProtocolViolation(mode, event)


# --------------------------------------------------------------------------
# detector stubs


@dataclass
class ActivityDetector:
    """Passes speech events through, except trace ordinals listed as noise."""

    suppress: frozenset = frozenset()

    def __call__(self, ordinal: int, event: Event) -> Event | None:
        return None if ordinal in self.suppress else event


@dataclass
class Transcriber:
    table: Mapping[int, str] = field(default_factory=dict)
    default: str = ""

    def __call__(self, segment: int) -> str:
        return self.table.get(segment, self.default)


@dataclass
class TurnDetector:
    table: Mapping[str, str] = field(default_factory=dict)
    default: str = FINISHED

    def __call__(self, text: str) -> str:
        return self.table.get(text, self.default)


@dataclass
class Responder:
    table: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __call__(self, text: str) -> list[str]:
        if text in self.table:
            return list(self.table[text])
        return [w + " " for w in ("you", "said:", *text.split())]


@dataclass
class DetectorSuite:
    activity: ActivityDetector = field(default_factory=ActivityDetector)
    transcriber: Transcriber = field(default_factory=Transcriber)
    turn_detector: TurnDetector = field(default_factory=TurnDetector)
    responder: Responder = field(default_factory=Responder)

    @classmethod
    def from_record(cls, rec: Mapping) -> "DetectorSuite":
        return cls(
            ActivityDetector(frozenset(rec.get("suppress", ()))),
            Transcriber({int(k): v for k, v in rec.get("transcripts", {}).items()}, rec.get("default_transcript", "")),
            TurnDetector(dict(rec.get("verdicts", {})), rec.get("default_verdict", FINISHED)),
            Responder({k: list(v) for k, v in rec.get("responses", {}).items()}),
        )


def run(trace: Iterable[Event], suite: DetectorSuite | None = None, state: DuplexState | None = None) -> tuple[list[Action], DuplexState]:
    """Fold :func:`step` over a trace, answering detector actions from ``suite``.

    Without a suite the trace is fully scripted and folded as-is. With one,
    transcription and turn detection answer immediately, and a started
    response streams one chunk between consecutive trace events and drains at
    the end of the trace, so speech in the trace can barge in mid-response.
    """
    state = state or DuplexState()
    log: list[Action] = []
    if suite is None:
        for event in trace:
            state, actions = step(state, event)
            log.extend(actions)
        return log, state
    pending_chunks: list[list[str]] = []  # at most one open stream

    def feed(event: Event) -> None:
        nonlocal state
        queue = [event]
        while queue:
            ev = queue.pop(0)
            state, actions = step(state, ev)
            log.extend(actions)
            for action in actions:
                if action.kind == "transcribe":
                    queue.append(Event(TRANSCRIPT, action.segment, suite.transcriber(action.segment)))
                elif action.kind == "detect_turn":
                    queue.append(Event(VERDICT, action.segment, suite.turn_detector(state.transcript)))
                elif action.kind == "start_generation":
                    pending_chunks[:] = [suite.responder(action.payload)]
                elif action.kind in ("abort_generation", "commit_turn"):
                    pending_chunks.clear()

    def deliver_one() -> None:
        if state.mode != RESPONDING or not pending_chunks:
            return
        chunks = pending_chunks[0]
        if chunks:
            feed(Event(RESPONSE_CHUNK, state.segment, (chunks.pop(0),)))
        else:
            feed(Event(RESPONSE_DONE, state.segment))

    for ordinal, event in enumerate(trace):
        if ordinal:
            deliver_one()
        if event.kind in (SPEECH_START, SPEECH_END):
            event = suite.activity(ordinal, event)
            if event is None:
                continue
        feed(event)
    while state.mode == RESPONDING and pending_chunks:
        deliver_one()
    return log, state


def read_events(lines: Iterable[str]) -> list[Event]:
    return [Event.from_record(json.loads(line)) for line in lines if line.strip()]


def format_log(actions: Sequence[Action]) -> str:
    return "".join(json.dumps(a.to_record(), sort_keys=True) + "\n" for a in actions)
