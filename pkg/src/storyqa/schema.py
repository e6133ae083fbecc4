"""Character-centered story annotation data model.

Value types for annotated drama clips (per-frame character boxes with
behavior/emotion labels, coreference-resolved script lines) and five-way
multiple-choice QA items graded by memory capacity, logical complexity and
the derived difficulty level. Owns validation of the type invariants and
(de)serialization of the JSON dataset format.

All types are immutable values: safe to share across threads, compared by
structural equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

# Closed roster of main character names. Synthetic worlds may use a prefix
# of this roster or supply their own names.
DEFAULT_ROSTER: tuple[str, ...] = (
    "Anna", "Chairman", "Deogi", "Dokyung", "Gitae", "Haeyoung1",
    "Haeyoung2", "Heeran", "Hun", "Jeongsuk", "Jinsang", "Jiya",
    "Kyungsu", "Sangseok", "Seohee", "Soontack", "Sukyung", "Sungjin",
    "Taejin", "Yijoon",
)

# Closed behavior vocabulary, 28 entries including the null label "none".
BEHAVIORS: tuple[str, ...] = (
    "none", "drink", "hold", "point out",
    "put arms around each other's shoulder", "clean", "cook", "cut",
    "dance", "destroy", "eat", "look for", "high-five", "hug", "kiss",
    "look at/back on", "nod", "open", "call", "play instruments",
    "push away", "shake hands", "sing", "sit down", "smoke", "stand up",
    "walk", "watch",
)

# Closed emotion vocabulary, exactly 7 entries.
EMOTIONS: tuple[str, ...] = (
    "anger", "disgust", "fear", "happiness", "sadness", "surprise",
    "neutral",
)

assert len(BEHAVIORS) == 28 and len(set(BEHAVIORS)) == 28
assert len(EMOTIONS) == 7 and len(set(EMOTIONS)) == 7
assert len(set(DEFAULT_ROSTER)) == 20


class Granularity(str, Enum):
    """Clip length class: a single camera shot or a multi-shot scene."""

    SHOT = "shot"
    SCENE = "scene"


class InvalidCombination(ValueError):
    """Raised for (mc_level, lc_level) pairs outside the defined mapping."""


_DIFFICULTY_MAP = {(1, 1): 1, (1, 2): 2, (2, 3): 3, (2, 4): 4}


def assign_difficulty(mc_level: int, lc_level: int) -> int:
    """Map a (memory capacity, logical complexity) pair to a difficulty.

    Only four pairs are defined: (1,1)->1, (1,2)->2, (2,3)->3, (2,4)->4.
    Every other pair raises InvalidCombination.
    """
    try:
        return _DIFFICULTY_MAP[(mc_level, lc_level)]
    except KeyError:
        raise InvalidCombination(
            f"no difficulty defined for mc_level={mc_level}, lc_level={lc_level}"
        ) from None


@dataclass(frozen=True)
class CharacterBox:
    """One character's bounding box in a frame, with behavior and emotion."""

    character: str
    full_rect: tuple[int, int, int, int]  # x, y, w, h in pixels
    behavior: str
    emotion: str
    face_rect: Optional[tuple[int, int, int, int]] = None


@dataclass(frozen=True)
class FrameAnnotation:
    """Character boxes for a single sampled frame, plus an optional
    precomputed (or synthesized) image feature vector."""

    frame_id: int
    boxes: tuple[CharacterBox, ...]
    feature: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class ScriptLine:
    """One dialogue line: speaker, tokens, and per-token coreference tags.

    coref_tags has the same length as tokens; a non-null entry names the
    character the token (pronoun or explicit mention) refers to.
    """

    speaker: str
    tokens: tuple[str, ...]
    coref_tags: tuple[Optional[str], ...]


@dataclass(frozen=True)
class ClipBundle:
    """A shot- or scene-level video clip: ordered shots of frame
    annotations plus the (possibly empty) script."""

    clip_id: str
    granularity: Granularity
    shots: tuple[tuple[FrameAnnotation, ...], ...]
    script: tuple[ScriptLine, ...]
    duration_s: float


@dataclass(frozen=True)
class QAItem:
    """A five-way multiple-choice question about one clip."""

    qid: str
    clip_id: str
    question: tuple[str, ...]
    candidates: tuple[tuple[str, ...], ...]
    correct_idx: int
    mc_level: int
    lc_level: int
    difficulty: int


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class ValidationIssue:
    item_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.item_id}: [{self.rule}] {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def rules(self) -> set[str]:
        return {i.rule for i in self.issues}

    def __str__(self) -> str:
        if self.ok:
            return "ok: no violations"
        return "\n".join(str(i) for i in self.issues)


def _rect_ok(rect: Sequence[int]) -> bool:
    return len(rect) == 4 and rect[2] > 0 and rect[3] > 0


def _face_within_full(face: Sequence[int], full: Sequence[int]) -> bool:
    fx, fy, fw, fh = face
    x, y, w, h = full
    return fx >= x and fy >= y and fx + fw <= x + w and fy + fh <= y + h


def validate_dataset(
    episodes: Iterable[ClipBundle],
    qas: Iterable[QAItem],
    roster: Sequence[str] = DEFAULT_ROSTER,
) -> ValidationReport:
    """Check every type invariant and cross-reference; pure and idempotent.

    Violations are collected into the report (in input order) rather than
    raised, so a single pass surfaces every problem.
    """
    episodes = list(episodes)
    qas = list(qas)
    roster_set = set(roster)
    issues: list[ValidationIssue] = []

    def bad(item_id: str, rule: str, message: str) -> None:
        issues.append(ValidationIssue(item_id, rule, message))

    clip_ids: dict[str, ClipBundle] = {}
    feature_dim: Optional[int] = None
    for clip in episodes:
        cid = clip.clip_id
        if cid in clip_ids:
            bad(cid, "clip-id-unique", "duplicate clip_id")
        clip_ids[cid] = clip
        n_shots = len(clip.shots)
        if clip.granularity is Granularity.SHOT and n_shots != 1:
            bad(cid, "shot-count", f"shot clip must have exactly 1 shot, got {n_shots}")
        if clip.granularity is Granularity.SCENE and n_shots < 1:
            bad(cid, "shot-count", "scene clip must have at least 1 shot")
        if clip.duration_s < 0:
            bad(cid, "duration-nonnegative", f"duration_s={clip.duration_s}")
        for si, shot in enumerate(clip.shots):
            prev = None
            for frame in shot:
                if frame.frame_id < 0:
                    bad(cid, "frame-order", f"shot {si}: negative frame_id {frame.frame_id}")
                if prev is not None and frame.frame_id <= prev:
                    bad(cid, "frame-order",
                        f"shot {si}: frame_id {frame.frame_id} not after {prev}")
                prev = frame.frame_id
                if frame.feature is not None:
                    if feature_dim is None:
                        feature_dim = len(frame.feature)
                    elif len(frame.feature) != feature_dim:
                        bad(cid, "feature-dim-consistent",
                            f"shot {si} frame {frame.frame_id}: feature length "
                            f"{len(frame.feature)} != {feature_dim}")
                seen_chars: set[str] = set()
                for box in frame.boxes:
                    where = f"shot {si} frame {frame.frame_id}"
                    if box.character not in roster_set:
                        bad(cid, "roster-member", f"{where}: unknown character {box.character!r}")
                    if box.character in seen_chars:
                        bad(cid, "box-unique-character",
                            f"{where}: duplicate box for {box.character!r}")
                    seen_chars.add(box.character)
                    if box.behavior not in BEHAVIORS:
                        bad(cid, "behavior-vocab", f"{where}: unknown behavior {box.behavior!r}")
                    if box.emotion not in EMOTIONS:
                        bad(cid, "emotion-vocab", f"{where}: unknown emotion {box.emotion!r}")
                    if not _rect_ok(box.full_rect):
                        bad(cid, "rect-positive", f"{where}: bad full_rect {box.full_rect}")
                    if box.face_rect is not None:
                        if not _rect_ok(box.face_rect):
                            bad(cid, "rect-positive", f"{where}: bad face_rect {box.face_rect}")
                        elif _rect_ok(box.full_rect) and not _face_within_full(
                            box.face_rect, box.full_rect
                        ):
                            bad(cid, "face-in-full",
                                f"{where}: face_rect {box.face_rect} outside full_rect")
        for li, line in enumerate(clip.script):
            if not line.tokens:
                bad(cid, "tokens-nonempty", f"script line {li}: empty token list")
            if len(line.coref_tags) != len(line.tokens):
                bad(cid, "coref-length",
                    f"script line {li}: {len(line.coref_tags)} tags for "
                    f"{len(line.tokens)} tokens")
            if line.speaker not in roster_set:
                bad(cid, "roster-member", f"script line {li}: unknown speaker {line.speaker!r}")
            for tag in line.coref_tags:
                if tag is not None and tag not in roster_set:
                    bad(cid, "roster-member", f"script line {li}: unknown coref tag {tag!r}")

    seen_qids: set[str] = set()
    for qa in qas:
        qid = qa.qid
        if qid in seen_qids:
            bad(qid, "qid-unique", "duplicate qid")
        seen_qids.add(qid)
        if len(qa.candidates) != 5:
            bad(qid, "candidates=5", f"got {len(qa.candidates)} candidates")
        if not qa.question:
            bad(qid, "tokens-nonempty", "empty question")
        for ci, cand in enumerate(qa.candidates):
            if not cand:
                bad(qid, "tokens-nonempty", f"candidate {ci} is empty")
        if not (0 <= qa.correct_idx < len(qa.candidates)):
            bad(qid, "correct-idx-range",
                f"correct_idx={qa.correct_idx} with {len(qa.candidates)} candidates")
        if qa.mc_level not in (1, 2):
            bad(qid, "mc-level-domain", f"mc_level={qa.mc_level}")
        if qa.lc_level not in (1, 2, 3, 4):
            bad(qid, "lc-level-domain", f"lc_level={qa.lc_level}")
        try:
            expected = assign_difficulty(qa.mc_level, qa.lc_level)
        except InvalidCombination:
            bad(qid, "difficulty-consistency",
                f"undefined (mc, lc) pair ({qa.mc_level}, {qa.lc_level})")
        else:
            if qa.difficulty != expected:
                bad(qid, "difficulty-consistency",
                    f"difficulty={qa.difficulty}, expected {expected} for "
                    f"(mc, lc)=({qa.mc_level}, {qa.lc_level})")
        clip = clip_ids.get(qa.clip_id)
        if clip is None:
            bad(qid, "clip-exists", f"clip_id {qa.clip_id!r} not in episodes")
        elif qa.mc_level in (1, 2):
            want = Granularity.SHOT if qa.mc_level == 1 else Granularity.SCENE
            if clip.granularity is not want:
                bad(qid, "granularity-coupling",
                    f"mc_level={qa.mc_level} but clip {qa.clip_id!r} is "
                    f"{clip.granularity.value}")
    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# Serialization

# One JSON document per split: {"episodes": [...], "qas": [...]}. Question and
# candidate token lists are stored as space-joined strings; script tokens
# likewise under "text". Tokens therefore must not contain whitespace.


class ParseError(ValueError):
    """Malformed dataset file; the message names the offending field."""


def _expect(cond: bool, locus: str, message: str) -> None:
    if not cond:
        raise ParseError(f"{locus}: {message}")


def _get(obj: dict, key: str, locus: str):
    if key not in obj:
        raise ParseError(f"{locus}: missing field {key!r}")
    return obj[key]


def _parse_rect(value, locus: str) -> tuple[int, int, int, int]:
    _expect(isinstance(value, list) and len(value) == 4, locus,
            "rect must be a list of 4 integers")
    for v in value:
        _expect(isinstance(v, int), locus, f"rect entry {v!r} is not an integer")
    return tuple(value)  # type: ignore[return-value]


def _parse_box(obj, locus: str) -> CharacterBox:
    _expect(isinstance(obj, dict), locus, "box must be an object")
    behavior = _get(obj, "behavior", locus)
    _expect(behavior in BEHAVIORS, f"{locus}.behavior",
            f"unknown behavior label {behavior!r}")
    emotion = _get(obj, "emotion", locus)
    _expect(emotion in EMOTIONS, f"{locus}.emotion",
            f"unknown emotion label {emotion!r}")
    face = _get(obj, "face_rect", locus)
    return CharacterBox(
        character=_get(obj, "character", locus),
        full_rect=_parse_rect(_get(obj, "full_rect", locus), f"{locus}.full_rect"),
        behavior=behavior,
        emotion=emotion,
        face_rect=None if face is None else _parse_rect(face, f"{locus}.face_rect"),
    )


def _parse_frame(obj, locus: str) -> FrameAnnotation:
    _expect(isinstance(obj, dict), locus, "frame must be an object")
    frame_id = _get(obj, "frame_id", locus)
    _expect(isinstance(frame_id, int), f"{locus}.frame_id", "frame_id must be an integer")
    boxes = _get(obj, "boxes", locus)
    _expect(isinstance(boxes, list), f"{locus}.boxes", "boxes must be a list")
    feature = _get(obj, "feature", locus)
    if feature is not None:
        _expect(isinstance(feature, list), f"{locus}.feature",
                "feature must be null or a list of numbers")
        for v in feature:
            _expect(isinstance(v, (int, float)), f"{locus}.feature",
                    f"feature entry {v!r} is not a number")
    return FrameAnnotation(
        frame_id=frame_id,
        boxes=tuple(_parse_box(b, f"{locus}.boxes[{i}]") for i, b in enumerate(boxes)),
        feature=None if feature is None else tuple(float(v) for v in feature),
    )


def _split_tokens(text, locus: str) -> tuple[str, ...]:
    _expect(isinstance(text, str), locus, "expected a string of space-separated tokens")
    return tuple(text.split())


def _parse_script_line(obj, locus: str) -> ScriptLine:
    _expect(isinstance(obj, dict), locus, "script line must be an object")
    tokens = _split_tokens(_get(obj, "text", locus), f"{locus}.text")
    coref = _get(obj, "coref", locus)
    _expect(isinstance(coref, list), f"{locus}.coref", "coref must be a list")
    _expect(len(coref) == len(tokens), f"{locus}.coref",
            f"{len(coref)} coref tags for {len(tokens)} tokens")
    return ScriptLine(
        speaker=_get(obj, "speaker", locus),
        tokens=tokens,
        coref_tags=tuple(coref),
    )


def _parse_clip(obj, locus: str) -> ClipBundle:
    _expect(isinstance(obj, dict), locus, "clip must be an object")
    gran = _get(obj, "granularity", locus)
    _expect(gran in (Granularity.SHOT.value, Granularity.SCENE.value),
            f"{locus}.granularity", f"unknown granularity {gran!r}")
    shots = _get(obj, "shots", locus)
    _expect(isinstance(shots, list), f"{locus}.shots", "shots must be a list")
    script = _get(obj, "script", locus)
    _expect(isinstance(script, list), f"{locus}.script", "script must be a list")
    duration = _get(obj, "duration_s", locus)
    _expect(isinstance(duration, (int, float)), f"{locus}.duration_s",
            "duration_s must be a number")
    parsed_shots = []
    for si, shot in enumerate(shots):
        _expect(isinstance(shot, list), f"{locus}.shots[{si}]", "shot must be a list")
        parsed_shots.append(tuple(
            _parse_frame(f, f"{locus}.shots[{si}][{fi}]") for fi, f in enumerate(shot)
        ))
    return ClipBundle(
        clip_id=_get(obj, "clip_id", locus),
        granularity=Granularity(gran),
        shots=tuple(parsed_shots),
        script=tuple(_parse_script_line(l, f"{locus}.script[{i}]") for i, l in enumerate(script)),
        duration_s=float(duration),
    )


def _parse_qa(obj, locus: str) -> QAItem:
    _expect(isinstance(obj, dict), locus, "qa must be an object")
    cands = _get(obj, "candidates", locus)
    _expect(isinstance(cands, list), f"{locus}.candidates", "candidates must be a list")
    for key in ("correct_idx", "mc_level", "lc_level", "difficulty"):
        _expect(isinstance(_get(obj, key, locus), int), f"{locus}.{key}",
                f"{key} must be an integer")
    return QAItem(
        qid=_get(obj, "qid", locus),
        clip_id=_get(obj, "clip_id", locus),
        question=_split_tokens(_get(obj, "question", locus), f"{locus}.question"),
        candidates=tuple(
            _split_tokens(c, f"{locus}.candidates[{i}]") for i, c in enumerate(cands)
        ),
        correct_idx=obj["correct_idx"],
        mc_level=obj["mc_level"],
        lc_level=obj["lc_level"],
        difficulty=obj["difficulty"],
    )


def load_dataset(path) -> tuple[list[ClipBundle], list[QAItem]]:
    """Load one split file; raises ParseError with a field locus on bad input."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    _expect(isinstance(doc, dict), str(path), "top level must be an object")
    episodes_raw = _get(doc, "episodes", str(path))
    qas_raw = _get(doc, "qas", str(path))
    _expect(isinstance(episodes_raw, list), "episodes", "must be a list")
    _expect(isinstance(qas_raw, list), "qas", "must be a list")
    episodes = [_parse_clip(c, f"episodes[{i}]") for i, c in enumerate(episodes_raw)]
    qas = [_parse_qa(q, f"qas[{i}]") for i, q in enumerate(qas_raw)]
    return episodes, qas


def clip_to_json(clip: ClipBundle) -> dict:
    return {
        "clip_id": clip.clip_id,
        "granularity": clip.granularity.value,
        "duration_s": clip.duration_s,
        "shots": [
            [
                {
                    "frame_id": f.frame_id,
                    "boxes": [
                        {
                            "character": b.character,
                            "full_rect": list(b.full_rect),
                            "face_rect": None if b.face_rect is None else list(b.face_rect),
                            "behavior": b.behavior,
                            "emotion": b.emotion,
                        }
                        for b in f.boxes
                    ],
                    "feature": None if f.feature is None else list(f.feature),
                }
                for f in shot
            ]
            for shot in clip.shots
        ],
        "script": [
            {
                "speaker": l.speaker,
                "text": " ".join(l.tokens),
                "coref": list(l.coref_tags),
            }
            for l in clip.script
        ],
    }


def qa_to_json(qa: QAItem) -> dict:
    return {
        "qid": qa.qid,
        "clip_id": qa.clip_id,
        "question": " ".join(qa.question),
        "candidates": [" ".join(c) for c in qa.candidates],
        "correct_idx": qa.correct_idx,
        "mc_level": qa.mc_level,
        "lc_level": qa.lc_level,
        "difficulty": qa.difficulty,
    }


def save_dataset(episodes: Sequence[ClipBundle], qas: Sequence[QAItem], path) -> None:
    """Write one split file; save then load reproduces an equal value."""
    doc = {
        "episodes": [clip_to_json(c) for c in episodes],
        "qas": [qa_to_json(q) for q in qas],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)
        fh.write("\n")
