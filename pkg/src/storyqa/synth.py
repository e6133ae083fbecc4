"""Synthetic drama-world generator.

Builds seeded "worlds" of annotated scenes (shots, frames, character boxes,
coreference-tagged dialogue) together with the supporting-fact and
causal-link records that make every generated question mechanically
solvable. Five-way QA items are produced from a fixed template grammar at
four difficulty levels:

  1  single fact on a shot clip           (Who / Where / What)
  2  two facts on a shot clip             (Who / Where / What)
  3  temporally ordered facts on a scene  (How / What)
  4  cause of an effect on a scene        (Why)

Scenes are generated from independent per-scene child seeds (splittable
seed sequences), so episode generation could run in parallel while output
stays ordered by scene index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .schema import (
    BEHAVIORS,
    DEFAULT_ROSTER,
    EMOTIONS,
    ClipBundle,
    CharacterBox,
    FrameAnnotation,
    Granularity,
    QAItem,
    ScriptLine,
)


class InsufficientWorld(ValueError):
    """The world lacks the fact structure required for a difficulty level."""


class Unsolvable(ValueError):
    """The oracle could not resolve a QA item against the fact records."""


class DegenerateSplit(ValueError):
    """A requested split would receive zero episodes."""


# ---------------------------------------------------------------------------
# Lexicons


@dataclass(frozen=True)
class Verb:
    label: str                 # behavior-vocabulary label
    base: tuple[str, ...]      # "hold"
    third: tuple[str, ...]     # "holds"
    past: tuple[str, ...]      # "held"


def _v(label: str, base: str, third: str, past: str) -> Verb:
    return Verb(label, tuple(base.split()), tuple(third.split()), tuple(past.split()))


TRANSITIVE_VERBS: tuple[Verb, ...] = (
    _v("hold", "hold", "holds", "held"),
    _v("drink", "drink", "drinks", "drank"),
    _v("eat", "eat", "eats", "ate"),
    _v("cook", "cook", "cooks", "cooked"),
    _v("cut", "cut", "cuts", "cut"),
    _v("clean", "clean", "cleans", "cleaned"),
    _v("open", "open", "opens", "opened"),
    _v("destroy", "destroy", "destroys", "destroyed"),
    _v("look for", "look for", "looks for", "looked for"),
)

CHAR_CHAR_VERBS: tuple[Verb, ...] = (
    _v("hug", "hug", "hugs", "hugged"),
    _v("kiss", "kiss", "kisses", "kissed"),
    _v("push away", "push away", "pushes away", "pushed away"),
    _v("call", "call", "calls", "called"),
    _v("watch", "watch", "watches", "watched"),
    _v("high-five", "high-five", "high-fives", "high-fived"),
)

INTRANSITIVE_VERBS: tuple[Verb, ...] = (
    _v("dance", "dance", "dances", "danced"),
    _v("sing", "sing", "sings", "sang"),
    _v("walk", "walk", "walks", "walked"),
    _v("smoke", "smoke", "smokes", "smoked"),
    _v("nod", "nod", "nods", "nodded"),
    _v("sit down", "sit down", "sits down", "sat down"),
    _v("stand up", "stand up", "stands up", "stood up"),
)

for _verb in TRANSITIVE_VERBS + CHAR_CHAR_VERBS + INTRANSITIVE_VERBS:
    assert _verb.label in BEHAVIORS, _verb.label

OBJECTS_BY_VERB: dict[str, tuple[str, ...]] = {
    "hold": ("cup", "book", "phone", "bag", "letter", "umbrella", "camera",
             "wallet", "ticket", "newspaper", "pillow", "towel"),
    "drink": ("coffee", "tea", "juice", "milk", "water", "soda", "wine"),
    "eat": ("cake", "soup", "bread", "apple", "noodles", "pizza", "salad", "rice"),
    "cook": ("cake", "soup", "bread", "noodles", "pizza", "rice", "stew"),
    "cut": ("bread", "cake", "paper", "ribbon", "melon", "rope"),
    "clean": ("table", "window", "floor", "dish", "mirror", "sofa", "shelf"),
    "open": ("door", "window", "box", "letter", "drawer", "bottle", "suitcase"),
    "destroy": ("phone", "letter", "box", "vase", "chair", "radio"),
    "look for": ("phone", "bag", "letter", "key", "wallet", "ring", "glasses"),
}

ALL_OBJECTS: tuple[str, ...] = tuple(sorted({o for pool in OBJECTS_BY_VERB.values() for o in pool}))

LOCATIONS: tuple[str, ...] = (
    "kitchen", "office", "cafe", "street", "restaurant", "park", "bedroom",
    "living room", "hallway", "garden", "balcony", "rooftop", "store",
    "library",
)

# Relation labels that are not behaviors.
REL_IN = "in"          # (character, in, location)
REL_FEEL = "feel"      # (character, feel, emotion)


@dataclass(frozen=True)
class CausalRule:
    cause_verb: str            # char-char verb, or "cook" for the food rule
    effect_relation: str       # REL_FEEL or "eat"
    effect_value: Optional[str]  # emotion for REL_FEEL, None -> reuse object


CAUSAL_RULES: tuple[CausalRule, ...] = (
    CausalRule("push away", REL_FEEL, "anger"),
    CausalRule("hug", REL_FEEL, "happiness"),
    CausalRule("kiss", REL_FEEL, "surprise"),
    CausalRule("cook", "eat", None),
)

_VERB_BY_LABEL: dict[str, Verb] = {
    v.label: v for v in TRANSITIVE_VERBS + CHAR_CHAR_VERBS + INTRANSITIVE_VERBS
}


# ---------------------------------------------------------------------------
# World record types


@dataclass(frozen=True)
class SupportingFact:
    """A subject-relation-object triplet witnessed by annotations."""

    subject: str
    relation: str
    object: str               # object / location / emotion / character / ""
    scene_index: int
    shot_index: int
    frame_span: tuple[int, int]  # [start, end) frame positions in the shot

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.subject, self.relation, self.object)


@dataclass(frozen=True)
class CausalLink:
    cause: SupportingFact
    effect: SupportingFact
    lag_shots: int


@dataclass(frozen=True)
class WorldSpec:
    seed: int
    roster_size: int = 8
    n_scenes: int = 8
    shots_per_scene: tuple[int, int] = (3, 8)
    frames_per_shot: tuple[int, int] = (2, 10)
    qa_mix: tuple[float, float, float, float] = (9313.0, 4530.0, 2074.0, 2066.0)
    roster: Optional[tuple[str, ...]] = None
    feature_dim: int = 64
    feature_noise: float = 0.1

    def __post_init__(self) -> None:
        if self.roster_size < 4:
            raise ValueError("roster_size must be >= 4")
        if self.roster is None and self.roster_size > len(DEFAULT_ROSTER):
            raise ValueError(f"roster_size must be <= {len(DEFAULT_ROSTER)}")
        if self.roster is not None and len(set(self.roster)) != len(self.roster):
            raise ValueError("custom roster names must be unique")
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        for lo, hi in (self.shots_per_scene, self.frames_per_shot):
            if not (1 <= lo <= hi):
                raise ValueError("ranges must satisfy 1 <= lo <= hi")
        if not all(w >= 0 for w in self.qa_mix) or sum(self.qa_mix) <= 0:
            raise ValueError("qa_mix must be non-negative with positive sum")

    @property
    def active_roster(self) -> tuple[str, ...]:
        if self.roster is not None:
            return self.roster[: self.roster_size]
        return DEFAULT_ROSTER[: self.roster_size]


@dataclass
class World:
    spec: WorldSpec
    episodes: list[ClipBundle]
    facts: list[SupportingFact]
    causes: list[CausalLink]

    def __iter__(self):
        return iter((self.episodes, self.facts, self.causes))

    @property
    def roster(self) -> tuple[str, ...]:
        return self.spec.active_roster


def scene_clip_id(scene_index: int) -> str:
    return f"ep{scene_index:03d}"


def shot_clip_id(scene_index: int, shot_index: int) -> str:
    return f"ep{scene_index:03d}_s{shot_index:02d}"


def parse_clip_id(clip_id: str) -> tuple[int, Optional[int]]:
    """Return (scene_index, shot_index or None) for generator clip ids."""
    try:
        if "_s" in clip_id:
            scene_part, shot_part = clip_id.split("_s")
            return int(scene_part[2:]), int(shot_part)
        return int(clip_id[2:]), None
    except (ValueError, IndexError):
        raise Unsolvable(f"clip_id {clip_id!r} is not a generated id") from None


def facts_for_clip(clip_id: str, facts: Sequence[SupportingFact]) -> list[SupportingFact]:
    scene, shot = parse_clip_id(clip_id)
    if shot is None:
        return [f for f in facts if f.scene_index == scene]
    return [f for f in facts if f.scene_index == scene and f.shot_index == shot]


# ---------------------------------------------------------------------------
# World generation

_FEATURE_TAG = 0x51C3


def _base_feature(seed: int, dim: int, char_i: int, beh_i: int, emo_i: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _FEATURE_TAG, char_i, beh_i, emo_i])
    )
    return rng.normal(0.0, 1.0, size=dim)


@dataclass
class _Event:
    kind: str                  # "trans" | "cc" | "intr" | "feel" | "loc"
    subject: str
    verb: Optional[Verb] = None
    object: str = ""
    scripted: bool = True
    first_person: bool = False


def _speak(event: _Event, location: str, present: Sequence[str], rng) -> ScriptLine:
    """Render an event as a dialogue line with coreference tags.

    Lines narrate in past tense so witnessed facts share surface forms with
    answer sentences; pronoun lines keep the coreference annotations in play.
    """
    subj = event.subject
    first = ["I"] if event.first_person else [subj]
    if event.kind == "loc":
        tokens = first + ["was", "in", "the"] + location.split() + ["."]
    elif event.kind == "feel":
        tokens = first + ["felt", event.object, "."]
    elif event.kind == "trans":
        tokens = first + list(event.verb.past) + ["the", event.object, "."]
    elif event.kind == "cc":
        tokens = first + list(event.verb.past) + [event.object, "."]
    else:
        tokens = first + list(event.verb.past) + ["."]
    coref: list[Optional[str]] = [None] * len(tokens)
    coref[0] = subj
    if event.kind == "cc":
        coref[tokens.index(event.object)] = event.object
    if event.first_person:
        return ScriptLine(speaker=subj, tokens=tuple(tokens), coref_tags=tuple(coref))
    others = [c for c in present if c != subj]
    speaker = others[rng.integers(len(others))] if others else subj
    return ScriptLine(speaker=speaker, tokens=tuple(tokens), coref_tags=tuple(coref))


@dataclass
class _CausalPlan:
    rule: CausalRule
    agent: str
    target: str
    cause_shot: int
    effect_shot: int
    object: str = ""   # for the cook rule


def _gen_scene(scene_index: int, spec: WorldSpec, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    roster = list(spec.active_roster)
    location = LOCATIONS[rng.integers(len(LOCATIONS))]
    cast_size = int(rng.integers(2, min(4, len(roster)) + 1))
    cast = [roster[i] for i in rng.choice(len(roster), size=cast_size, replace=False)]
    lo, hi = spec.shots_per_scene
    n_shots = int(rng.integers(lo, hi + 1))

    scripted = [bool(rng.random() < 0.85) for _ in range(n_shots)]
    if not any(scripted):
        scripted[0] = True

    plans: list[_CausalPlan] = []
    if n_shots >= 2 and len(cast) >= 2:
        n_plans = 1 + int(rng.random() < 0.4 and n_shots >= 4)
        for _ in range(n_plans):
            rule = CAUSAL_RULES[rng.integers(len(CAUSAL_RULES))]
            pair = rng.choice(len(cast), size=2, replace=False)
            agent, target = cast[pair[0]], cast[pair[1]]
            ci = int(rng.integers(0, n_shots - 1))
            ei = int(rng.integers(ci + 1, n_shots))
            obj = ""
            if rule.cause_verb == "cook":
                pool = OBJECTS_BY_VERB["cook"]
                obj = pool[rng.integers(len(pool))]
                scripted[ci] = True
                scripted[ei] = True
            effect_key = (target, rule.effect_relation,
                          rule.effect_value if rule.effect_value else obj)
            cause_key = (agent, rule.cause_verb, target if rule.effect_relation == REL_FEEL else obj)
            taken = {(p.target, p.rule.effect_relation,
                      p.rule.effect_value if p.rule.effect_value else p.object) for p in plans}
            taken_causes = {(p.agent, p.rule.cause_verb,
                             p.target if p.rule.effect_relation == REL_FEEL else p.object)
                            for p in plans}
            if effect_key in taken or cause_key in taken_causes:
                continue
            plans.append(_CausalPlan(rule, agent, target, ci, ei, obj))

    facts: list[SupportingFact] = []
    causes: list[CausalLink] = []
    shot_records: list[tuple[FrameAnnotation, ...]] = []
    shot_scripts: list[list[ScriptLine]] = []
    frame_id = 0

    for j in range(n_shots):
        f_lo, f_hi = spec.frames_per_shot
        n_frames = int(rng.integers(f_lo, f_hi + 1))
        required = set()
        for p in plans:
            if p.cause_shot == j:
                required.update((p.agent, p.target) if p.rule.effect_relation == REL_FEEL
                                else (p.agent,))
            if p.effect_shot == j:
                required.add(p.target)
        n_present = int(rng.integers(1, min(3, len(cast)) + 1))
        present = list(required)
        extra = [c for c in cast if c not in required]
        rng.shuffle(extra)
        for c in extra:
            if len(present) >= max(n_present, len(required)):
                break
            present.append(c)
        if not present:
            present = [extra[0]] if extra else [cast[0]]
        present.sort(key=roster.index)

        events: list[_Event] = []
        behavior_of: dict[str, str] = {}
        emotion_of: dict[str, str] = {}

        def add_action(ev: _Event) -> None:
            events.append(ev)
            behavior_of[ev.subject] = ev.verb.label

        for p in plans:
            if p.cause_shot == j:
                if p.rule.cause_verb == "cook":
                    verb = _VERB_BY_LABEL["cook"]
                    ev = _Event("trans", p.agent, verb, p.object, scripted=True,
                                first_person=bool(rng.random() < 0.4))
                else:
                    verb = _VERB_BY_LABEL[p.rule.cause_verb]
                    ev = _Event("cc", p.agent, verb, p.target,
                                scripted=scripted[j] and bool(rng.random() < 0.9),
                                first_person=bool(rng.random() < 0.4))
                add_action(ev)
            if p.effect_shot == j:
                if p.rule.effect_relation == REL_FEEL:
                    events.append(_Event("feel", p.target, None, p.rule.effect_value,
                                         scripted=scripted[j] and bool(rng.random() < 0.7),
                                         first_person=bool(rng.random() < 0.5)))
                    emotion_of[p.target] = p.rule.effect_value
                else:
                    verb = _VERB_BY_LABEL["eat"]
                    add_action(_Event("trans", p.target, verb, p.object, scripted=True,
                                      first_person=bool(rng.random() < 0.4)))

        free = [c for c in present if c not in behavior_of]
        if free:
            focus = free[rng.integers(len(free))]
            kinds = ["intr"]
            if scripted[j]:
                kinds.append("trans")
                kinds.append("trans")
            if len(present) >= 2:
                kinds.append("cc")
            kind = kinds[rng.integers(len(kinds))]
            if kind == "trans":
                verb = TRANSITIVE_VERBS[rng.integers(len(TRANSITIVE_VERBS))]
                pool = OBJECTS_BY_VERB[verb.label]
                add_action(_Event("trans", focus, verb, pool[rng.integers(len(pool))],
                                  scripted=True, first_person=bool(rng.random() < 0.4)))
            elif kind == "cc":
                verb = CHAR_CHAR_VERBS[rng.integers(len(CHAR_CHAR_VERBS))]
                others = [c for c in present if c != focus]
                target = others[rng.integers(len(others))]
                add_action(_Event("cc", focus, verb, target,
                                  scripted=scripted[j] and bool(rng.random() < 0.95),
                                  first_person=bool(rng.random() < 0.4)))
            else:
                verb = INTRANSITIVE_VERBS[rng.integers(len(INTRANSITIVE_VERBS))]
                add_action(_Event("intr", focus, verb, "",
                                  scripted=scripted[j] and bool(rng.random() < 0.9),
                                  first_person=bool(rng.random() < 0.4)))

        mood_free = [c for c in present if c not in emotion_of]
        if mood_free and rng.random() < 0.6:
            who = mood_free[rng.integers(len(mood_free))]
            pool = [e for e in EMOTIONS if e != "neutral"]
            emo = pool[rng.integers(len(pool))]
            emotion_of[who] = emo
            events.append(_Event("feel", who, None, emo,
                                 scripted=scripted[j] and bool(rng.random() < 0.85),
                                 first_person=bool(rng.random() < 0.5)))

        if scripted[j]:
            who = present[rng.integers(len(present))]
            events.append(_Event("loc", who, None, location, scripted=True,
                                 first_person=bool(rng.random() < 0.6)))

        span = (0, n_frames)
        lines: list[ScriptLine] = []
        for ev in events:
            if ev.kind == "loc":
                rel, obj = REL_IN, location
            elif ev.kind == "feel":
                rel, obj = REL_FEEL, ev.object
            else:
                rel, obj = ev.verb.label, ev.object
            facts.append(SupportingFact(ev.subject, rel, obj, scene_index, j, span))
            if ev.scripted and scripted[j]:
                lines.append(_speak(ev, location, present, rng))
                if ev.kind != "loc" and rng.random() < 0.35:
                    echo = replace(ev, first_person=not ev.first_person)
                    lines.append(_speak(echo, location, present, rng))

        frames: list[FrameAnnotation] = []
        for _ in range(n_frames):
            boxes = []
            base_vecs = []
            for c in present:
                beh = behavior_of.get(c, "none")
                emo = emotion_of.get(c, "neutral")
                x, y = int(rng.integers(0, 1600)), int(rng.integers(0, 800))
                w, h = int(rng.integers(60, 300)), int(rng.integers(120, 460))
                fw, fh = max(8, w // 3), max(8, h // 5)
                face = (x + (w - fw) // 2, y + h // 10, fw, fh)
                boxes.append(CharacterBox(c, (x, y, w, h), beh, emo, face))
                base_vecs.append(_base_feature(
                    spec.seed, spec.feature_dim,
                    roster.index(c), BEHAVIORS.index(beh), EMOTIONS.index(emo)))
            base = np.mean(base_vecs, axis=0) if base_vecs else np.zeros(spec.feature_dim)
            noise = rng.normal(0.0, spec.feature_noise, size=spec.feature_dim)
            frames.append(FrameAnnotation(
                frame_id=frame_id,
                boxes=tuple(boxes),
                feature=tuple(float(v) for v in base + noise),
            ))
            frame_id += 1
        shot_records.append(tuple(frames))
        shot_scripts.append(lines)

    fact_by_triple_shot = {(f.triple, f.shot_index): f for f in facts}
    for p in plans:
        if p.rule.effect_relation == REL_FEEL:
            cause_triple = (p.agent, p.rule.cause_verb, p.target)
            effect_triple = (p.target, REL_FEEL, p.rule.effect_value)
        else:
            cause_triple = (p.agent, "cook", p.object)
            effect_triple = (p.target, "eat", p.object)
        cause = fact_by_triple_shot[(cause_triple, p.cause_shot)]
        effect = fact_by_triple_shot[(effect_triple, p.effect_shot)]
        causes.append(CausalLink(cause, effect, p.effect_shot - p.cause_shot))

    shot_clips = []
    for j, frames in enumerate(shot_records):
        shot_clips.append(ClipBundle(
            clip_id=shot_clip_id(scene_index, j),
            granularity=Granularity.SHOT,
            shots=(frames,),
            script=tuple(shot_scripts[j]),
            duration_s=round(len(frames) / 3.0, 3),
        ))
    scene_clip = ClipBundle(
        clip_id=scene_clip_id(scene_index),
        granularity=Granularity.SCENE,
        shots=tuple(shot_records),
        script=tuple(l for lines in shot_scripts for l in lines),
        duration_s=round(sum(len(fr) for fr in shot_records) / 3.0, 3),
    )
    return scene_clip, shot_clips, facts, causes


def generate_world(spec: WorldSpec) -> World:
    """Deterministic function of the spec; same spec, same world."""
    root = np.random.SeedSequence(spec.seed & 0xFFFFFFFFFFFFFFFF)
    scene_seeds = root.spawn(spec.n_scenes)
    episodes: list[ClipBundle] = []
    facts: list[SupportingFact] = []
    causes: list[CausalLink] = []
    for i in range(spec.n_scenes):
        scene_clip, shot_clips, sfacts, scauses = _gen_scene(i, spec, scene_seeds[i])
        episodes.append(scene_clip)
        episodes.extend(shot_clips)
        facts.extend(sfacts)
        causes.extend(scauses)
    return World(spec=spec, episodes=episodes, facts=facts, causes=causes)


# ---------------------------------------------------------------------------
# Template grammar: shared by QA generation and the solving oracle


@dataclass(frozen=True)
class Slot:
    name: str
    cls: str


def _lexicons(roster: Sequence[str]) -> dict[str, list[tuple[tuple[str, ...], str]]]:
    def verb_entries(verbs: Iterable[Verb], form: str):
        return [(getattr(v, form), v.label) for v in verbs]

    lex = {
        "CHAR": [((name,), name) for name in roster],
        "T_BASE": verb_entries(TRANSITIVE_VERBS, "base"),
        "T_PAST": verb_entries(TRANSITIVE_VERBS, "past"),
        "CC_PAST": verb_entries(CHAR_CHAR_VERBS, "past"),
        "I_PAST": verb_entries(INTRANSITIVE_VERBS, "past"),
        "CC_BASE": verb_entries(CHAR_CHAR_VERBS, "base"),
        "I_BASE": verb_entries(INTRANSITIVE_VERBS, "base"),
        "OBJ": [((o,), o) for o in ALL_OBJECTS],
        "LOC": [(tuple(l.split()), l) for l in LOCATIONS],
        "EMO": [((e,), e) for e in EMOTIONS],
    }
    for entries in lex.values():
        entries.sort(key=lambda kv: (-len(kv[0]), kv[0]))
    return lex


def _match(tokens: Sequence[str], pattern: Sequence, lex, pos=0, bound=None):
    """Backtracking pattern match; returns slot bindings or None."""
    if bound is None:
        bound = {}
    if not pattern:
        return dict(bound) if pos == len(tokens) else None
    head, rest = pattern[0], pattern[1:]
    if isinstance(head, str):
        if pos < len(tokens) and tokens[pos] == head:
            return _match(tokens, rest, lex, pos + 1, bound)
        return None
    for entry, value in lex[head.cls]:
        n = len(entry)
        if tuple(tokens[pos:pos + n]) != entry:
            continue
        already = head.name in bound
        if already and bound[head.name] != value:
            continue
        if not already:
            bound[head.name] = value
        result = _match(tokens, rest, lex, pos + n, bound)
        if result is not None:
            return result
        if not already:
            del bound[head.name]
    return None


def _surface(pattern: Sequence, slots: dict[str, str]) -> tuple[str, ...]:
    """Instantiate a pattern into tokens using slot values."""
    out: list[str] = []
    for item in pattern:
        if isinstance(item, str):
            out.append(item)
            continue
        value = slots[item.name]
        if item.cls in ("T_PAST", "CC_PAST", "I_PAST"):
            out.extend(_VERB_BY_LABEL[value].past)
        elif item.cls in ("T_BASE", "CC_BASE", "I_BASE"):
            out.extend(_VERB_BY_LABEL[value].base)
        elif item.cls == "LOC":
            out.extend(value.split())
        else:
            out.append(value)
    return tuple(out)


@dataclass(frozen=True)
class Template:
    tid: str
    difficulty: int
    kind: str                       # semantic checker key
    question: tuple
    answers: tuple                  # one or more answer patterns
    # answer triples as (subject_slot, relation, object_slot) descriptors;
    # relation is either a literal label or ("slot", name)
    a_triples: tuple

    def answer_triples(self, slots: dict[str, str]) -> list[tuple[str, str, str]]:
        out = []
        for subj, rel, obj in self.a_triples:
            relation = slots[rel[1]] if isinstance(rel, tuple) else rel
            # intransitive answer variants leave the object slot unbound
            out.append((slots[subj], relation, slots.get(obj, "") if obj else ""))
        return out


def _S(name, cls):
    return Slot(name, cls)


TEMPLATES: tuple[Template, ...] = (
    # Difficulty 1: a single supporting fact on a shot clip
    Template("d1-who-act", 1, "witnessed",
             ("Who", _S("v", "T_PAST"), "the", _S("o", "OBJ"), "?"),
             ((_S("c", "CHAR"), _S("v", "T_PAST"), "the", _S("o", "OBJ"), "."),),
             (("c", ("slot", "v"), "o"),)),
    Template("d1-what-act", 1, "witnessed",
             ("What", "did", _S("c", "CHAR"), _S("v", "T_BASE"), "?"),
             ((_S("c", "CHAR"), _S("v", "T_PAST"), "the", _S("o", "OBJ"), "."),),
             (("c", ("slot", "v"), "o"),)),
    Template("d1-who-cc", 1, "witnessed",
             ("Who", _S("v", "CC_PAST"), _S("t", "CHAR"), "?"),
             ((_S("c", "CHAR"), _S("v", "CC_PAST"), _S("t", "CHAR"), "."),),
             (("c", ("slot", "v"), "t"),)),
    Template("d1-who-intr", 1, "witnessed",
             ("Who", _S("v", "I_PAST"), "?"),
             ((_S("c", "CHAR"), _S("v", "I_PAST"), "."),),
             (("c", ("slot", "v"), ""),)),
    Template("d1-where", 1, "witnessed",
             ("Where", "was", _S("c", "CHAR"), "?"),
             ((_S("c", "CHAR"), "was", "in", "the", _S("l", "LOC"), "."),),
             (("c", REL_IN, "l"),)),
    Template("d1-feel", 1, "witnessed",
             ("What", "did", _S("c", "CHAR"), "feel", "?"),
             ((_S("c", "CHAR"), "felt", _S("e", "EMO"), "."),),
             (("c", REL_FEEL, "e"),)),
    # Difficulty 2: two supporting facts on a shot clip
    Template("d2-where-act", 2, "witnessed",
             ("Where", "did", _S("c", "CHAR"), _S("v", "T_BASE"), "the", _S("o", "OBJ"), "?"),
             ((_S("c", "CHAR"), _S("v", "T_PAST"), "the", _S("o", "OBJ"),
               "in", "the", _S("l", "LOC"), "."),),
             (("c", ("slot", "v"), "o"), ("c", REL_IN, "l"))),
    Template("d2-who-act", 2, "witnessed",
             ("Who", _S("v", "T_PAST"), "the", _S("o", "OBJ"), "in", "the", _S("l", "LOC"), "?"),
             ((_S("c", "CHAR"), _S("v", "T_PAST"), "the", _S("o", "OBJ"),
               "in", "the", _S("l", "LOC"), "."),),
             (("c", ("slot", "v"), "o"), ("c", REL_IN, "l"))),
    Template("d2-where-cc", 2, "witnessed",
             ("Where", "did", _S("c", "CHAR"), _S("v", "CC_BASE"), _S("t", "CHAR"), "?"),
             ((_S("c", "CHAR"), _S("v", "CC_PAST"), _S("t", "CHAR"),
               "in", "the", _S("l", "LOC"), "."),),
             (("c", ("slot", "v"), "t"), ("c", REL_IN, "l"))),
    Template("d2-what-loc", 2, "witnessed",
             ("What", "did", _S("c", "CHAR"), "do", "in", "the", _S("l", "LOC"), "?"),
             ((_S("c", "CHAR"), _S("v", "T_PAST"), "the", _S("o", "OBJ"),
               "in", "the", _S("l", "LOC"), "."),),
             (("c", ("slot", "v"), "o"), ("c", REL_IN, "l"))),
    # Difficulty 3: temporally ordered facts on a scene clip
    Template("d3-after-tt", 3, "after",
             ("What", "did", _S("c", "CHAR"), "do", "after", _S("c", "CHAR"),
              _S("v1", "T_PAST"), "the", _S("o1", "OBJ"), "?"),
             ((_S("c", "CHAR"), _S("v2", "T_PAST"), "the", _S("o2", "OBJ"), "."),
              (_S("c", "CHAR"), _S("v2", "I_PAST"), ".")),
             (("c", ("slot", "v2"), "o2"),)),
    Template("d3-after-it", 3, "after",
             ("What", "did", _S("c", "CHAR"), "do", "after", _S("c", "CHAR"),
              _S("v1", "I_PAST"), "?"),
             ((_S("c", "CHAR"), _S("v2", "T_PAST"), "the", _S("o2", "OBJ"), "."),
              (_S("c", "CHAR"), _S("v2", "I_PAST"), ".")),
             (("c", ("slot", "v2"), "o2"),)),
    Template("d3-change", 3, "ordered-pair",
             ("How", "did", "the", "behavior", "of", _S("c", "CHAR"), "change", "?"),
             ((_S("c", "CHAR"), "first", _S("v1", "T_PAST"), "the", _S("o1", "OBJ"),
               "and", "then", _S("v2", "T_PAST"), "the", _S("o2", "OBJ"), "."),
              (_S("c", "CHAR"), "first", _S("v1", "T_PAST"), "the", _S("o1", "OBJ"),
               "and", "then", _S("v2", "I_PAST"), "."),
              (_S("c", "CHAR"), "first", _S("v1", "I_PAST"),
               "and", "then", _S("v2", "T_PAST"), "the", _S("o2", "OBJ"), "."),
              (_S("c", "CHAR"), "first", _S("v1", "I_PAST"),
               "and", "then", _S("v2", "I_PAST"), ".")),
             (("c", ("slot", "v1"), "o1"), ("c", ("slot", "v2"), "o2"))),
    Template("d3-feeling", 3, "ordered-pair",
             ("How", "did", "the", "feeling", "of", _S("c", "CHAR"), "change", "?"),
             ((_S("c", "CHAR"), "felt", _S("e1", "EMO"), "and", "then",
               "felt", _S("e2", "EMO"), "."),),
             (("c", REL_FEEL, "e1"), ("c", REL_FEEL, "e2"))),
    # Difficulty 4: cause of an effect on a scene clip
    Template("d4-feel", 4, "cause-feel",
             ("Why", "did", _S("t", "CHAR"), "feel", _S("e", "EMO"), "?"),
             (("Because", _S("c", "CHAR"), _S("v", "CC_PAST"), _S("t", "CHAR"), "."),),
             (("c", ("slot", "v"), "t"),)),
    Template("d4-eat", 4, "cause-act",
             ("Why", "did", _S("t", "CHAR"), "eat", "the", _S("o", "OBJ"), "?"),
             (("Because", _S("c", "CHAR"), "cooked", "the", _S("o", "OBJ"), "."),),
             (("c", "cook", "o"),)),
)

_TEMPLATE_BY_ID = {t.tid: t for t in TEMPLATES}


def _question_triples(template: Template, slots: dict[str, str]):
    """Triples asserted by the question itself (reference/effect facts)."""
    if template.kind == "after":
        v1 = slots["v1"]
        return [(slots["c"], v1, slots.get("o1", ""))]
    if template.kind == "cause-feel":
        return [(slots["t"], REL_FEEL, slots["e"])]
    if template.kind == "cause-act":
        return [(slots["t"], "eat", slots["o"])]
    return []


def sentence_entailed(tokens: Sequence[str], clip_facts: Sequence[SupportingFact],
                      roster: Sequence[str]) -> bool:
    """True when some answer-pattern parse of the sentence is fully witnessed.

    Conservative: ignores temporal order, so any candidate whose asserted
    triples all appear among the clip's facts counts as entailed.
    """
    lex = _lexicons(roster)
    witnessed = {f.triple for f in clip_facts}
    for template in TEMPLATES:
        for pattern in template.answers:
            slots = _match(tokens, pattern, lex)
            if slots is None:
                continue
            triples = template.answer_triples(slots)
            if all(t in witnessed for t in triples):
                return True
    return False


# ---------------------------------------------------------------------------
# QA generation


def _fact_occurrences(clip_facts, triple):
    return [f for f in clip_facts if f.triple == triple]


def _candidate_valid(template, q_slots, a_slots, clip_facts, causes) -> bool:
    """Semantic validity of a parsed candidate against the fact records."""
    merged = dict(q_slots)
    merged.update(a_slots)
    triples = template.answer_triples(merged)
    if template.kind == "witnessed":
        return all(_fact_occurrences(clip_facts, t) for t in triples)
    if template.kind == "after":
        refs = _fact_occurrences(clip_facts, _question_triples(template, q_slots)[0])
        answers = _fact_occurrences(clip_facts, triples[0])
        return any(a.shot_index > r.shot_index for r in refs for a in answers)
    if template.kind == "ordered-pair":
        first = _fact_occurrences(clip_facts, triples[0])
        second = _fact_occurrences(clip_facts, triples[1])
        return any(b.shot_index > a.shot_index for a in first for b in second)
    if template.kind in ("cause-feel", "cause-act"):
        effect_triple = _question_triples(template, q_slots)[0]
        cause_triple = triples[0]
        return any(
            link.cause.triple == cause_triple and link.effect.triple == effect_triple
            for link in causes
        )
    raise AssertionError(template.kind)


def solve_by_oracle(qa: QAItem, clip: ClipBundle, facts: Sequence[SupportingFact],
                    causes: Sequence[CausalLink], roster: Sequence[str] = DEFAULT_ROSTER) -> int:
    """Rule-based resolution from the fact/causal records; test harness only.

    Parses the question against the template grammar, checks every candidate
    for semantic validity, and returns the index of the unique valid one.
    """
    clip_facts = facts_for_clip(clip.clip_id, facts)
    lex = _lexicons(roster)
    parses = []
    for template in TEMPLATES:
        slots = _match(qa.question, template.question, lex)
        if slots is not None:
            parses.append((template, slots))
    if not parses:
        raise Unsolvable(f"{qa.qid}: question does not match any template")
    valid: list[int] = []
    for idx, candidate in enumerate(qa.candidates):
        for template, q_slots in parses:
            hit = False
            for pattern in template.answers:
                a_slots = _match(candidate, pattern, lex)
                if a_slots is None:
                    continue
                consistent = all(q_slots.get(k, v) == v for k, v in a_slots.items())
                if consistent and _candidate_valid(template, q_slots, a_slots,
                                                   clip_facts, causes):
                    hit = True
                    break
            if hit:
                valid.append(idx)
                break
    if len(valid) != 1:
        raise Unsolvable(f"{qa.qid}: {len(valid)} candidates validate against the facts")
    return valid[0]


def _swap_values(slots: dict[str, str], updates: dict[str, str]) -> dict[str, str]:
    out = dict(slots)
    out.update(updates)
    return out


_VERB_CLASS_POOL = {
    "T_PAST": TRANSITIVE_VERBS, "T_BASE": TRANSITIVE_VERBS,
    "CC_PAST": CHAR_CHAR_VERBS, "CC_BASE": CHAR_CHAR_VERBS,
    "I_PAST": INTRANSITIVE_VERBS, "I_BASE": INTRANSITIVE_VERBS,
}


def _slot_alternatives(cls: str, current: str, roster: Sequence[str],
                       used_chars: set[str]) -> list[str]:
    if cls == "CHAR":
        return [c for c in roster if c not in used_chars]
    if cls in _VERB_CLASS_POOL:
        return [v.label for v in _VERB_CLASS_POOL[cls] if v.label != current]
    if cls == "OBJ":
        return [o for o in ALL_OBJECTS if o != current]
    if cls == "LOC":
        return [l for l in LOCATIONS if l != current]
    if cls == "EMO":
        return [e for e in EMOTIONS if e != current and e != "neutral"]
    raise AssertionError(cls)


def _answer_slots_of(pattern) -> list[Slot]:
    return [item for item in pattern if isinstance(item, Slot)]


def _make_distractors(template: Template, pattern, slots: dict[str, str],
                      clip_facts, roster: Sequence[str], rng,
                      correct: tuple[str, ...]) -> Optional[list[tuple[str, ...]]]:
    """2 character swaps, 1 relation swap, 1 object/location/emotion swap.

    Falls back to whatever swap kinds the template offers when a slot class
    is missing. Every distractor's asserted triples must not all be
    witnessed by the clip, and all five sentences must be distinct.
    """
    witnessed = {f.triple for f in clip_facts}
    slot_list = _answer_slots_of(pattern)
    char_slots = [s for s in slot_list if s.cls == "CHAR"]
    verb_slots = [s for s in slot_list if s.cls in _VERB_CLASS_POOL]
    value_slots = [s for s in slot_list if s.cls in ("OBJ", "LOC", "EMO")]

    subject = char_slots[0] if char_slots else None
    second_char = char_slots[1] if len(char_slots) > 1 else None
    verb = verb_slots[-1] if verb_slots else None
    other_verb = verb_slots[0] if len(verb_slots) > 1 else None
    value = value_slots[-1] if value_slots else None
    other_value = value_slots[0] if len(value_slots) > 1 else None

    preferences = (
        (subject, verb, value),
        (subject, verb, value),
        (verb, other_value, value, second_char, subject),
        (value, second_char, other_verb, verb, subject),
    )
    plan: list[Slot] = []
    for prefs in preferences:
        slot = next((s for s in prefs if s is not None), None)
        if slot is None:
            return None
        plan.append(slot)

    used_chars = {slots[s.name] for s in slot_list if s.cls == "CHAR"}
    sentences: list[tuple[str, ...]] = []
    seen = {correct}
    for slot in plan:
        alternatives = _slot_alternatives(slot.cls, slots[slot.name], roster, used_chars)
        order = rng.permutation(len(alternatives))
        built = None
        for k in order:
            candidate_slots = _swap_values(slots, {slot.name: alternatives[k]})
            triples = template.answer_triples(candidate_slots)
            if all(t in witnessed for t in triples):
                continue
            sentence = _surface(pattern, candidate_slots)
            if sentence in seen:
                continue
            built = sentence
            break
        if built is None:
            return None
        sentences.append(built)
        seen.add(built)
    return sentences


@dataclass
class _Sites:
    """Per-difficulty places where a QA can be anchored."""

    d1: list[tuple[str, SupportingFact]]
    d2: list[tuple[str, SupportingFact, SupportingFact]]   # action + location
    d3_pairs: list[tuple[str, SupportingFact, SupportingFact]]
    d3_feelings: list[tuple[str, SupportingFact, SupportingFact]]
    d4: list[tuple[str, CausalLink]]


def _index_sites(world: World) -> _Sites:
    by_scene_shot: dict[tuple[int, int], list[SupportingFact]] = {}
    by_scene: dict[int, list[SupportingFact]] = {}
    for f in world.facts:
        by_scene_shot.setdefault((f.scene_index, f.shot_index), []).append(f)
        by_scene.setdefault(f.scene_index, []).append(f)

    d1, d2 = [], []
    for (scene, shot), shot_facts in sorted(by_scene_shot.items()):
        cid = shot_clip_id(scene, shot)
        locs = [f for f in shot_facts if f.relation == REL_IN]
        for f in shot_facts:
            d1.append((cid, f))
            if f.relation in (REL_IN, REL_FEEL) or _verb_class_of(f.relation) == "intr":
                continue
            for lf in locs:
                if lf.subject == f.subject:
                    d2.append((cid, f, lf))

    d3_pairs, d3_feelings, d4 = [], [], []
    for scene, scene_facts in sorted(by_scene.items()):
        cid = scene_clip_id(scene)
        actions = [f for f in scene_facts if f.relation not in (REL_IN, REL_FEEL)]
        feelings = [f for f in scene_facts if f.relation == REL_FEEL]
        for a in actions:
            for b in actions:
                if a.subject == b.subject and b.shot_index > a.shot_index:
                    d3_pairs.append((cid, a, b))
        for a in feelings:
            for b in feelings:
                if (a.subject == b.subject and b.shot_index > a.shot_index
                        and a.object != b.object):
                    d3_feelings.append((cid, a, b))
    for link in world.causes:
        d4.append((scene_clip_id(link.cause.scene_index), link))
    return _Sites(d1, d2, d3_pairs, d3_feelings, d4)


def _verb_class_of(label: str) -> str:
    if any(v.label == label for v in TRANSITIVE_VERBS):
        return "trans"
    if any(v.label == label for v in CHAR_CHAR_VERBS):
        return "cc"
    return "intr"


def _realize_qa(world: World, difficulty: int, sites: _Sites, rng):
    """Pick a site and instantiate one template; may return None on collision."""
    roster = world.roster
    if difficulty == 1:
        if not sites.d1:
            raise InsufficientWorld("no shot-level facts for difficulty 1")
        cid, fact = sites.d1[rng.integers(len(sites.d1))]
        if fact.relation == REL_IN:
            template, slots = _TEMPLATE_BY_ID["d1-where"], {"c": fact.subject, "l": fact.object}
        elif fact.relation == REL_FEEL:
            template, slots = _TEMPLATE_BY_ID["d1-feel"], {"c": fact.subject, "e": fact.object}
        else:
            cls = _verb_class_of(fact.relation)
            if cls == "trans":
                tid = "d1-who-act" if rng.random() < 0.5 else "d1-what-act"
                template = _TEMPLATE_BY_ID[tid]
                slots = {"c": fact.subject, "v": fact.relation, "o": fact.object}
            elif cls == "cc":
                template = _TEMPLATE_BY_ID["d1-who-cc"]
                slots = {"c": fact.subject, "v": fact.relation, "t": fact.object}
            else:
                template = _TEMPLATE_BY_ID["d1-who-intr"]
                slots = {"c": fact.subject, "v": fact.relation}
        return cid, template, 0, slots

    if difficulty == 2:
        if not sites.d2:
            raise InsufficientWorld("no shot-level fact pairs for difficulty 2")
        cid, action, loc = sites.d2[rng.integers(len(sites.d2))]
        cls = _verb_class_of(action.relation)
        if cls == "cc":
            template = _TEMPLATE_BY_ID["d2-where-cc"]
            slots = {"c": action.subject, "v": action.relation,
                     "t": action.object, "l": loc.object}
        else:
            tid = ("d2-where-act", "d2-who-act", "d2-what-loc")[rng.integers(3)]
            template = _TEMPLATE_BY_ID[tid]
            slots = {"c": action.subject, "v": action.relation,
                     "o": action.object, "l": loc.object}
        return cid, template, 0, slots

    if difficulty == 3:
        pools = []
        if sites.d3_pairs:
            pools.append("acts")
        if sites.d3_feelings:
            pools.append("feelings")
        if not pools:
            raise InsufficientWorld("no temporally ordered fact pairs for difficulty 3")
        pool = pools[rng.integers(len(pools))]
        if pool == "feelings":
            cid, a, b = sites.d3_feelings[rng.integers(len(sites.d3_feelings))]
            template = _TEMPLATE_BY_ID["d3-feeling"]
            return cid, template, 0, {"c": a.subject, "e1": a.object, "e2": b.object}
        cid, a, b = sites.d3_pairs[rng.integers(len(sites.d3_pairs))]
        a_cls, b_cls = _verb_class_of(a.relation), _verb_class_of(b.relation)
        if rng.random() < 0.5 and a_cls != "cc" and b_cls != "cc":
            # "What did X do after ..." needs non char-char reference/answer
            tid = "d3-after-tt" if a_cls == "trans" else "d3-after-it"
            template = _TEMPLATE_BY_ID[tid]
            a_index = 0 if b_cls == "trans" else 1
            slots = {"c": a.subject, "v1": a.relation, "v2": b.relation}
            if a_cls == "trans":
                slots["o1"] = a.object
            if b_cls == "trans":
                slots["o2"] = b.object
            return cid, template, a_index, slots
        if a_cls == "cc" or b_cls == "cc":
            return None
        template = _TEMPLATE_BY_ID["d3-change"]
        a_index = {("trans", "trans"): 0, ("trans", "intr"): 1,
                   ("intr", "trans"): 2, ("intr", "intr"): 3}[(a_cls, b_cls)]
        slots = {"c": a.subject, "v1": a.relation, "v2": b.relation}
        if a_cls == "trans":
            slots["o1"] = a.object
        if b_cls == "trans":
            slots["o2"] = b.object
        return cid, template, a_index, slots

    if difficulty == 4:
        if not sites.d4:
            raise InsufficientWorld("no causal links for difficulty 4")
        cid, link = sites.d4[rng.integers(len(sites.d4))]
        if link.effect.relation == REL_FEEL:
            template = _TEMPLATE_BY_ID["d4-feel"]
            slots = {"t": link.effect.subject, "e": link.effect.object,
                     "c": link.cause.subject, "v": link.cause.relation}
        else:
            template = _TEMPLATE_BY_ID["d4-eat"]
            slots = {"t": link.effect.subject, "o": link.effect.object,
                     "c": link.cause.subject}
        return cid, template, 0, slots

    raise ValueError(f"difficulty must be 1..4, got {difficulty}")


_MC_LC = {1: (1, 1), 2: (1, 2), 3: (2, 3), 4: (2, 4)}


def generate_qa(world: World, difficulty: int, rng, qid: str = "q0",
                sites: Optional[_Sites] = None,
                clips: Optional[dict[str, ClipBundle]] = None) -> QAItem:
    """Generate one QA item; raises InsufficientWorld when the needed fact
    structure does not exist."""
    if sites is None:
        sites = _index_sites(world)
    if clips is None:
        clips = {c.clip_id: c for c in world.episodes}
    roster = world.roster
    for _ in range(200):
        picked = _realize_qa(world, difficulty, sites, rng)
        if picked is None:
            continue
        cid, template, a_index, slots = picked
        clip_facts = facts_for_clip(cid, world.facts)
        pattern = template.answers[a_index]
        question = _surface(template.question, slots)
        correct = _surface(pattern, slots)
        distractors = _make_distractors(template, pattern, slots, clip_facts,
                                        roster, rng, correct)
        if distractors is None:
            continue
        correct_idx = int(rng.integers(5))
        candidates = list(distractors)
        candidates.insert(correct_idx, correct)
        mc, lc = _MC_LC[difficulty]
        qa = QAItem(
            qid=qid, clip_id=cid, question=question,
            candidates=tuple(candidates), correct_idx=correct_idx,
            mc_level=mc, lc_level=lc, difficulty=difficulty,
        )
        try:
            solved = solve_by_oracle(qa, clips[cid], world.facts, world.causes, roster)
        except Unsolvable:
            continue
        if solved == correct_idx:
            return qa
    raise InsufficientWorld(
        f"could not build a difficulty-{difficulty} item after 200 attempts"
    )


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of `total` across `weights`."""
    s = float(sum(weights))
    shares = [total * w / s for w in weights]
    counts = [int(x) for x in shares]
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(shares[i] - counts[i]), i)
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def build_qa_set(world: World, n_qas: int, rng) -> list[QAItem]:
    """Generate a QA set sized by the world's difficulty mix."""
    counts = apportion(n_qas, world.spec.qa_mix)
    sites = _index_sites(world)
    clips = {c.clip_id: c for c in world.episodes}
    out: list[QAItem] = []
    serial = 0
    for difficulty, count in zip((1, 2, 3, 4), counts):
        for _ in range(count):
            out.append(generate_qa(world, difficulty, rng, qid=f"q{serial:05d}",
                                   sites=sites, clips=clips))
            serial += 1
    return out


# ---------------------------------------------------------------------------
# Splitting


def episode_key(clip_id: str) -> str:
    """Clips of one scene (the scene and its shots) share an episode key."""
    return clip_id.split("_")[0]


def split_dataset(episodes: Sequence[ClipBundle], qas: Sequence[QAItem],
                  ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                  seed: int = 0):
    """Partition whole episodes (scene groups) into train/val/test.

    No clip is shared across splits and every QA travels with its clip.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    keys: list[str] = []
    for clip in episodes:
        k = episode_key(clip.clip_id)
        if k not in keys:
            keys.append(k)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    shuffled = [keys[i] for i in order]
    counts = apportion(len(keys), ratios)
    if any(c == 0 for c in counts):
        raise DegenerateSplit(
            f"{len(keys)} episode groups cannot fill splits with ratios {ratios}"
        )
    assignment: dict[str, int] = {}
    start = 0
    for split_i, count in enumerate(counts):
        for k in shuffled[start:start + count]:
            assignment[k] = split_i
        start += count
    split_eps: list[list[ClipBundle]] = [[], [], []]
    split_qas: list[list[QAItem]] = [[], [], []]
    for clip in episodes:
        split_eps[assignment[episode_key(clip.clip_id)]].append(clip)
    clip_split = {c.clip_id: assignment[episode_key(c.clip_id)] for c in episodes}
    for qa in qas:
        if qa.clip_id not in clip_split:
            raise ValueError(f"qa {qa.qid} references unknown clip {qa.clip_id}")
        split_qas[clip_split[qa.clip_id]].append(qa)
    return tuple(
        (split_eps[i], split_qas[i]) for i in range(3)
    )


# ---------------------------------------------------------------------------
# Fact side-file for the oracle


def fact_to_json(f: SupportingFact) -> dict:
    return {
        "subject": f.subject, "relation": f.relation, "object": f.object,
        "scene_index": f.scene_index, "shot_index": f.shot_index,
        "frame_span": list(f.frame_span),
    }


def fact_from_json(obj: dict) -> SupportingFact:
    return SupportingFact(
        subject=obj["subject"], relation=obj["relation"], object=obj["object"],
        scene_index=obj["scene_index"], shot_index=obj["shot_index"],
        frame_span=tuple(obj["frame_span"]),
    )


def save_facts(facts: Sequence[SupportingFact], causes: Sequence[CausalLink], path) -> None:
    index = {f: i for i, f in enumerate(facts)}
    doc = {
        "facts": [fact_to_json(f) for f in facts],
        "causes": [
            {"cause": index[c.cause], "effect": index[c.effect], "lag_shots": c.lag_shots}
            for c in causes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def lexicon_tokens() -> list[list[str]]:
    """Every surface token of the closed generation lexicon, grouped as
    extra corpus sentences for vocabulary building. Guarantees held-out
    splits never hit unknown tokens for template or label words."""
    rows: list[list[str]] = []
    for v in TRANSITIVE_VERBS + CHAR_CHAR_VERBS + INTRANSITIVE_VERBS:
        rows.extend([list(v.base), list(v.third), list(v.past)])
    rows.append(list(ALL_OBJECTS))
    rows.extend(loc.split() for loc in LOCATIONS)
    rows.append(list(EMOTIONS))
    for label in BEHAVIORS:
        rows.append([p for chunk in label.split() for p in chunk.split("/")])
    literals = set()
    for template in TEMPLATES:
        for pattern in (template.question, *template.answers):
            literals.update(item for item in pattern if isinstance(item, str))
    literals.update(["I", "You", "am", "is", "feel", "feels", "felt", "was"])
    rows.append(sorted(literals))
    return rows


def load_facts(path) -> tuple[list[SupportingFact], list[CausalLink]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    facts = [fact_from_json(o) for o in doc["facts"]]
    causes = [
        CausalLink(facts[o["cause"]], facts[o["effect"]], o["lag_shots"])
        for o in doc["causes"]
    ]
    return facts, causes
