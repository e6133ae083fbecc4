import numpy as np
import pytest

from storyqa.schema import Granularity, validate_dataset
from storyqa.synth import (
    CausalLink,
    DegenerateSplit,
    InsufficientWorld,
    SupportingFact,
    Unsolvable,
    WorldSpec,
    apportion,
    build_qa_set,
    facts_for_clip,
    generate_qa,
    generate_world,
    sentence_entailed,
    solve_by_oracle,
    split_dataset,
)
from storyqa.synth import _TEMPLATE_BY_ID, _surface, REL_IN, REL_FEEL


@pytest.fixture(scope="module")
def world():
    return generate_world(WorldSpec(seed=42, roster_size=6, n_scenes=5, feature_dim=8))


@pytest.fixture(scope="module")
def qa_set(world):
    rng = np.random.default_rng(7)
    return build_qa_set(world, 120, rng)


def test_deterministic(world):
    again = generate_world(WorldSpec(seed=42, roster_size=6, n_scenes=5, feature_dim=8))
    assert again.episodes == world.episodes
    assert again.facts == world.facts
    assert again.causes == world.causes


def test_roster_limit():
    w = generate_world(WorldSpec(seed=3, roster_size=4, n_scenes=2, feature_dim=4))
    allowed = set(w.roster)
    assert len(allowed) == 4
    for clip in w.episodes:
        for shot in clip.shots:
            for frame in shot:
                for box in frame.boxes:
                    assert box.character in allowed


def test_valid_against_schema(world, qa_set):
    report = validate_dataset(world.episodes, qa_set, world.roster)
    assert report.ok, str(report)


def test_causal_links_ordered(world):
    assert world.causes
    for link in world.causes:
        assert link.effect.shot_index > link.cause.shot_index
        assert link.lag_shots == link.effect.shot_index - link.cause.shot_index


def _witnessed(fact, clip):
    """A fact is witnessed by a frame box or a script line of its clip."""
    shot = clip.shots[fact.shot_index] if clip.granularity is Granularity.SCENE \
        else clip.shots[0]
    for frame in shot:
        for box in frame.boxes:
            if box.character != fact.subject:
                continue
            if fact.relation == REL_FEEL and box.emotion == fact.object:
                return True
            if box.behavior == fact.relation:
                return True
    for line in clip.script:
        refers = fact.subject in line.coref_tags or fact.subject in line.tokens
        if not refers:
            continue
        text = " ".join(line.tokens)
        if fact.relation == REL_IN and fact.object in text:
            return True
        if fact.relation == REL_FEEL and fact.object in text:
            return True
        if fact.object and fact.object in text:
            return True
        if not fact.object:
            return True
    return False


def test_every_fact_witnessed(world):
    scenes = {c.clip_id: c for c in world.episodes if c.granularity is Granularity.SCENE}
    for fact in world.facts:
        clip = scenes[f"ep{fact.scene_index:03d}"]
        assert _witnessed(fact, clip), fact


def test_scripts_have_resolved_pronouns(world):
    pronoun_tags = []
    for clip in world.episodes:
        for line in clip.script:
            for token, tag in zip(line.tokens, line.coref_tags):
                if token == "I":
                    pronoun_tags.append(tag)
    assert pronoun_tags
    assert all(tag in world.roster for tag in pronoun_tags)


def test_scene_concatenates_shots(world):
    scenes = [c for c in world.episodes if c.granularity is Granularity.SCENE]
    shots = {c.clip_id: c for c in world.episodes if c.granularity is Granularity.SHOT}
    for scene in scenes:
        parts = [shots[f"{scene.clip_id}_s{j:02d}"] for j in range(len(scene.shots))]
        assert tuple(p.shots[0] for p in parts) == scene.shots
        joined_script = tuple(l for p in parts for l in p.script)
        assert joined_script == scene.script


class TestGenerateQA:
    def test_question_words(self, qa_set):
        words = {1: {"Who", "Where", "What"}, 2: {"Who", "Where", "What"},
                 3: {"How", "What"}, 4: {"Why"}}
        for qa in qa_set:
            assert qa.question[0] in words[qa.difficulty], qa

    def test_difficulty_granularity_coupling(self, world, qa_set):
        clips = {c.clip_id: c for c in world.episodes}
        for qa in qa_set:
            gran = clips[qa.clip_id].granularity
            if qa.difficulty in (1, 2):
                assert gran is Granularity.SHOT
            else:
                assert gran is Granularity.SCENE

    def test_no_pronouns_in_sentences(self, qa_set):
        banned = {"he", "she", "they", "He", "She", "They", "I", "You", "you"}
        for qa in qa_set:
            assert not banned & set(qa.question)
            for cand in qa.candidates:
                assert not banned & set(cand)

    def test_exactly_one_correct_and_distinct(self, qa_set):
        for qa in qa_set:
            assert len(qa.candidates) == 5
            assert len(set(qa.candidates)) == 5
            assert 0 <= qa.correct_idx < 5

    def test_single_fact_template_shapes(self):
        template = _TEMPLATE_BY_ID["d1-who-act"]
        slots = {"c": "Haeyoung1", "v": "hold", "o": "cup"}
        assert _surface(template.question, slots) == ("Who", "held", "the", "cup", "?")
        assert _surface(template.answers[0], slots) == (
            "Haeyoung1", "held", "the", "cup", ".")

    def test_two_fact_item_mentions_location(self, world, qa_set):
        d2 = [qa for qa in qa_set if qa.difficulty == 2]
        assert d2
        for qa in d2:
            if qa.question[0] != "Where":
                continue
            correct = qa.candidates[qa.correct_idx]
            clip_facts = facts_for_clip(qa.clip_id, world.facts)
            locations = {f.object for f in clip_facts if f.relation == REL_IN}
            assert any(loc in " ".join(correct) for loc in locations)

    def test_insufficient_world(self):
        spec = WorldSpec(seed=5, roster_size=4, n_scenes=1,
                         shots_per_scene=(1, 1), frames_per_shot=(2, 2), feature_dim=4)
        w = generate_world(spec)
        assert not w.causes
        rng = np.random.default_rng(0)
        with pytest.raises(InsufficientWorld):
            generate_qa(w, 4, rng)

    def test_distractors_not_entailed(self, world, qa_set):
        for qa in qa_set:
            clip_facts = facts_for_clip(qa.clip_id, world.facts)
            for i, cand in enumerate(qa.candidates):
                if i == qa.correct_idx:
                    continue
                assert not sentence_entailed(cand, clip_facts, world.roster), (qa.qid, cand)


class TestOracle:
    def test_all_generated_items_solvable(self, world, qa_set):
        clips = {c.clip_id: c for c in world.episodes}
        for qa in qa_set:
            idx = solve_by_oracle(qa, clips[qa.clip_id], world.facts,
                                  world.causes, world.roster)
            assert idx == qa.correct_idx

    def test_corrupted_item_flagged(self, world, qa_set):
        import dataclasses
        clips = {c.clip_id: c for c in world.episodes}
        qa = qa_set[0]
        other = (qa.correct_idx + 1) % 5
        cands = list(qa.candidates)
        cands[qa.correct_idx], cands[other] = cands[other], cands[qa.correct_idx]
        corrupted = dataclasses.replace(qa, candidates=tuple(cands))
        try:
            idx = solve_by_oracle(corrupted, clips[qa.clip_id], world.facts,
                                  world.causes, world.roster)
        except Unsolvable:
            idx = None
        assert idx != corrupted.correct_idx

    def test_unparseable_question(self, world):
        import dataclasses
        clips = {c.clip_id: c for c in world.episodes}
        rng = np.random.default_rng(3)
        qa = generate_qa(world, 1, rng)
        broken = dataclasses.replace(qa, question=("Gibberish", "words", "?"))
        with pytest.raises(Unsolvable):
            solve_by_oracle(broken, clips[qa.clip_id], world.facts,
                            world.causes, world.roster)


class TestSplit:
    def test_counts_6_2_2(self):
        w = generate_world(WorldSpec(seed=9, roster_size=5, n_scenes=10, feature_dim=4))
        splits = split_dataset(w.episodes, [], seed=1)
        keys = [
            {c.clip_id.split("_")[0] for c in eps} for eps, _ in splits
        ]
        assert [len(k) for k in keys] == [6, 2, 2]

    def test_disjoint_and_complete(self, world, qa_set):
        splits = split_dataset(world.episodes, qa_set, seed=0)
        ids = [frozenset(c.clip_id for c in eps) for eps, _ in splits]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
        assert set().union(*ids) == {c.clip_id for c in world.episodes}
        for eps, qas in splits:
            clip_ids = {c.clip_id for c in eps}
            for qa in qas:
                assert qa.clip_id in clip_ids
        assert sum(len(q) for _, q in splits) == len(qa_set)

    def test_degenerate(self, world):
        with pytest.raises(DegenerateSplit):
            split_dataset(world.episodes[:2], [], ratios=(0.98, 0.01, 0.01))

    def test_bad_ratios(self, world):
        with pytest.raises(ValueError):
            split_dataset(world.episodes, [], ratios=(0.5, 0.2, 0.2))


def test_apportion_default_mix():
    counts = apportion(1000, (9313.0, 4530.0, 2074.0, 2066.0))
    assert sum(counts) == 1000
    total = 9313 + 4530 + 2074 + 2066
    for count, weight in zip(counts, (9313, 4530, 2074, 2066)):
        assert abs(count / 1000 - weight / total) <= 0.02


def test_qa_mix_proportions(world):
    rng = np.random.default_rng(0)
    qas = build_qa_set(world, 200, rng)
    counts = {d: sum(1 for q in qas if q.difficulty == d) for d in (1, 2, 3, 4)}
    total = 9313 + 4530 + 2074 + 2066
    for d, weight in zip((1, 2, 3, 4), (9313, 4530, 2074, 2066)):
        assert abs(counts[d] / 200 - weight / total) <= 0.02


def test_seeded_qa_determinism(world):
    a = build_qa_set(world, 30, np.random.default_rng(5))
    b = build_qa_set(world, 30, np.random.default_rng(5))
    assert a == b
