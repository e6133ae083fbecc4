import json

import pytest
from hypothesis import given, settings, strategies as st

from storyqa.schema import (
    BEHAVIORS,
    DEFAULT_ROSTER,
    EMOTIONS,
    CharacterBox,
    ClipBundle,
    FrameAnnotation,
    Granularity,
    InvalidCombination,
    ParseError,
    QAItem,
    ScriptLine,
    assign_difficulty,
    load_dataset,
    save_dataset,
    validate_dataset,
)


def test_vocabulary_sizes():
    assert len(BEHAVIORS) == 28
    assert "none" in BEHAVIORS
    assert len(EMOTIONS) == 7
    assert set(EMOTIONS) == {
        "anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"
    }
    assert len(DEFAULT_ROSTER) == 20
    assert "Haeyoung1" in DEFAULT_ROSTER and "Dokyung" in DEFAULT_ROSTER


class TestAssignDifficulty:
    def test_defined_pairs(self):
        assert assign_difficulty(1, 1) == 1
        assert assign_difficulty(1, 2) == 2
        assert assign_difficulty(2, 3) == 3
        assert assign_difficulty(2, 4) == 4

    @pytest.mark.parametrize("mc,lc", [(1, 3), (1, 4), (2, 1), (2, 2), (0, 1), (3, 3)])
    def test_undefined_pairs(self, mc, lc):
        with pytest.raises(InvalidCombination):
            assign_difficulty(mc, lc)

    def test_bijection(self):
        # total mapping over the four defined pairs onto {1,2,3,4}
        images = {assign_difficulty(mc, lc) for mc, lc in [(1, 1), (1, 2), (2, 3), (2, 4)]}
        assert images == {1, 2, 3, 4}


def make_clip(clip_id="c0", granularity=Granularity.SHOT, n_shots=1, script=()):
    shots = tuple(
        tuple(
            FrameAnnotation(
                frame_id=si * 10 + fi,
                boxes=(CharacterBox("Anna", (10, 10, 50, 100), "hold", "neutral",
                                    face_rect=(20, 15, 16, 16)),),
                feature=(0.5, -0.25),
            )
            for fi in range(2)
        )
        for si in range(n_shots)
    )
    return ClipBundle(clip_id=clip_id, granularity=granularity, shots=shots,
                      script=tuple(script), duration_s=n_shots * 2 / 3.0)


def make_qa(qid="q0", clip_id="c0", mc=1, lc=1, difficulty=1, n_cands=5, correct=0):
    cands = tuple(("Anna", "held", "the", f"item{i}", ".") for i in range(n_cands))
    return QAItem(qid=qid, clip_id=clip_id, question=("Who", "held", "the", "cup", "?"),
                  candidates=cands, correct_idx=correct, mc_level=mc, lc_level=lc,
                  difficulty=difficulty)


class TestValidation:
    def test_well_formed(self):
        report = validate_dataset([make_clip()], [make_qa()])
        assert report.ok, str(report)

    def test_four_candidates(self):
        report = validate_dataset([make_clip()], [make_qa(n_cands=4)])
        assert "candidates=5" in report.rules()

    def test_difficulty_consistency_oracle(self):
        # difficulty re-derived through assign_difficulty must match
        qa = make_qa(mc=2, lc=3, difficulty=2)
        report = validate_dataset([make_clip(granularity=Granularity.SCENE)], [qa])
        assert "difficulty-consistency" in report.rules()
        fixed = make_qa(mc=2, lc=3, difficulty=assign_difficulty(2, 3))
        report2 = validate_dataset([make_clip(granularity=Granularity.SCENE)], [fixed])
        assert "difficulty-consistency" not in report2.rules()

    def test_granularity_coupling(self):
        qa = make_qa(mc=1, lc=1, difficulty=1)
        scene = make_clip(granularity=Granularity.SCENE, n_shots=2)
        report = validate_dataset([scene], [qa])
        assert "granularity-coupling" in report.rules()

    def test_missing_clip(self):
        report = validate_dataset([], [make_qa()])
        assert "clip-exists" in report.rules()

    def test_shot_count(self):
        bad = make_clip(granularity=Granularity.SHOT, n_shots=2)
        report = validate_dataset([bad], [])
        assert "shot-count" in report.rules()

    def test_unknown_labels_and_roster(self):
        clip = make_clip()
        box = CharacterBox("Nobody", (0, 0, 10, 10), "fly", "joy")
        frame = FrameAnnotation(frame_id=0, boxes=(box,))
        bad = ClipBundle("c1", Granularity.SHOT, ((frame,),), (), 1.0)
        report = validate_dataset([bad], [])
        assert {"roster-member", "behavior-vocab", "emotion-vocab"} <= report.rules()

    def test_rect_and_face(self):
        box = CharacterBox("Anna", (0, 0, 0, 10), "hold", "neutral",
                           face_rect=(50, 50, 10, 10))
        frame = FrameAnnotation(frame_id=0, boxes=(box,))
        bad = ClipBundle("c1", Granularity.SHOT, ((frame,),), (), 1.0)
        report = validate_dataset([bad], [])
        assert "rect-positive" in report.rules()
        box2 = CharacterBox("Anna", (0, 0, 100, 100), "hold", "neutral",
                            face_rect=(90, 90, 20, 20))
        frame2 = FrameAnnotation(frame_id=0, boxes=(box2,))
        bad2 = ClipBundle("c1", Granularity.SHOT, ((frame2,),), (), 1.0)
        assert "face-in-full" in validate_dataset([bad2], []).rules()

    def test_duplicate_box_and_frame_order(self):
        box = CharacterBox("Anna", (0, 0, 10, 10), "hold", "neutral")
        frame = FrameAnnotation(frame_id=5, boxes=(box, box))
        frame2 = FrameAnnotation(frame_id=5, boxes=())
        bad = ClipBundle("c1", Granularity.SHOT, ((frame, frame2),), (), 1.0)
        rules = validate_dataset([bad], []).rules()
        assert "box-unique-character" in rules
        assert "frame-order" in rules

    def test_coref_length(self):
        line = ScriptLine("Anna", ("hi", "there"), (None,))
        bad = ClipBundle("c1", Granularity.SHOT,
                         ((FrameAnnotation(0, ()),),), (line,), 1.0)
        assert "coref-length" in validate_dataset([bad], []).rules()

    def test_pure_and_idempotent(self):
        episodes = [make_clip()]
        qas = [make_qa(n_cands=4)]
        r1 = validate_dataset(episodes, qas)
        r2 = validate_dataset(episodes, qas)
        assert r1 == r2
        assert str(r1) == str(r2)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        line = ScriptLine("Anna", ("I", "held", "the", "cup", "."),
                          ("Anna", None, None, None, None))
        episodes = [make_clip(script=[line]),
                    make_clip("c1", Granularity.SCENE, n_shots=3)]
        qas = [make_qa(), make_qa("q1", "c1", mc=2, lc=4, difficulty=4)]
        path = tmp_path / "data.json"
        save_dataset(episodes, qas, path)
        loaded_eps, loaded_qas = load_dataset(path)
        assert loaded_eps == episodes
        assert loaded_qas == qas

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.json"
        save_dataset([make_clip()], [make_qa()], path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ParseError):
            load_dataset(path)

    def test_unknown_emotion_label(self, tmp_path):
        path = tmp_path / "bad.json"
        save_dataset([make_clip()], [], path)
        doc = json.loads(path.read_text())
        doc["episodes"][0]["shots"][0][0]["boxes"][0]["emotion"] = "joy"
        path.write_text(json.dumps(doc))
        with pytest.raises(ParseError) as err:
            load_dataset(path)
        assert "emotion" in str(err.value)
        assert "joy" in str(err.value)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.json"
        save_dataset([], [make_qa()], path)
        doc = json.loads(path.read_text())
        del doc["qas"][0]["correct_idx"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ParseError) as err:
            load_dataset(path)
        assert "correct_idx" in str(err.value)


# property test: serialization round-trip over generated values

_token = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
_tokens = st.lists(_token, min_size=1, max_size=6).map(tuple)


@st.composite
def _qa_items(draw):
    mc, lc = draw(st.sampled_from([(1, 1), (1, 2), (2, 3), (2, 4)]))
    return QAItem(
        qid=draw(st.text(alphabet="qrs0123", min_size=1, max_size=5)),
        clip_id="c0",
        question=draw(_tokens),
        candidates=tuple(draw(_tokens) for _ in range(5)),
        correct_idx=draw(st.integers(0, 4)),
        mc_level=mc, lc_level=lc, difficulty=assign_difficulty(mc, lc),
    )


@st.composite
def _clips(draw):
    gran = draw(st.sampled_from(list(Granularity)))
    n_shots = 1 if gran is Granularity.SHOT else draw(st.integers(1, 3))
    shots = []
    fid = 0
    for _ in range(n_shots):
        frames = []
        for _ in range(draw(st.integers(1, 3))):
            boxes = tuple(
                CharacterBox(name, (0, 0, 4, 4), draw(st.sampled_from(BEHAVIORS)),
                             draw(st.sampled_from(EMOTIONS)))
                for name in draw(st.sets(st.sampled_from(DEFAULT_ROSTER[:4]), max_size=2))
            )
            feature = draw(st.one_of(
                st.none(),
                st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3).map(tuple),
            ))
            frames.append(FrameAnnotation(frame_id=fid, boxes=boxes, feature=feature))
            fid += 1
        shots.append(tuple(frames))
    script = tuple(
        ScriptLine(
            speaker=draw(st.sampled_from(DEFAULT_ROSTER[:4])),
            tokens=(toks := draw(_tokens)),
            coref_tags=tuple(draw(st.one_of(st.none(), st.sampled_from(DEFAULT_ROSTER[:4])))
                             for _ in toks),
        )
        for _ in range(draw(st.integers(0, 2)))
    )
    return ClipBundle(clip_id="c0", granularity=gran, shots=tuple(shots),
                      script=script, duration_s=draw(st.floats(0, 100, allow_nan=False)))


@given(clip=_clips(), qa=_qa_items())
@settings(max_examples=60, deadline=None)
def test_round_trip_property(tmp_path_factory, clip, qa):
    path = tmp_path_factory.mktemp("rt") / "d.json"
    save_dataset([clip], [qa], path)
    eps, qas = load_dataset(path)
    assert eps == [clip]
    assert qas == [qa]
