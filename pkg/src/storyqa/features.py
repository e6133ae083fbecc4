"""Numeric stream encoding.

Turns schema objects into padded, masked numpy arrays:

  qa      [(T_Q + T_Ai) x D_W]                       per candidate
  script  [T_sent x T_word x (D_W + roster)]         word vectors plus a
                                                     speaker/coreference
                                                     one-hot block per word
  visual  [T_shot x T_frame x (D_V + 2*D_W + roster)] frame feature, behavior
                                                     and emotion embeddings,
                                                     character one-hot union

Truncation keeps the earliest sentences/shots/words/frames. Multiple boxes
in a frame are mean-pooled into one row; their name one-hots are unioned.
Encoding is a pure function of (clip, vocab, roster): no RNG is touched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .schema import ClipBundle, ParseError, QAItem

PAD = "<pad>"
UNK = "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str, roster: Sequence[str] = ()) -> list[str]:
    """Whitespace/punctuation split; lowercased except roster names."""
    keep = set(roster)
    out = []
    for raw in _TOKEN_RE.findall(text):
        out.append(raw if raw in keep else raw.lower())
    return out


@dataclass
class Vocabulary:
    """Token index plus a fixed vector table (PAD is index 0, all zeros)."""

    tokens: list[str]
    index: dict[str, int]
    vectors: np.ndarray                  # [n_tokens, d_w]
    character_flags: np.ndarray          # bool per token

    @property
    def d_w(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.lookup(token)]

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.d_w))
        idx = [self.lookup(t) for t in tokens]
        return self.vectors[idx]


def load_pretrained(path, d_w: int) -> dict[str, np.ndarray]:
    """Text format: one token followed by d_w numbers per line."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != d_w + 1:
                raise ParseError(
                    f"{path}: line {lineno}: expected token plus {d_w} numbers, "
                    f"got {len(parts)} fields"
                )
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            table[parts[0]] = vec
    return table


def build_vocab(
    corpus: Iterable[Sequence[str]],
    roster: Sequence[str],
    d_w: int = 300,
    pretrained_path=None,
    min_freq: int = 1,
    seed: int = 0,
) -> Vocabulary:
    """Index every corpus token at or above min_freq plus PAD/UNK and the
    full roster. Vectors are random; pretrained vectors (when given)
    override random initialization except for character-name tokens, which
    stay random."""
    counts: dict[str, int] = {}
    for sent in corpus:
        for tok in sent:
            counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise ValueError("corpus is empty")
    kept = sorted(t for t, c in counts.items() if c >= min_freq)
    tokens = [PAD, UNK] + [name for name in roster] + [t for t in kept if t not in set(roster)]
    index = {t: i for i, t in enumerate(tokens)}

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70CAB]))
    vectors = rng.normal(0.0, 1.0 / np.sqrt(d_w), size=(len(tokens), d_w))
    vectors[index[PAD]] = 0.0

    character_flags = np.zeros(len(tokens), dtype=bool)
    for name in roster:
        character_flags[index[name]] = True

    if pretrained_path is not None:
        table = load_pretrained(pretrained_path, d_w)
        for tok, vec in table.items():
            i = index.get(tok)
            if i is not None and not character_flags[i] and i != index[PAD]:
                vectors[i] = vec
    return Vocabulary(tokens=tokens, index=index, vectors=vectors,
                      character_flags=character_flags)


_VOCAB_MAGIC = b"SQVB"


def save_vocab(vocab: Vocabulary, path) -> None:
    """Binary vocabulary file: JSON header plus raw float64 vectors."""
    import json
    import struct

    header = {
        "version": 1,
        "tokens": vocab.tokens,
        "character_flags": [bool(b) for b in vocab.character_flags],
        "d_w": vocab.d_w,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_VOCAB_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(vocab.vectors, dtype=np.float64).tobytes())


def load_vocab(path) -> Vocabulary:
    import json
    import struct

    with open(path, "rb") as fh:
        if fh.read(4) != _VOCAB_MAGIC:
            raise ParseError(f"{path}: not a vocabulary file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        tokens = header["tokens"]
        d_w = header["d_w"]
        raw = fh.read(len(tokens) * d_w * 8)
        vectors = np.frombuffer(raw, dtype=np.float64).reshape(len(tokens), d_w).copy()
    return Vocabulary(
        tokens=tokens,
        index={t: i for i, t in enumerate(tokens)},
        vectors=vectors,
        character_flags=np.array(header["character_flags"], dtype=bool),
    )


@dataclass(frozen=True)
class PipelineLimits:
    t_sent: int = 30
    t_shot: int = 30
    t_word: int = 20
    t_frame: int = 10


DEFAULT_LIMITS = PipelineLimits()


def encode_qa(question: Sequence[str], candidate: Sequence[str],
              vocab: Vocabulary) -> np.ndarray:
    """Concatenate question and candidate tokens into one vector sequence."""
    return vocab.embed(list(question) + list(candidate))


def _label_vector(label: str, vocab: Vocabulary) -> np.ndarray:
    """Embed a (possibly multiword) behavior/emotion label."""
    parts = [p for chunk in label.split() for p in chunk.split("/")]
    vecs = vocab.embed(parts)
    return vecs.mean(axis=0) if len(vecs) else np.zeros(vocab.d_w)


def encode_clip(
    clip: ClipBundle,
    vocab: Vocabulary,
    roster: Sequence[str],
    limits: PipelineLimits = DEFAULT_LIMITS,
    d_v: Optional[int] = None,
):
    """Encode script and visual streams with their masks.

    Returns (script, script_mask, speaker_onehot, visual, visual_mask,
    frame_names). script_mask/visual_mask are word- and frame-level 0/1
    arrays; sentence/shot masks are their any() reductions. speaker_onehot
    and frame_names are kept separate so match flags can be derived without
    re-reading the clip.
    """
    d_w = vocab.d_w
    r = len(roster)
    roster_index = {name: i for i, name in enumerate(roster)}

    sentences = clip.script[: limits.t_sent]
    n_sent = len(sentences)
    max_word = max((min(len(l.tokens), limits.t_word) for l in sentences), default=0)
    script = np.zeros((n_sent, max_word, d_w + r))
    script_mask = np.zeros((n_sent, max_word))
    speaker_onehot = np.zeros((n_sent, r))
    for si, line in enumerate(sentences):
        spk = roster_index.get(line.speaker)
        if spk is not None:
            speaker_onehot[si, spk] = 1.0
        tokens = line.tokens[: limits.t_word]
        tags = line.coref_tags[: limits.t_word]
        for wi, tok in enumerate(tokens):
            script[si, wi, :d_w] = vocab.vector(tok)
            if spk is not None:
                script[si, wi, d_w + spk] = 1.0
            tag = tags[wi] if wi < len(tags) else None
            if tag is not None and tag in roster_index:
                script[si, wi, d_w + roster_index[tag]] = 1.0
            script_mask[si, wi] = 1.0

    shots = clip.shots[: limits.t_shot]
    n_shot = len(shots)
    max_frame = max((min(len(s), limits.t_frame) for s in shots), default=0)
    if d_v is None:
        d_v = 0
        for shot in shots:
            for frame in shot:
                if frame.feature is not None:
                    d_v = len(frame.feature)
                    break
            if d_v:
                break
    width = d_v + 2 * d_w + r
    visual = np.zeros((n_shot, max_frame, width))
    visual_mask = np.zeros((n_shot, max_frame))
    frame_names = np.zeros((n_shot, max_frame, r))
    for vi, shot in enumerate(shots):
        for fi, frame in enumerate(shot[: limits.t_frame]):
            if frame.feature is not None:
                visual[vi, fi, :d_v] = np.asarray(frame.feature)[:d_v]
            if frame.boxes:
                beh = np.mean([_label_vector(b.behavior, vocab) for b in frame.boxes], axis=0)
                emo = np.mean([_label_vector(b.emotion, vocab) for b in frame.boxes], axis=0)
                visual[vi, fi, d_v:d_v + d_w] = beh
                visual[vi, fi, d_v + d_w:d_v + 2 * d_w] = emo
                for box in frame.boxes:
                    ci = roster_index.get(box.character)
                    if ci is not None:
                        visual[vi, fi, d_v + 2 * d_w + ci] = 1.0
                        frame_names[vi, fi, ci] = 1.0
            visual_mask[vi, fi] = 1.0
    return script, script_mask, speaker_onehot, visual, visual_mask, frame_names


@dataclass
class StreamBatch:
    """Padded, masked streams for one QA item against one clip.

    Channel layout: script rows are [word vector | speaker+coref one-hot];
    visual rows are [frame feature | behavior emb | emotion emb | name
    one-hot]. qa_chars marks roster names in question+candidate i.
    """

    qa: np.ndarray            # [5, t_qa, d_w]
    qa_mask: np.ndarray       # [5, t_qa]
    script: np.ndarray        # [t_sent, t_word, d_w + r]
    script_mask: np.ndarray   # [t_sent, t_word]
    speaker_onehot: np.ndarray  # [t_sent, r]
    visual: np.ndarray        # [t_shot, t_frame, d_v + 2*d_w + r]
    visual_mask: np.ndarray   # [t_shot, t_frame]
    frame_names: np.ndarray   # [t_shot, t_frame, r]
    qa_chars: np.ndarray      # [5, r]
    d_v: int
    d_w: int
    roster: tuple[str, ...]
    difficulty: int = 0
    correct_idx: int = -1
    qid: str = ""


def qa_character_onehot(qa: QAItem, roster: Sequence[str]) -> np.ndarray:
    """Roster one-hot of names occurring in question plus each candidate;
    each name counts once no matter how often it occurs."""
    r = len(roster)
    roster_index = {name: i for i, name in enumerate(roster)}
    out = np.zeros((len(qa.candidates), r))
    q_hits = {roster_index[t] for t in qa.question if t in roster_index}
    for ci, cand in enumerate(qa.candidates):
        hits = set(q_hits)
        hits.update(roster_index[t] for t in cand if t in roster_index)
        for i in hits:
            out[ci, i] = 1.0
    return out


def encode_clip_gated(
    clip: ClipBundle,
    vocab: Vocabulary,
    roster: Sequence[str],
    limits: PipelineLimits = DEFAULT_LIMITS,
    d_v: Optional[int] = None,
    use_coref: bool = True,
    use_vmeta: bool = True,
):
    """encode_clip plus the ablation channel gates.

    use_coref=False zeroes the script speaker/coreference one-hot channels
    (and the speaker record used for match flags); use_vmeta=False zeroes
    the visual behavior/emotion/name channels and the frame name record,
    leaving only the frame feature block.
    """
    d_w = vocab.d_w
    r = len(roster)
    script, script_mask, speaker_onehot, visual, visual_mask, frame_names = encode_clip(
        clip, vocab, roster, limits, d_v=d_v
    )
    if not use_coref:
        script[:, :, d_w:] = 0.0
        speaker_onehot = np.zeros_like(speaker_onehot)
    if not use_vmeta:
        dv = visual.shape[2] - 2 * d_w - r
        visual[:, :, dv:] = 0.0
        frame_names = np.zeros_like(frame_names)
    return script, script_mask, speaker_onehot, visual, visual_mask, frame_names


def encode_item(
    qa: QAItem,
    clip: Optional[ClipBundle],
    vocab: Vocabulary,
    roster: Sequence[str],
    limits: PipelineLimits = DEFAULT_LIMITS,
    d_v: Optional[int] = None,
    use_coref: bool = True,
    use_vmeta: bool = True,
    clip_encoding=None,
) -> StreamBatch:
    """Build the full stream bundle for one QA item.

    Pass a precomputed clip_encoding (from encode_clip_gated) to share one
    clip's arrays across the many QA items that reference it.
    """
    d_w = vocab.d_w
    qa_seqs = [encode_qa(qa.question, cand, vocab) for cand in qa.candidates]
    t_qa = max(len(s) for s in qa_seqs)
    qa_arr = np.zeros((len(qa_seqs), t_qa, d_w))
    qa_mask = np.zeros((len(qa_seqs), t_qa))
    for i, seq in enumerate(qa_seqs):
        qa_arr[i, : len(seq)] = seq
        qa_mask[i, : len(seq)] = 1.0

    if clip_encoding is None:
        if clip is None:
            raise ValueError("either clip or clip_encoding is required")
        clip_encoding = encode_clip_gated(
            clip, vocab, roster, limits, d_v=d_v,
            use_coref=use_coref, use_vmeta=use_vmeta,
        )
    script, script_mask, speaker_onehot, visual, visual_mask, frame_names = clip_encoding
    r = len(roster)

    return StreamBatch(
        qa=qa_arr, qa_mask=qa_mask,
        script=script, script_mask=script_mask, speaker_onehot=speaker_onehot,
        visual=visual, visual_mask=visual_mask, frame_names=frame_names,
        qa_chars=qa_character_onehot(qa, roster),
        d_v=visual.shape[2] - 2 * d_w - r, d_w=d_w, roster=tuple(roster),
        difficulty=qa.difficulty, correct_idx=qa.correct_idx, qid=qa.qid,
    )
