"""Multi-level context matching network.

Four evidence streams — {script, visual} x {low, high} — are scored per
answer candidate and summed. Each stream builds a query-aware feature
sequence [E | C | E*C | f] (context rows, attended QA summary, their
product, and a character-match flag), runs a bank of 1-D convolutions over
time, max-pools over unmasked steps, and maps to a scalar. High-level rows
are attention pools over words/frames guided by a character query (the sum
of learned per-character vectors for names in the QA pair); low-level rows
are the flattened word/frame encodings.

All computation is deterministic in evaluation mode. Fully masked groups
yield zero rows; fully masked streams score exactly zero.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .features import StreamBatch

STREAM_NAMES = ("script_low", "script_high", "visual_low", "visual_high")


@dataclass
class ModelConfig:
    d: int = 300                  # contextual width (d//2 per direction)
    d_w: int = 300
    d_v: int = 64
    kernel_sizes: tuple[int, ...] = (1, 2, 3)
    filters: int = 100
    dropout: float = 0.0
    similarity: str = "dot"       # "dot" | "trilinear"
    dtype: str = "float64"
    use_script: bool = True
    use_visual: bool = True
    use_low: bool = True
    use_high: bool = True
    use_coref: bool = True
    use_vmeta: bool = True
    tie_character_bank: bool = False
    aligned_init: bool = True     # warm-start stream encoders from the QA encoder

    def __post_init__(self) -> None:
        if self.d % 2 != 0:
            raise ValueError("d must be even (bidirectional halves)")
        if not (self.use_script or self.use_visual) or not (self.use_low or self.use_high):
            raise ValueError("at least one stream must be enabled")
        if self.similarity not in ("dot", "trilinear"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.tie_character_bank and self.d != self.d_w:
            raise ValueError("tying the character bank requires d == d_w")

    def enabled_streams(self) -> tuple[str, ...]:
        out = []
        for modality, on in (("script", self.use_script), ("visual", self.use_visual)):
            for level, lon in (("low", self.use_low), ("high", self.use_high)):
                if on and lon:
                    out.append(f"{modality}_{level}")
        return tuple(out)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to mask==1 positions.

    Fully masked rows yield all-zero weights instead of NaN.
    """
    neg = torch.finfo(logits.dtype).min
    keep = mask >= 0.5
    filled = logits.masked_fill(~keep, neg)
    weights = torch.softmax(filled, dim=-1)
    return weights * keep.to(logits.dtype)


def character_query(qa_chars: torch.Tensor, bank: torch.Tensor) -> torch.Tensor:
    """Sum of bank vectors for each name flagged in qa_chars ([B, R] 0/1).

    Names count once each; with no names the query is the zero vector,
    which makes the downstream attention uniform.
    """
    return qa_chars @ bank


def high_level_attend(h: torch.Tensor, mask: torch.Tensor,
                      query: torch.Tensor) -> torch.Tensor:
    """Attention-pool each group's rows with the character query.

    h: [G, T, D], mask: [G, T], query: [B, D]  ->  [B, G, D].
    Fully masked groups give zero rows.
    """
    logits = torch.einsum("bd,gtd->bgt", query, h)
    weights = masked_softmax(logits, mask.unsqueeze(0))
    return torch.einsum("bgt,gtd->bgd", weights, h)


def low_level_flatten(h: torch.Tensor, mask: torch.Tensor):
    """Row-major flatten of [G, T, D] to [G*T, D], mask likewise."""
    g, t = h.shape[0], h.shape[1]
    return h.reshape(g * t, h.shape[2]), mask.reshape(g * t)


def context_match(e: torch.Tensor, h_qa: torch.Tensor, qa_mask: torch.Tensor,
                  ctx_mask: Optional[torch.Tensor] = None,
                  trilinear: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Attend from each context step over the QA sequence.

    e: [B, T, D], h_qa: [B, Tq, D], qa_mask: [B, Tq] -> C: [B, T, D].
    Rows at masked context steps are zeroed so padding stays inert.
    """
    if trilinear is None:
        logits = torch.einsum("btd,bqd->btq", e, h_qa)
    else:
        d = e.shape[-1]
        w_e, w_q, w_x = trilinear[:d], trilinear[d:2 * d], trilinear[2 * d:]
        logits = (
            (e @ w_e).unsqueeze(-1)
            + (h_qa @ w_q).unsqueeze(1)
            + torch.einsum("btd,bqd->btq", e * w_x, h_qa)
        )
    if (qa_mask.sum(dim=-1) == 0).any():
        warnings.warn("context_match over a fully masked QA sequence", RuntimeWarning)
    weights = masked_softmax(logits, qa_mask.unsqueeze(1))
    c = torch.einsum("btq,bqd->btd", weights, h_qa)
    if ctx_mask is not None:
        c = c * ctx_mask.reshape(1, -1, 1)
    return c


class MaskedSequenceEncoder(nn.Module):
    """Bidirectional LSTM over the innermost time axis of [G, T, C] input.

    Groups are packed by true length (masks are contiguous prefixes), so
    appended all-masked groups or padding steps cannot influence the
    encoding of real content. Masked positions output zeros.
    """

    def __init__(self, in_size: int, d: int):
        super().__init__()
        self.lstm = nn.LSTM(in_size, d // 2, bidirectional=True, batch_first=True)
        self.d = d

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        g, t = x.shape[0], x.shape[1]
        out = x.new_zeros((g, t, self.d))
        if g == 0 or t == 0:
            return out
        lengths = mask.sum(dim=1).to(torch.int64)
        keep = lengths > 0
        if not bool(keep.any()):
            return out
        packed = pack_padded_sequence(
            x[keep], lengths[keep].cpu(), batch_first=True, enforce_sorted=False
        )
        enc, _ = self.lstm(packed)
        enc, _ = pad_packed_sequence(enc, batch_first=True, total_length=t)
        out[keep] = enc
        return out


class StreamScorer(nn.Module):
    """Conv bank over time, masked max-pool, linear map to a scalar."""

    def __init__(self, in_channels: int, kernel_sizes: Sequence[int],
                 filters: int, dropout: float):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(in_channels, filters, k, padding="same") for k in kernel_sizes
        )
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(filters * len(kernel_sizes), 1)
        d = (in_channels - 1) // 3
        with torch.no_grad():
            # scores start at zero so early updates follow feature gradients
            self.out.weight.zero_()
            self.out.bias.zero_()
            # seed two filters per kernel as match-strength and flag
            # detectors over the E*C and flag channel blocks; they stay
            # trainable and give every initialization a working readout
            # of query-context alignment
            for conv in self.convs:
                if conv.out_channels >= 2:
                    conv.weight[0].zero_()
                    conv.weight[0, 2 * d:3 * d, :] = 1.0 / d
                    conv.weight[1].zero_()
                    conv.weight[1, 3 * d, :] = 1.0
                    conv.bias[0] = 0.0
                    conv.bias[1] = 0.0
                k = conv.kernel_size[0]
                if conv.out_channels >= 3 and k >= 2:
                    # alignment-break detector: matched neighbors around an
                    # unmatched center
                    conv.weight[2].zero_()
                    conv.weight[2, 2 * d:3 * d, :] = 1.0 / d
                    conv.weight[2, 2 * d:3 * d, k // 2] = -1.0 / d
                    conv.bias[2] = 0.0

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # x: [B, T, C]; mask: [T] or [B, T]; caller ensures mask.sum() > 0
        h = torch.cat([torch.relu(conv(x.transpose(1, 2))) for conv in self.convs], dim=1)
        if mask.dim() == 1:
            mask = mask.unsqueeze(0).expand(x.shape[0], -1)
        neg = torch.finfo(h.dtype).min
        h = h.masked_fill((mask < 0.5).unsqueeze(1), neg)
        pooled = h.max(dim=2).values
        return self.out(self.dropout(pooled)).squeeze(-1)


class MultiLevelContextMatcher(nn.Module):
    """Scores five answer candidates from script and visual streams."""

    def __init__(self, config: ModelConfig, roster_size: int):
        super().__init__()
        self.config = config
        self.roster_size = roster_size
        d, d_w = config.d, config.d_w
        self.qa_encoder = MaskedSequenceEncoder(d_w, d)
        self.script_encoder = MaskedSequenceEncoder(d_w + roster_size, d)
        self.visual_encoder = MaskedSequenceEncoder(
            config.d_v + 2 * d_w + roster_size, d
        )
        self.character_bank = nn.Parameter(torch.randn(roster_size, d) / d ** 0.5)
        if config.similarity == "trilinear":
            self.trilinear = nn.Parameter(torch.randn(3 * d) / (3 * d) ** 0.5)
        else:
            self.trilinear = None
        self.scorers = nn.ModuleDict({
            name: StreamScorer(3 * d + 1, config.kernel_sizes, config.filters,
                               config.dropout)
            for name in STREAM_NAMES
        })
        self.to(config.torch_dtype)

    # -- stream assembly -------------------------------------------------

    def _tensor(self, arr: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(arr, dtype=self.config.torch_dtype)

    def _score_stream(self, name: str, e: torch.Tensor, mask: torch.Tensor,
                      flags: torch.Tensor, h_qa: torch.Tensor,
                      qa_mask: torch.Tensor) -> torch.Tensor:
        c = context_match(e, h_qa, qa_mask, ctx_mask=mask, trilinear=self.trilinear)
        flags = flags * mask.reshape(1, -1)
        x = torch.cat([e, c, e * c, flags.unsqueeze(-1)], dim=-1)
        return self.scorers[name](x, mask)

    def stream_scores(self, batch: StreamBatch) -> dict[str, torch.Tensor]:
        """Per-stream score vectors (length 5); disabled or empty streams
        are omitted (they contribute exactly zero)."""
        cfg = self.config
        qa = self._tensor(batch.qa)
        qa_mask = self._tensor(batch.qa_mask)
        n_cand = qa.shape[0]
        h_qa = self.qa_encoder(qa, qa_mask)
        query = character_query(self._tensor(batch.qa_chars), self.character_bank)
        out: dict[str, torch.Tensor] = {}

        def run(modality: str, h, mask, low_flags, high_flags, group_flags_mask):
            flat_h, flat_mask = low_level_flatten(h, mask)
            if cfg.use_low and float(flat_mask.sum()) > 0:
                e = flat_h.unsqueeze(0).expand(n_cand, -1, -1)
                out[f"{modality}_low"] = self._score_stream(
                    f"{modality}_low", e, flat_mask, low_flags, h_qa, qa_mask)
            if cfg.use_high and float(flat_mask.sum()) > 0:
                e_h = high_level_attend(h, mask, query)
                out[f"{modality}_high"] = self._score_stream(
                    f"{modality}_high", e_h, group_flags_mask, high_flags, h_qa, qa_mask)

        qa_chars = self._tensor(batch.qa_chars)
        if cfg.use_script and batch.script.size:
            script = self._tensor(batch.script)
            s_mask = self._tensor(batch.script_mask)
            h_s = self.script_encoder(script, s_mask)
            speaker = self._tensor(batch.speaker_onehot)
            sent_flag = ((qa_chars @ speaker.T) > 0).to(h_s.dtype)     # [B, S]
            word_flag = sent_flag.unsqueeze(-1).expand(-1, -1, s_mask.shape[1])
            word_flag = word_flag.reshape(n_cand, -1)
            sent_mask = (s_mask.sum(dim=1) > 0).to(h_s.dtype)
            run("script", h_s, s_mask, word_flag, sent_flag, sent_mask)

        if cfg.use_visual and batch.visual.size:
            visual = self._tensor(batch.visual)
            v_mask = self._tensor(batch.visual_mask)
            h_v = self.visual_encoder(visual, v_mask)
            names = self._tensor(batch.frame_names)                    # [V, F, R]
            frame_flag = (torch.einsum("br,vfr->bvf", qa_chars, names) > 0).to(h_v.dtype)
            frame_flag = frame_flag.reshape(n_cand, -1)
            shot_flag = (torch.einsum("br,vr->bv", qa_chars, names.sum(dim=1)) > 0)
            shot_flag = shot_flag.to(h_v.dtype)
            shot_mask = (v_mask.sum(dim=1) > 0).to(h_v.dtype)
            run("visual", h_v, v_mask, frame_flag, shot_flag, shot_mask)
        return out

    def forward(self, batch: StreamBatch) -> torch.Tensor:
        """Total score per candidate: the sum of enabled stream scores."""
        per_stream = self.stream_scores(batch)
        n_cand = batch.qa.shape[0]
        total = torch.zeros(n_cand, dtype=self.config.torch_dtype)
        for name in STREAM_NAMES:
            if name in per_stream:
                total = total + per_stream[name]
        return total

    def predict(self, batch: StreamBatch) -> int:
        """Argmax candidate; ties break toward the lowest index."""
        with torch.no_grad():
            scores = self.forward(batch).detach().cpu().numpy()
        return int(np.argmax(scores))


def cross_entropy_loss(scores: torch.Tensor, correct_idx: int) -> torch.Tensor:
    """Softmax cross-entropy of one score vector against the correct index."""
    target = torch.tensor([correct_idx], dtype=torch.long)
    return torch.nn.functional.cross_entropy(scores.unsqueeze(0), target)


def _gate_biases(lstm: nn.LSTM, hidden: int) -> None:
    """Start near a context-free word encoder: input/output gates open,
    forget gate closed, so identical tokens encode identically before any
    training and recurrence is learned as needed."""
    for name, param in lstm.named_parameters():
        if not name.startswith("bias_ih"):
            continue
        with torch.no_grad():
            param[0 * hidden:1 * hidden] = 2.0    # input gate
            param[1 * hidden:2 * hidden] = -4.0   # forget gate
            param[2 * hidden:3 * hidden] = 0.0    # cell candidate
            param[3 * hidden:4 * hidden] = 2.0    # output gate
        hh = dict(lstm.named_parameters())[name.replace("bias_ih", "bias_hh")]
        with torch.no_grad():
            hh.zero_()


def _align_stream_encoders(model: MultiLevelContextMatcher) -> None:
    """Initialize the script/visual encoders from the QA encoder so word
    content maps into the same contextual space across streams from the
    first step; character one-hot columns start at zero. The encoders stay
    independent parameters and diverge during training."""
    cfg = model.config
    d_w, d_v, r = cfg.d_w, cfg.d_v, model.roster_size
    hidden = cfg.d // 2
    qa = dict(model.qa_encoder.lstm.named_parameters())
    with torch.no_grad():
        for suffix in ("l0", "l0_reverse"):
            src_ih = qa[f"weight_ih_{suffix}"]
            for enc, blocks in (
                (model.script_encoder, [(0, d_w, 1.0)]),
                (model.visual_encoder, [(d_v, d_v + d_w, 1.0),
                                        (d_v + d_w, d_v + 2 * d_w, 1.0)]),
            ):
                params = dict(enc.lstm.named_parameters())
                ih = params[f"weight_ih_{suffix}"]
                in_size = ih.shape[1]
                for start, end, scale in blocks:
                    ih[:, start:end] = src_ih * scale
                ih[:, in_size - r:] = 0.0
                params[f"weight_hh_{suffix}"].copy_(qa[f"weight_hh_{suffix}"])
                params[f"bias_ih_{suffix}"].copy_(qa[f"bias_ih_{suffix}"])
                params[f"bias_hh_{suffix}"].copy_(qa[f"bias_hh_{suffix}"])
    for encoder in (model.qa_encoder, model.script_encoder, model.visual_encoder):
        _gate_biases(encoder.lstm, hidden)


def build_model(config: ModelConfig, roster: Sequence[str], seed: int = 0,
                vocab=None) -> MultiLevelContextMatcher:
    """Seeded construction; optionally ties the character bank to the
    vocabulary's character word vectors at initialization."""
    torch.manual_seed(seed)
    model = MultiLevelContextMatcher(config, len(roster))
    if config.aligned_init:
        _align_stream_encoders(model)
    if config.tie_character_bank:
        if vocab is None:
            raise ValueError("tie_character_bank requires a vocabulary")
        with torch.no_grad():
            vecs = np.stack([vocab.vector(name) for name in roster])
            model.character_bank.copy_(torch.as_tensor(vecs, dtype=config.torch_dtype))
    return model


# ---------------------------------------------------------------------------
# Checkpoints: magic, version header, parameter names/shapes, row-major data

_MAGIC = b"SQCK"


def save_checkpoint(path, model: MultiLevelContextMatcher,
                    roster: Sequence[str], extra: Optional[dict] = None) -> None:
    params = []
    buffers = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        params.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        buffers.append(np.ascontiguousarray(arr).tobytes())
    header = {
        "version": 1,
        "config": asdict(model.config),
        "roster": list(roster),
        "params": params,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path):
    """Returns (config, roster, extra, rebuilt model)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        if header["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        cfg_dict = dict(header["config"])
        cfg_dict["kernel_sizes"] = tuple(cfg_dict["kernel_sizes"])
        config = ModelConfig(**cfg_dict)
        roster = list(header["roster"])
        state = {}
        for meta in header["params"]:
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            dtype = np.dtype(meta["dtype"])
            raw = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(raw, dtype=dtype).reshape(meta["shape"]).copy()
            state[meta["name"]] = torch.as_tensor(arr)
    model = MultiLevelContextMatcher(config, len(roster))
    model.load_state_dict(state)
    return config, roster, header["extra"], model
