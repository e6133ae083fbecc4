"""Training loop, evaluation metrics, ablation runner, gradient checking."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .baselines import longest_answer, qa_similarity, shortest_answer
from .features import (
    DEFAULT_LIMITS,
    PipelineLimits,
    StreamBatch,
    Vocabulary,
    encode_clip_gated,
    encode_item,
)
from .model import (
    ModelConfig,
    MultiLevelContextMatcher,
    build_model,
    cross_entropy_loss,
)
from .schema import ClipBundle, QAItem


class Divergence(RuntimeError):
    """Training loss became non-finite."""


class UnknownVariant(ValueError):
    """Ablation variant name not in the supported set."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    early_stop_train_acc: Optional[float] = None
    encoder_lr_scale: float = 1.0   # <1 keeps encoders near their warm start longer

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class EncodedItem:
    qa: QAItem
    batch: StreamBatch


def build_encoded_split(
    episodes: Sequence[ClipBundle],
    qas: Sequence[QAItem],
    vocab: Vocabulary,
    roster: Sequence[str],
    limits: PipelineLimits = DEFAULT_LIMITS,
    d_v: Optional[int] = None,
    use_coref: bool = True,
    use_vmeta: bool = True,
) -> list[EncodedItem]:
    """Encode a split once, sharing each clip's arrays across its QAs."""
    clips = {c.clip_id: c for c in episodes}
    cache: dict[str, tuple] = {}
    out: list[EncodedItem] = []
    for qa in qas:
        if qa.clip_id not in cache:
            cache[qa.clip_id] = encode_clip_gated(
                clips[qa.clip_id], vocab, roster, limits, d_v=d_v,
                use_coref=use_coref, use_vmeta=use_vmeta,
            )
        batch = encode_item(qa, None, vocab, roster, limits,
                            clip_encoding=cache[qa.clip_id])
        out.append(EncodedItem(qa=qa, batch=batch))
    return out


# ---------------------------------------------------------------------------
# Metrics

DIFFICULTIES = (1, 2, 3, 4)


@dataclass
class EvalReport:
    """Per-difficulty accuracy (percent), pooled and difficulty-averaged."""

    accuracy_by_difficulty: dict[int, Optional[float]]
    counts: dict[int, int]
    overall: float
    diff_avg: float
    n_items: int
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "accuracy_by_difficulty": {
                str(d): self.accuracy_by_difficulty.get(d) for d in DIFFICULTIES
            },
            "counts": {str(d): self.counts.get(d, 0) for d in DIFFICULTIES},
            "overall": self.overall,
            "diff_avg": self.diff_avg,
            "n_items": self.n_items,
            "config": self.config,
        }


def aggregate_report(accuracies: Mapping[int, float], counts: Mapping[int, int],
                     config: Optional[dict] = None) -> EvalReport:
    """Combine per-difficulty accuracies (percent) with item counts.

    overall is the count-weighted pooled accuracy; diff_avg is the
    unweighted mean over difficulties that have items.
    """
    present = [d for d in DIFFICULTIES if counts.get(d, 0) > 0]
    if not present:
        raise ValueError("no items in any difficulty")
    total = sum(counts[d] for d in present)
    overall = sum(accuracies[d] * counts[d] for d in present) / total
    diff_avg = sum(accuracies[d] for d in present) / len(present)
    return EvalReport(
        accuracy_by_difficulty={d: (accuracies[d] if d in present else None)
                                for d in DIFFICULTIES},
        counts={d: counts.get(d, 0) for d in DIFFICULTIES},
        overall=overall,
        diff_avg=diff_avg,
        n_items=total,
        config=config or {},
    )


Predictor = Callable[[EncodedItem], int]


def evaluate(predict: Predictor, items: Sequence[EncodedItem],
             config: Optional[dict] = None) -> EvalReport:
    """Accuracy of a predictor per difficulty and pooled."""
    if not items:
        raise ValueError("split is empty")
    correct: dict[int, int] = {d: 0 for d in DIFFICULTIES}
    counts: dict[int, int] = {d: 0 for d in DIFFICULTIES}
    for item in items:
        d = item.qa.difficulty
        counts[d] += 1
        if predict(item) == item.qa.correct_idx:
            correct[d] += 1
    accuracies = {
        d: 100.0 * correct[d] / counts[d] for d in DIFFICULTIES if counts[d] > 0
    }
    return aggregate_report(accuracies, counts, config)


def model_predictor(model) -> Predictor:
    return lambda item: model.predict(item.batch)


def baseline_predictor(kind: str, vocab: Optional[Vocabulary] = None) -> Predictor:
    if kind == "shortest":
        return lambda item: shortest_answer(item.qa.candidates)
    if kind == "longest":
        return lambda item: longest_answer(item.qa.candidates)
    if kind == "qa_similarity":
        if vocab is None:
            raise ValueError("qa_similarity needs a vocabulary")
        return lambda item: qa_similarity(item.qa.question, item.qa.candidates, vocab)
    raise ValueError(f"unknown baseline {kind!r}")


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    history: list[dict]
    best_val_acc: float
    best_epoch: int
    final_train_acc: float


def _accuracy(model, items: Sequence[EncodedItem]) -> float:
    model.eval()
    hits = 0
    for item in items:
        if model.predict(item.batch) == item.qa.correct_idx:
            hits += 1
    return hits / len(items) if items else float("nan")


def train_model(model, train_items: Sequence[EncodedItem],
                val_items: Sequence[EncodedItem], cfg: TrainConfig,
                log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Mini-batch Adam on cross-entropy; retains the best-val parameters.

    Fully reproducible for a fixed seed: the epoch shuffles come from a
    dedicated numpy generator and model construction is seeded by the
    caller. Raises Divergence when the loss leaves the finite range.
    """
    if not train_items:
        raise ValueError("train split is empty")
    if cfg.encoder_lr_scale != 1.0:
        encoder_params, other_params = [], []
        for name, param in model.named_parameters():
            (encoder_params if "encoder" in name else other_params).append(param)
        groups = [
            {"params": other_params, "lr": cfg.lr},
            {"params": encoder_params, "lr": cfg.lr * cfg.encoder_lr_scale},
        ]
        optimizer = torch.optim.Adam(groups, lr=cfg.lr,
                                     weight_decay=cfg.weight_decay)
    else:
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                                     weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
    history: list[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    best_val, best_epoch = -1.0, -1
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_items))
        total_loss, hits = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            losses = []
            for idx in chunk:
                item = train_items[int(idx)]
                scores = model(item.batch)
                losses.append(cross_entropy_loss(scores, item.qa.correct_idx))
                if int(np.argmax(scores.detach().cpu().numpy())) == item.qa.correct_idx:
                    hits += 1
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise Divergence(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            total_loss += float(loss) * len(chunk)
        train_loss = total_loss / len(train_items)
        train_acc = hits / len(train_items)
        val_acc = _accuracy(model, val_items) if val_items else float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "train_acc": train_acc, "val_acc": val_acc})
        if log:
            log(f"epoch {epoch}: loss {train_loss:.4f} "
                f"train {train_acc:.3f} val {val_acc:.3f}")
        if val_items and val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())
        if cfg.early_stop_train_acc is not None and train_acc >= cfg.early_stop_train_acc:
            break
    if val_items:
        model.load_state_dict(best_state)
    final_train_acc = _accuracy(model, train_items)
    return TrainResult(history=history, best_val_acc=best_val,
                       best_epoch=best_epoch, final_train_acc=final_train_acc)


# ---------------------------------------------------------------------------
# Ablation variants

ABLATION_VARIANTS: dict[str, dict] = {
    "Full": {},
    "Our-High": {"use_high": False},
    "Our-Low": {"use_low": False},
    "S.Only": {"use_visual": False},
    "V.Only": {"use_script": False},
    "S.Only-Coref": {"use_visual": False, "use_coref": False},
    "V.Only-V.Meta": {"use_script": False, "use_vmeta": False},
}


def normalize_variant(name: str) -> str:
    cleaned = name.replace("−", "-").strip()
    for known in ABLATION_VARIANTS:
        if cleaned.lower() == known.lower():
            return known
    raise UnknownVariant(
        f"unknown variant {name!r}; expected one of {', '.join(ABLATION_VARIANTS)}"
    )


def variant_model_config(base: ModelConfig, variant: str) -> ModelConfig:
    overrides = ABLATION_VARIANTS[normalize_variant(variant)]
    cfg = copy.deepcopy(base)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def run_ablation(
    splits,                 # ((train_eps, train_qas), (val...), (test...))
    vocab: Vocabulary,
    roster: Sequence[str],
    base_model: ModelConfig,
    train_cfg: TrainConfig,
    variants: Sequence[str],
    limits: PipelineLimits = DEFAULT_LIMITS,
    log: Optional[Callable[[str], None]] = None,
) -> dict[str, EvalReport]:
    """Train each requested variant from scratch with the same seed and
    evaluate on the test split."""
    out: dict[str, EvalReport] = {}
    for raw_name in variants:
        name = normalize_variant(raw_name)
        cfg = variant_model_config(base_model, name)
        encoded = [
            build_encoded_split(eps, qas, vocab, roster, limits, d_v=cfg.d_v,
                                use_coref=cfg.use_coref, use_vmeta=cfg.use_vmeta)
            for eps, qas in splits
        ]
        model = build_model(cfg, roster, seed=train_cfg.seed, vocab=vocab)
        if log:
            log(f"[{name}] training")
        train_model(model, encoded[0], encoded[1], cfg=train_cfg, log=log)
        report = evaluate(model_predictor(model), encoded[2],
                          config={"variant": name, "model": asdict(cfg)})
        out[name] = report
        if log:
            log(f"[{name}] overall {report.overall:.2f} diff_avg {report.diff_avg:.2f}")
    return out


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float]      # per parameter group, max relative error
    max_rel_err: float
    tolerance: float
    passed: bool

    def summary(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        status = "pass" if self.passed else "FAIL"
        lines.append(f"max {self.max_rel_err:.3e} tolerance {self.tolerance:.0e}: {status}")
        return "\n".join(lines)


def relative_errors(analytic: Mapping[str, np.ndarray],
                    numeric: Mapping[str, np.ndarray],
                    floor: float = 1e-6) -> dict[str, float]:
    """Per-group max of |a - n| / max(|a|, |n|, floor)."""
    out = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        out[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return out


def finite_difference_grads(loss_fn: Callable[[], torch.Tensor],
                            params: Mapping[str, torch.nn.Parameter],
                            eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of loss_fn w.r.t. every scalar parameter."""
    out: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for name, param in params.items():
            flat = param.view(-1)
            grad = np.zeros(flat.shape[0])
            for i in range(flat.shape[0]):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                grad[i] = (up - down) / (2 * eps)
            out[name] = grad.reshape(tuple(param.shape))
    return out


def tiny_batch(roster_size: int = 4, d_w: int = 8, d_v: int = 8,
               seed: int = 0) -> StreamBatch:
    """Random dense batch at the gradient-check geometry:
    2 sentences x 3 words, 2 shots x 2 frames, 5 candidates of 4 tokens."""
    rng = np.random.default_rng(seed)
    r = roster_size
    qa = rng.normal(size=(5, 4, d_w))
    qa_mask = np.ones((5, 4))
    qa_mask[:, 3] = 0.0      # one padded step
    qa[:, 3] = 0.0
    script = rng.normal(size=(2, 3, d_w + r))
    script_mask = np.ones((2, 3))
    script_mask[1, 2] = 0.0
    script[1, 2] = 0.0
    speaker = np.zeros((2, r))
    speaker[0, 0] = 1.0
    speaker[1, 1] = 1.0
    visual = rng.normal(size=(2, 2, d_v + 2 * d_w + r))
    visual_mask = np.ones((2, 2))
    names = np.zeros((2, 2, r))
    names[0, :, 0] = 1.0
    names[1, :, 2] = 1.0
    qa_chars = np.zeros((5, r))
    qa_chars[:, 0] = 1.0
    qa_chars[2, 1] = 1.0
    return StreamBatch(
        qa=qa, qa_mask=qa_mask, script=script, script_mask=script_mask,
        speaker_onehot=speaker, visual=visual, visual_mask=visual_mask,
        frame_names=names, qa_chars=qa_chars, d_v=d_v, d_w=d_w,
        roster=tuple(f"C{i}" for i in range(r)),
        difficulty=1, correct_idx=2, qid="tiny",
    )


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(d=8, d_w=8, d_v=8, filters=4, kernel_sizes=(1, 2, 3),
                dropout=0.0, dtype="float64")
    base.update(overrides)
    return ModelConfig(**base)


def grad_check(config: Optional[ModelConfig] = None, tolerance: float = 1e-4,
               eps: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Analytic vs central-difference gradients on the tiny configuration."""
    cfg = config or tiny_model_config()
    batch = tiny_batch(d_w=cfg.d_w, d_v=cfg.d_v, seed=seed)
    model = build_model(cfg, batch.roster, seed=seed)
    model.eval()

    def loss_fn() -> torch.Tensor:
        return cross_entropy_loss(model(batch), batch.correct_idx)

    model.zero_grad()
    loss_fn().backward()
    params = dict(model.named_parameters())
    analytic = {
        name: p.grad.detach().cpu().numpy().copy()
        if p.grad is not None else np.zeros(tuple(p.shape))
        for name, p in params.items()
    }
    numeric = finite_difference_grads(loss_fn, params, eps=eps)
    errors = relative_errors(analytic, numeric)
    max_err = max(errors.values())
    return GradCheckReport(errors=errors, max_rel_err=max_err,
                           tolerance=tolerance, passed=max_err < tolerance)
