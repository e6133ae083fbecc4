"""Synthetic drama-story QA: schema, generator, models, and evaluation."""

from .schema import (
    BEHAVIORS,
    DEFAULT_ROSTER,
    EMOTIONS,
    ClipBundle,
    CharacterBox,
    FrameAnnotation,
    Granularity,
    InvalidCombination,
    ParseError,
    QAItem,
    ScriptLine,
    ValidationReport,
    assign_difficulty,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .synth import (
    CausalLink,
    DegenerateSplit,
    InsufficientWorld,
    SupportingFact,
    Unsolvable,
    World,
    WorldSpec,
    build_qa_set,
    generate_qa,
    generate_world,
    solve_by_oracle,
    split_dataset,
)
from .features import (
    PipelineLimits,
    StreamBatch,
    Vocabulary,
    build_vocab,
    encode_clip,
    encode_item,
    encode_qa,
    tokenize,
)
from .model import (
    ModelConfig,
    MultiLevelContextMatcher,
    build_model,
    cross_entropy_loss,
    load_checkpoint,
    save_checkpoint,
)
from .baselines import (
    BaselineKind,
    MeanPoolBaseline,
    MeanPoolConfig,
    longest_answer,
    qa_similarity,
    shortest_answer,
)
from .training import (
    EvalReport,
    TrainConfig,
    aggregate_report,
    build_encoded_split,
    evaluate,
    grad_check,
    run_ablation,
    train_model,
)

__version__ = "0.1.0"
