import sys, time
import numpy as np, torch
torch.set_num_threads(1)
from storyqa.synth import WorldSpec, generate_world, build_qa_set, split_dataset, lexicon_tokens
from storyqa.features import build_vocab
from storyqa.training import (TrainConfig, build_encoded_split, train_model, evaluate,
                              model_predictor, baseline_predictor)
from storyqa.model import ModelConfig, build_model

t_all = time.time()
margins, peaks = [], []
for s in range(3):
    t0 = time.time()
    spec = WorldSpec(seed=100 + s, roster_size=12, n_scenes=24, shots_per_scene=(3, 6),
                     frames_per_shot=(2, 6), feature_dim=8)
    world = generate_world(spec)
    rng = np.random.default_rng(1000 + s)
    qas = build_qa_set(world, 2000, rng)
    splits = split_dataset(world.episodes, qas, seed=100 + s)
    roster = world.roster
    corpus = [list(q.question) for q in splits[0][1]]
    corpus += [list(c) for q in splits[0][1] for c in q.candidates]
    corpus += [list(l.tokens) for c in splits[0][0] for l in c.script]
    corpus += lexicon_tokens() + [list(roster)]
    vocab = build_vocab(corpus, roster, d_w=32, seed=s)
    enc = [build_encoded_split(eps, qs, vocab, roster, d_v=8) for eps, qs in splits]
    mcfg = ModelConfig(d=48, d_w=32, d_v=8, filters=22, kernel_sizes=(1, 3, 5), dropout=0.1, dtype="float32")
    model = build_model(mcfg, roster, seed=s)
    tcfg = TrainConfig(lr=1.5e-3, weight_decay=2e-5, batch_size=4, epochs=12, seed=s,
                       early_stop_train_acc=0.965, encoder_lr_scale=0.25)
    res = train_model(model, enc[0], enc[1], tcfg)
    peak = max(h["train_acc"] for h in res.history)
    rep = evaluate(model_predictor(model), enc[2])
    sim = evaluate(baseline_predictor("qa_similarity", vocab), enc[2])
    margins.append(rep.overall - sim.overall)
    peaks.append(peak)
    print(f"seed {s}: {time.time()-t0:.0f}s epochs={len(res.history)} peak_train={peak:.3f} "
          f"test={rep.overall:.1f} sim={sim.overall:.1f} margin={margins[-1]:.1f}", flush=True)
print(f"MEAN margin {np.mean(margins):.1f}; mean peak train {np.mean(peaks):.3f}; "
      f"wall {time.time()-t_all:.0f}s")
