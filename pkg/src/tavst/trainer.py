"""Multi-agent training: loss composition, policy-gradient fine-tuning, and
the iterative-updating loop between the topic and story agents.

One forward pass runs: visual encoding; an initial topic pass seeded from
the visual contexts; co-attention fusion; an initial story pass; then
n_iter refinement rounds where the story decoder's last hidden states seed
a fresh topic pass (through a second learned bridge) that re-conditions the
next story pass. All story passes share one decoder, all topic passes share
one decoder; gradients flow through the message path.

Loss shape, with com(mle, rl, w) = w*rl + (1-w)*mle:
  stage losses    L_init   = com(topic_mle, story_com, lambda1)
                  L_iter_n = com(topic_mle_n, story_com_n, lambda2)
  grand total     L        = com(sum_n L_iter_n, L_init, beta)
With n_iter = 0 the refinement sum is empty and L is exactly L_init.

The policy-gradient story loss treats (reward - baseline) as a constant in
the policy term; the squared advantage trains only the linear baseline and
is added to the optimization objective outside the combination above, so
every reported combined value is an exact convex combination.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields, replace
from typing import Callable, NamedTuple

import numpy as np

from . import metrics
from .coattn import JointContext, joint_contexts
from .data import Album, Corpus, DataError, Vocabulary
from .optim import AdamState, adam_step, clip_grad_norm
from .params import ModelDims, ModelParams, init_params
from .story import StoryOutput, beam_search, decode_story
from .tensor import (Precision, Tensor, add_const, add_n, matmul, mul,
                     no_grad, scale, stack_rows)
from .topic import TopicInput, TopicMemory, decode_topic, init_state
from .visual import VisualContext, encode_album


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    hidden: int = 512
    images_per_album: int = 5
    batch_size: int = 64
    lr_warm: float = 2e-4
    lr_ft: float = 2e-5
    alpha: float = 0.8          # policy-gradient weight during fine-tuning
    lambda1: float = 0.7
    lambda2: float = 0.7
    beta: float = 0.3
    n_iter: int = 2
    beam_size: int = 3
    reward: str = "meteor_lite"
    coatt_scope: str = "per_image"
    seed: int = 0
    epochs_topic: int = 2
    epochs_joint: int = 10
    epochs_rl: int = 5
    precision: str = "standard"
    max_story_len: int = 25
    max_title_len: int = 20
    min_count: int = 3
    grad_clip: float = 5.0
    rl_samples: int = 1

    def validate(self) -> None:
        for name in ("alpha", "lambda1", "lambda2", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"config: {name} must be in [0, 1], got {v}")
        if self.n_iter < 0:
            raise DataError(f"config: n_iter must be >= 0, got {self.n_iter}")
        if self.beam_size < 1:
            raise DataError(f"config: beam_size must be >= 1, got {self.beam_size}")
        if self.reward not in REWARDS:
            raise DataError(f"config: unknown reward {self.reward!r}")
        if self.coatt_scope not in ("per_image", "global"):
            raise DataError(f"config: unknown coatt_scope {self.coatt_scope!r}")
        if self.precision not in ("standard", "verify"):
            raise DataError(f"config: unknown precision {self.precision!r}")
        for name in ("hidden", "images_per_album", "batch_size", "rl_samples"):
            if getattr(self, name) < 1:
                raise DataError(f"config: {name} must be >= 1")

    @property
    def precision_mode(self) -> Precision:
        return Precision(self.precision)


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(TrainConfig))


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse flat key=value lines into a TrainConfig on top of the defaults."""
    values = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"int": int, "float": float, "str": str}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = casts[types[key]](raw.strip())
        except ValueError:
            raise DataError(
                f"config line {lineno}: bad {types[key]} value {raw.strip()!r}"
            ) from None
    cfg = replace(base or TrainConfig(), **values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# loss pieces
# ---------------------------------------------------------------------------


REWARDS: dict[str, Callable] = {
    "meteor_lite": metrics.meteor_lite,
    "bleu4": lambda hyp, ref: metrics.bleu([hyp], [[ref]])[3],
    "cider": None,  # resolved per-corpus: needs document frequencies
}


def make_reward_fn(name: str, corpus: Corpus | None = None) -> Callable:
    if name == "cider":
        if corpus is None:
            raise DataError("cider reward needs a corpus for document frequencies")
        refs = [[s] for a in corpus.train for s in a.sentences]
        return metrics.make_cider_reward(refs)
    fn = REWARDS.get(name)
    if fn is None:
        raise DataError(f"unknown reward {name!r}")
    return fn


def combine(mle: Tensor, rl: Tensor, weight: float) -> Tensor:
    """weight * rl + (1 - weight) * mle, as an exact convex combination."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"combine: weight must be in [0, 1], got {weight}")
    return add_n([scale(rl, weight), scale(mle, 1.0 - weight)])


def story_mle_loss(outputs: list[StoryOutput]) -> Tensor:
    """Teacher-forced story loss: per-step cross-entropies summed over every
    sub-story, averaged over the batch of albums."""
    if not outputs:
        raise ValueError("story_mle_loss: no outputs")
    losses = []
    for out in outputs:
        if out.mle_loss is None:
            raise ValueError("story_mle_loss: outputs must be teacher-forced")
        losses.append(out.mle_loss)
    return scale(add_n(losses), 1.0 / len(losses))


class RLBaseline:
    """Linear map from a joint context vector to an expected-reward scalar."""

    def __init__(self, params: ModelParams):
        self.w = params["baseline.w"]
        self.b = params["baseline.b"]

    def value(self, context: Tensor) -> Tensor:
        prod = matmul(self.w, context)
        return add_n([prod, self.b])


class RLLosses(NamedTuple):
    policy_loss: Tensor
    baseline_loss: Tensor
    mean_reward: float


def story_rl_loss(sampled: StoryOutput, refs: list[list[str]],
                  contexts: list[Tensor], baseline: RLBaseline,
                  reward_fn: Callable, story_vocab: Vocabulary,
                  album_id: str = "?") -> RLLosses:
    """Score-function policy loss with a learned baseline.

    policy_loss  = sum_i (r_i - b_i) * sum_t nll_{i,t}, advantage detached;
    baseline_loss = sum_i (b_i - r_i)^2, training only the baseline."""
    policy_terms = []
    baseline_terms = []
    rewards = []
    for i, tokens in enumerate(sampled.sub_stories):
        hyp = story_vocab.decode(tokens)
        try:
            r = float(reward_fn(hyp, refs[i]))
        except Exception as exc:
            raise RuntimeError(f"reward computation failed for album {album_id}: {exc}") from exc
        b_node = baseline.value(contexts[i])
        advantage = r - b_node.item()
        nll = add_n(sampled.step_nll[i])
        policy_terms.append(scale(nll, advantage))
        diff = add_const(b_node, -r)
        baseline_terms.append(mul(diff, diff))
        rewards.append(r)
    return RLLosses(
        policy_loss=add_n(policy_terms),
        baseline_loss=add_n(baseline_terms),
        mean_reward=sum(rewards) / len(rewards),
    )


# ---------------------------------------------------------------------------
# full forward pass
# ---------------------------------------------------------------------------


@dataclass
class IterationLosses:
    topic_mle: float
    story_mle: float
    story_rl: float
    story_com: float
    total: float


@dataclass
class LossBreakdown:
    init_topic_mle: float
    init_story_mle: float
    init_story_rl: float
    init_story_com: float
    init_total: float
    iterations: list[IterationLosses]
    iter_total: float
    grand_total: float
    baseline_loss: float = 0.0
    mean_reward: float = 0.0


@dataclass
class ForwardResult:
    breakdown: LossBreakdown
    loss: Tensor                 # grand total (graph scalar)
    objective: Tensor            # grand total + baseline regression
    visual: VisualContext
    topic_memories: list[TopicMemory]
    joints: list[JointContext]
    stories: list[StoryOutput]   # teacher-forced pass per stage


class Vocabs(NamedTuple):
    topic: Vocabulary
    story: Vocabulary


def _story_stage(joint: JointContext, album: Album, params: ModelParams,
                 cfg: TrainConfig, vocabs: Vocabs, baseline: RLBaseline,
                 reward_fn, rng, targets):
    """Teacher-forced story pass plus, when alpha > 0, a sampled pass."""
    tf = decode_story(joint, params, "teacher_forced", targets=targets,
                      max_len=cfg.max_story_len)
    mle = tf.mle_loss
    if cfg.alpha > 0.0:
        rl_terms = []
        base_terms = []
        reward_sum = 0.0
        for _ in range(cfg.rl_samples):
            sampled = decode_story(joint, params, "sample", rng=rng,
                                   max_len=cfg.max_story_len)
            rl = story_rl_loss(sampled, album.sentences, joint.rows, baseline,
                               reward_fn, vocabs.story, album.id)
            rl_terms.append(scale(rl.policy_loss, 1.0 / cfg.rl_samples))
            base_terms.append(scale(rl.baseline_loss, 1.0 / cfg.rl_samples))
            reward_sum += rl.mean_reward
        rl_node = add_n(rl_terms)
        base_node = add_n(base_terms)
        mean_reward = reward_sum / cfg.rl_samples
    else:
        zero = Tensor(np.zeros((), dtype=params.dtype))
        rl_node, base_node, mean_reward = zero, zero, 0.0
    com = combine(mle, rl_node, cfg.alpha)
    return tf, mle, rl_node, com, base_node, mean_reward


def forward_pass(album: Album, params: ModelParams, cfg: TrainConfig,
                 vocabs: Vocabs, rng: np.random.Generator | None = None,
                 reward_fn: Callable | None = None) -> ForwardResult:
    """One album through the full pipeline; returns losses and artifacts."""
    if cfg.alpha > 0.0:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        if reward_fn is None:
            reward_fn = make_reward_fn(cfg.reward)
    baseline = RLBaseline(params)
    topic_target = vocabs.topic.encode(album.title[:cfg.max_title_len])
    story_targets = [
        vocabs.story.encode(s[:cfg.max_story_len - 1]) for s in album.sentences
    ]

    visual = encode_album(album.features, params)
    mem = decode_topic(init_state(TopicInput("initial", visual.matrix), params),
                       params, "teacher_forced", target=topic_target,
                       max_len=cfg.max_title_len)
    joint = joint_contexts(visual, mem, params, cfg.coatt_scope)
    tf_story, mle, rl_node, com, base_node, mean_reward = _story_stage(
        joint, album, params, cfg, vocabs, baseline, reward_fn, rng, story_targets)
    init_total = combine(mem.loss, com, cfg.lambda1)

    memories = [mem]
    joints = [joint]
    stories = [tf_story]
    iter_rows: list[IterationLosses] = []
    iter_nodes = []
    base_nodes = [base_node]
    reward_acc = [mean_reward] if cfg.alpha > 0.0 else []
    prev_story = tf_story
    for _ in range(cfg.n_iter):
        mem_n = decode_topic(
            init_state(TopicInput("iterative", prev_story.s_iter), params),
            params, "teacher_forced", target=topic_target,
            max_len=cfg.max_title_len)
        joint_n = joint_contexts(visual, mem_n, params, cfg.coatt_scope)
        tf_n, mle_n, rl_n, com_n, base_n, reward_n = _story_stage(
            joint_n, album, params, cfg, vocabs, baseline, reward_fn, rng,
            story_targets)
        total_n = combine(mem_n.loss, com_n, cfg.lambda2)
        iter_nodes.append(total_n)
        base_nodes.append(base_n)
        if cfg.alpha > 0.0:
            reward_acc.append(reward_n)
        iter_rows.append(IterationLosses(
            topic_mle=mem_n.loss.item(), story_mle=mle_n.item(),
            story_rl=rl_n.item(), story_com=com_n.item(), total=total_n.item()))
        memories.append(mem_n)
        joints.append(joint_n)
        stories.append(tf_n)
        prev_story = tf_n

    if cfg.n_iter == 0:
        # an empty refinement sum must not down-weight learning
        iter_node = Tensor(np.zeros((), dtype=params.dtype))
        grand = init_total
    else:
        iter_node = add_n(iter_nodes)
        grand = combine(iter_node, init_total, cfg.beta)

    baseline_total = add_n(base_nodes)
    objective = add_n([grand, baseline_total]) if cfg.alpha > 0.0 else grand

    breakdown = LossBreakdown(
        init_topic_mle=mem.loss.item(),
        init_story_mle=mle.item(),
        init_story_rl=rl_node.item(),
        init_story_com=com.item(),
        init_total=init_total.item(),
        iterations=iter_rows,
        iter_total=iter_node.item(),
        grand_total=grand.item(),
        baseline_loss=baseline_total.item(),
        mean_reward=(sum(reward_acc) / len(reward_acc)) if reward_acc else 0.0,
    )
    return ForwardResult(breakdown=breakdown, loss=grand, objective=objective,
                         visual=visual, topic_memories=memories, joints=joints,
                         stories=stories)


def forward_no_iu(album: Album, params: ModelParams, cfg: TrainConfig,
                  vocabs: Vocabs, rng: np.random.Generator | None = None,
                  reward_fn: Callable | None = None) -> ForwardResult:
    """The ablated pathway without refinement: encode, one topic pass, one
    story pass, initial loss only. Kept as an independent composition so the
    n_iter = 0 reduction can be checked against it."""
    if cfg.alpha > 0.0 and rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.alpha > 0.0 and reward_fn is None:
        reward_fn = make_reward_fn(cfg.reward)
    baseline = RLBaseline(params)
    topic_target = vocabs.topic.encode(album.title[:cfg.max_title_len])
    story_targets = [
        vocabs.story.encode(s[:cfg.max_story_len - 1]) for s in album.sentences
    ]
    visual = encode_album(album.features, params)
    mem = decode_topic(init_state(TopicInput("initial", visual.matrix), params),
                       params, "teacher_forced", target=topic_target,
                       max_len=cfg.max_title_len)
    joint = joint_contexts(visual, mem, params, cfg.coatt_scope)
    tf_story, mle, rl_node, com, base_node, mean_reward = _story_stage(
        joint, album, params, cfg, vocabs, baseline, reward_fn, rng, story_targets)
    total = combine(mem.loss, com, cfg.lambda1)
    objective = add_n([total, base_node]) if cfg.alpha > 0.0 else total
    breakdown = LossBreakdown(
        init_topic_mle=mem.loss.item(), init_story_mle=mle.item(),
        init_story_rl=rl_node.item(), init_story_com=com.item(),
        init_total=total.item(), iterations=[], iter_total=0.0,
        grand_total=total.item(), baseline_loss=base_node.item(),
        mean_reward=mean_reward)
    return ForwardResult(breakdown=breakdown, loss=total, objective=objective,
                         visual=visual, topic_memories=[mem], joints=[joint],
                         stories=[tf_story])


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class GenerationResult:
    album_id: str
    topic: list[str]
    story: list[list[str]]
    attn_v: list[np.ndarray]
    attn_t: list[np.ndarray]


def _decode_joint_story(joint: JointContext, params: ModelParams,
                        cfg: TrainConfig, use_beam: bool):
    """Decode each sub-story; returns token lists and the last hidden rows."""
    tokens = []
    rows = []
    if use_beam:
        for j_i in joint.rows:
            hyp = beam_search(j_i, params, beam_size=cfg.beam_size,
                              max_len=cfg.max_story_len)
            tokens.append(hyp.tokens)
            rows.append(hyp.hidden)
    else:
        out = decode_story(joint, params, "greedy", max_len=cfg.max_story_len)
        tokens = out.sub_stories
        rows = out.last_hidden_rows
    return tokens, stack_rows(rows)


def generate_album(album: Album, params: ModelParams, cfg: TrainConfig,
                   vocabs: Vocabs, use_beam: bool = True) -> GenerationResult:
    """Full inference: greedy topic, story decode, then n_iter refinements
    seeded from the generated story's last hidden states."""
    with no_grad():
        visual = encode_album(album.features, params)
        mem = decode_topic(init_state(TopicInput("initial", visual.matrix), params),
                           params, "greedy", max_len=cfg.max_title_len)
        joint = joint_contexts(visual, mem, params, cfg.coatt_scope)
        story_tokens, s_iter = _decode_joint_story(joint, params, cfg, use_beam)
        for _ in range(cfg.n_iter):
            mem = decode_topic(init_state(TopicInput("iterative", s_iter), params),
                               params, "greedy", max_len=cfg.max_title_len)
            joint = joint_contexts(visual, mem, params, cfg.coatt_scope)
            story_tokens, s_iter = _decode_joint_story(joint, params, cfg, use_beam)
    return GenerationResult(
        album_id=album.id,
        topic=vocabs.topic.decode(mem.tokens),
        story=[vocabs.story.decode(t) for t in story_tokens],
        attn_v=joint.attn_v,
        attn_t=joint.attn_t,
    )


def generate_no_iu(album: Album, params: ModelParams, cfg: TrainConfig,
                   vocabs: Vocabs, use_beam: bool = True) -> GenerationResult:
    """Inference for the ablated pathway: no refinement rounds."""
    with no_grad():
        visual = encode_album(album.features, params)
        mem = decode_topic(init_state(TopicInput("initial", visual.matrix), params),
                           params, "greedy", max_len=cfg.max_title_len)
        joint = joint_contexts(visual, mem, params, cfg.coatt_scope)
        story_tokens, _ = _decode_joint_story(joint, params, cfg, use_beam)
    return GenerationResult(
        album_id=album.id,
        topic=vocabs.topic.decode(mem.tokens),
        story=[vocabs.story.decode(t) for t in story_tokens],
        attn_v=joint.attn_v,
        attn_t=joint.attn_t,
    )


# ---------------------------------------------------------------------------
# training schedule
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    best_val_meteor: float
    stage_best: dict[int, float] = field(default_factory=dict)


def validate_meteor(albums: list[Album], params: ModelParams, cfg: TrainConfig,
                    vocabs: Vocabs) -> float:
    """Mean METEOR-lite of greedily decoded stories (sub-stories concatenated)."""
    if not albums:
        return float("nan")
    total = 0.0
    for album in albums:
        gen = generate_album(album, params, cfg, vocabs, use_beam=False)
        hyp = [tok for sent in gen.story for tok in sent]
        ref = [tok for sent in album.sentences for tok in sent]
        total += metrics.meteor_lite(hyp, ref)
    return total / len(albums)


def _epoch_batches(albums: list[Album], batch_size: int,
                   rng: np.random.Generator) -> list[list[Album]]:
    order = rng.permutation(len(albums))
    shuffled = [albums[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _check_finite(value: float, stage: int, epoch: int, album_id: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at stage {stage}, epoch {epoch}, album {album_id}: {value}"
        )


def topic_warmup_loss(album: Album, params: ModelParams, cfg: TrainConfig,
                      vocabs: Vocabs) -> Tensor:
    visual = encode_album(album.features, params)
    mem = decode_topic(init_state(TopicInput("initial", visual.matrix), params),
                       params, "teacher_forced",
                       target=vocabs.topic.encode(album.title[:cfg.max_title_len]),
                       max_len=cfg.max_title_len)
    return mem.loss


def train(corpus: Corpus, cfg: TrainConfig, log: Callable | None = None) -> TrainResult:
    """Three stages: topic-only warm-up, joint MLE, joint policy-gradient
    fine-tuning. After each joint epoch the validation set is decoded
    greedily and the checkpoint with the best METEOR-lite is kept."""
    cfg.validate()
    if not corpus.train:
        raise DataError("train: empty train split")
    for album in corpus.train + corpus.val + corpus.test:
        album.validate(cfg.images_per_album)
    vocabs = Vocabs(topic=corpus.topic_vocab, story=corpus.story_vocab)
    dims = ModelDims(hidden=cfg.hidden, feature_dim=corpus.feature_dim,
                     images_per_album=cfg.images_per_album,
                     topic_vocab=len(corpus.topic_vocab),
                     story_vocab=len(corpus.story_vocab))
    params = init_params(dims, np.random.default_rng(cfg.seed), cfg.precision_mode)
    history: list[dict] = []
    stage_best: dict[int, float] = {}

    def emit(row: dict) -> None:
        history.append(row)
        if log is not None:
            log(" ".join(f"{k}={v}" for k, v in row.items()))

    # stage 1: pre-train the topic generator alone
    mle_cfg = replace(cfg, alpha=0.0)
    opt = AdamState(params, learning_rate=cfg.lr_warm)
    for epoch in range(cfg.epochs_topic):
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        losses = []
        for batch in _epoch_batches(corpus.train, cfg.batch_size, rng):
            for album in batch:
                loss = topic_warmup_loss(album, params, mle_cfg, vocabs)
                _check_finite(loss.item(), 1, epoch, album.id)
                losses.append(loss.item())
                scale(loss, 1.0 / len(batch)).backward()
            adam_step(params, opt)
        emit({"stage": 1, "epoch": epoch, "topic_mle": round(np.mean(losses), 6)})

    # stage 2: joint MLE
    best_params = None
    best_val = -np.inf
    opt = AdamState(params, learning_rate=cfg.lr_warm)
    for epoch in range(cfg.epochs_joint):
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        rows = []
        for batch in _epoch_batches(corpus.train, cfg.batch_size, rng):
            for album in batch:
                result = forward_pass(album, params, mle_cfg, vocabs)
                _check_finite(result.breakdown.grand_total, 2, epoch, album.id)
                rows.append(result.breakdown)
                scale(result.objective, 1.0 / len(batch)).backward()
            adam_step(params, opt)
        val = validate_meteor(corpus.val, params, cfg, vocabs)
        if corpus.val and val > best_val:
            best_val = val
            best_params = params.copy()
        emit({"stage": 2, "epoch": epoch,
              "grand_total": round(np.mean([r.grand_total for r in rows]), 6),
              "init_story_mle": round(np.mean([r.init_story_mle for r in rows]), 6),
              "init_topic_mle": round(np.mean([r.init_topic_mle for r in rows]), 6),
              "val_meteor": round(val, 6) if np.isfinite(val) else ""})
    if best_params is not None:
        params = best_params.copy()
    stage_best[2] = best_val if np.isfinite(best_val) else float("nan")

    # stage 3: joint fine-tuning with the policy-gradient branch enabled
    if cfg.epochs_rl > 0 and cfg.alpha > 0.0:
        reward_fn = make_reward_fn(cfg.reward, corpus)
        opt = AdamState(params, learning_rate=cfg.lr_ft)
        best_val3 = validate_meteor(corpus.val, params, cfg, vocabs)
        best_params = params.copy()
        for epoch in range(cfg.epochs_rl):
            rng = np.random.default_rng([cfg.seed, 3, epoch])
            rows = []
            for b_idx, batch in enumerate(_epoch_batches(corpus.train, cfg.batch_size, rng)):
                for a_idx, album in enumerate(batch):
                    album_rng = np.random.default_rng(
                        [cfg.seed, 3, epoch, b_idx, a_idx])
                    result = forward_pass(album, params, cfg, vocabs,
                                          rng=album_rng, reward_fn=reward_fn)
                    _check_finite(result.breakdown.grand_total, 3, epoch, album.id)
                    rows.append(result.breakdown)
                    scale(result.objective, 1.0 / len(batch)).backward()
                clip_grad_norm(params, cfg.grad_clip)
                adam_step(params, opt)
            val = validate_meteor(corpus.val, params, cfg, vocabs)
            if corpus.val and val > best_val3:
                best_val3 = val
                best_params = params.copy()
            emit({"stage": 3, "epoch": epoch,
                  "grand_total": round(np.mean([r.grand_total for r in rows]), 6),
                  "mean_reward": round(np.mean([r.mean_reward for r in rows]), 6),
                  "val_meteor": round(val, 6) if np.isfinite(val) else ""})
        if corpus.val:
            params = best_params
        stage_best[3] = best_val3 if np.isfinite(best_val3) else float("nan")

    final_val = stage_best.get(3, stage_best.get(2, float("nan")))
    return TrainResult(params=params, history=history,
                       best_val_meteor=final_val, stage_best=stage_best)


def history_csv(history: list[dict]) -> str:
    """Metric history as CSV with the union of row keys as columns."""
    columns: list[str] = []
    for row in history:
        for key in row:
            if key not in columns:
                columns.append(key)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns)
    writer.writeheader()
    for row in history:
        writer.writerow(row)
    return buf.getvalue()
