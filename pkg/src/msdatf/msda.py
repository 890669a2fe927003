"""Moment-matching multi-source adaptation with classifier-pair training.

Each training iteration runs three steps:

1. generator and all heads minimise source cross-entropy plus ``lam`` times
   the moment distance between source groups and the target;
2. with the generator fixed, each head pair minimises source cross-entropy
   while maximising its disagreement on target samples;
3. with the heads fixed, the generator minimises that disagreement.

Target predictions average the softmax outputs of every head.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, DimensionError
from .generator import Generator, GeneratorConfig
from .numerics import Adam, Tensor, concat, cross_entropy, l2norm, linear, no_grad, softmax

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 0.5
    P: int = 2
    K: int = 4
    batch_size: int = 32
    lr: float = 1e-4
    epochs: int = 350
    step3_repeats: int = 4
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lam < 0:
            raise ArgumentError("lam must be >= 0")
        if self.P < 1:
            raise ArgumentError("P must be >= 1")
        if self.K < 1:
            raise ArgumentError("K must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ArgumentError("batch_size must be >= 1 and epochs >= 0")
        if self.step3_repeats < 1:
            raise ArgumentError("step3_repeats must be >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "extra"}


@dataclass
class DomainBatch:
    x: np.ndarray
    y: np.ndarray | None = None
    domain_id: str = ""

    def __post_init__(self):
        if len(self.x) < 1:
            raise ArgumentError(f"domain {self.domain_id!r} batch is empty")
        if self.y is not None and len(self.y) != len(self.x):
            raise DimensionError("labels and inputs differ in length")


# ---------------------------------------------------------------- losses


def moment(x, p):
    """Per-feature mean of ``x**p`` over the batch axis."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if p < 1:
        raise ArgumentError("moment order must be >= 1")
    return (x if p == 1 else x ** p).mean(axis=0)


def pair_coefficient(K):
    """``2! (K-2)! / K!``, i.e. one over the number of source pairs."""
    if K < 2:
        raise ArgumentError("pair coefficient needs K >= 2")
    return math.factorial(2) * math.factorial(K - 2) / math.factorial(K)


def moment_distance(sources, target, P, allow_single_source=False):
    """Sum over orders 1..P of the mean source-target moment gap plus the
    pair-averaged source-source gap (L2 norms of moment differences).

    ``allow_single_source`` permits K=1, where the source-source sum is empty.
    """
    K = len(sources)
    if K < 2 and not (allow_single_source and K == 1):
        raise ArgumentError(f"moment distance needs at least 2 source domains, got {K}")
    dims = {s.shape[1] for s in sources} | {target.shape[1]}
    if len(dims) != 1:
        raise DimensionError(f"domains disagree on feature dimension: {sorted(dims)}")
    total = Tensor(0.0)
    for p in range(1, P + 1):
        ms = [moment(s, p) for s in sources]
        mt = moment(target, p)
        st = l2norm(ms[0] - mt)
        for m in ms[1:]:
            st = st + l2norm(m - mt)
        total = total + st * (1.0 / K)
        if K >= 2:
            ss = None
            for i in range(K - 1):
                for j in range(i + 1, K):
                    term = l2norm(ms[i] - ms[j])
                    ss = term if ss is None else ss + term
            total = total + ss * pair_coefficient(K)
    return total


def discrepancy(pa, pb):
    """Mean absolute difference of two heads' class probabilities."""
    pa = pa if isinstance(pa, Tensor) else Tensor(pa)
    pb = pb if isinstance(pb, Tensor) else Tensor(pb)
    if pa.shape != pb.shape:
        raise DimensionError(f"discrepancy shapes differ: {pa.shape} vs {pb.shape}")
    return (pa - pb).abs().mean()


# ----------------------------------------------------------------- model


class MSDAModel:
    """Feature generator plus classifier heads.

    ``paired`` models carry two heads (``a`` and ``b``) per source domain;
    unpaired ones a single head per domain.
    """

    def __init__(self, gen_config: GeneratorConfig | None = None, n_domains=4, n_classes=3,
                 paired=True, seed=0):
        self.generator = Generator(gen_config, seed=[seed, 0])
        self.n_domains = n_domains
        self.n_classes = n_classes
        self.paired = paired
        rng = np.random.default_rng([seed, 3])
        D = self.generator.config.embed_dim
        bound = math.sqrt(6.0 / D)
        self.heads = {}
        for i in range(n_domains):
            for side in self.sides:
                self.heads[f"head.{i}.{side}.weight"] = Tensor(
                    rng.uniform(-bound, bound, (D, n_classes)), requires_grad=True)
                self.heads[f"head.{i}.{side}.bias"] = Tensor(np.zeros(n_classes), requires_grad=True)
        self.params = {**self.generator.params, **self.heads}
        self.rng_state = None

    @property
    def sides(self):
        return ("a", "b") if self.paired else ("a",)

    @property
    def config(self):
        return self.generator.config

    @property
    def generator_names(self):
        return list(self.generator.params)

    @property
    def head_names(self):
        return list(self.heads)

    def head_probs(self, emb, i, side, frozen=False):
        w = self.heads[f"head.{i}.{side}.weight"]
        b = self.heads[f"head.{i}.{side}.bias"]
        if frozen:
            w, b = w.detach(), b.detach()
        return softmax(linear(emb, w, b), axis=-1)

    def embed(self, x, train=False, rng=None, update_stats=True, bn_train=None):
        return self.generator(x, train=train, rng=rng, update_stats=update_stats, bn_train=bn_train)

    def named_tensors(self):
        """Parameters and batch-norm buffers as plain arrays."""
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.generator.buffers())
        return out

    def load_named_tensors(self, tensors):
        for name, t in self.params.items():
            t.data = np.array(tensors[name], dtype=np.float64).reshape(t.shape)
        self.generator.load_buffers(tensors)


def _source_ce(model, embs, ys):
    loss = None
    for i, (e, y) in enumerate(zip(embs, ys)):
        for side in model.sides:
            term = cross_entropy(model.head_probs(e, i, side), y)
            loss = term if loss is None else loss + term
    return loss


def _target_discrepancy(model, emb_t, frozen=False):
    total = None
    for i in range(model.n_domains):
        d = discrepancy(model.head_probs(emb_t, i, "a", frozen), model.head_probs(emb_t, i, "b", frozen))
        total = d if total is None else total + d
    return total


def _split(emb, sizes):
    out, start = [], 0
    for n in sizes:
        out.append(emb[start:start + n])
        start += n
    return out


def _check_sources(sources, target):
    for s in sources:
        if s.y is None:
            raise ArgumentError(f"source domain {s.domain_id!r} has no labels")
    if target is None or len(target.x) == 0:
        raise ArgumentError("a non-empty target batch is required")


def step1(model, opt, sources, target, config: TrainConfig, rng, allow_single_source=False):
    """Joint supervised + moment-matching update of generator and heads.

    Sources and target go through the generator as one batch, so batch norm
    sees a single set of statistics.
    """
    _check_sources(sources, target)
    sizes = [len(s.x) for s in sources] + [len(target.x)]
    emb = model.embed(np.concatenate([s.x for s in sources] + [target.x]), train=True, rng=rng)
    *embs, emb_t = _split(emb, sizes)
    ce = _source_ce(model, embs, [s.y for s in sources])
    md = moment_distance(embs, emb_t, config.P, allow_single_source=allow_single_source)
    loss = ce + md * config.lam
    opt.zero_grad()
    loss.backward()
    opt.step()
    return {"loss": loss.item(), "ce": ce.item(), "md": md.item()}


def step2(model, opt, sources, target, config: TrainConfig, rng):
    """Heads only: source CE minus target discrepancy. The generator is untouched.

    The generator sees the same concatenated batch as in ``step1`` and
    normalizes with its batch statistics, but leaves the running statistics
    alone.
    """
    _check_sources(sources, target)
    sizes = [len(s.x) for s in sources] + [len(target.x)]
    with no_grad():
        emb = model.embed(np.concatenate([s.x for s in sources] + [target.x]), train=True, rng=rng,
                          update_stats=False)
    *embs, emb_t = _split(emb.detach(), sizes)
    ce = _source_ce(model, embs, [s.y for s in sources])
    disc = _target_discrepancy(model, emb_t)
    loss = ce - disc
    opt.zero_grad()
    loss.backward()
    opt.step(model.head_names)
    return {"loss": loss.item(), "ce": ce.item(), "disc": disc.item()}


def step3(model, opt, target, config: TrainConfig, rng, repeats=None, sources=None):
    """Generator only: minimise summed target discrepancy ``repeats`` times.

    Batch norm runs on batch statistics (running ones are not updated). When
    ``sources`` are given they are normalized together with the target, as in
    ``step1``, and only the target rows enter the loss. Running statistics
    would let the generator lower the discrepancy by rescaling conv weights,
    a change that train-mode normalization hides from ``step1``.
    """
    repeats = config.step3_repeats if repeats is None else repeats
    if repeats < 1:
        raise ArgumentError(f"step3 repeats must be >= 1, got {repeats}")
    if target is None or len(target.x) == 0:
        raise ArgumentError("a non-empty target batch is required")
    context = [s.x for s in sources or []]
    n_ctx = sum(len(x) for x in context)
    x = np.concatenate(context + [target.x]) if context else target.x
    vals = []
    for _ in range(repeats):
        emb = model.embed(x, train=True, rng=rng, update_stats=False)
        emb_t = emb[n_ctx:] if n_ctx else emb
        disc = _target_discrepancy(model, emb_t, frozen=True)
        opt.zero_grad()
        disc.backward()
        opt.step(model.generator_names)
        vals.append(disc.item())
    return {"disc": float(np.mean(vals))}


def predict_proba(model, x, batch_size=256):
    """Eval-mode class probabilities averaged uniformly over every head."""
    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            emb = model.embed(x[start:start + batch_size], train=False)
            probs = [model.head_probs(emb, i, side).data
                     for i in range(model.n_domains) for side in model.sides]
            out.append(np.mean(probs, axis=0))
    if not out:
        return np.zeros((0, model.n_classes))
    return np.concatenate(out)


def predict_target(model, x, batch_size=256):
    """Averaged probabilities and argmax labels (ties go to the lowest class)."""
    probs = predict_proba(model, x, batch_size)
    return probs, probs.argmax(axis=1)


def embeddings(model, x, batch_size=256):
    with no_grad():
        return np.concatenate([model.embed(x[s:s + batch_size], train=False).data
                               for s in range(0, len(x), batch_size)]) if len(x) else \
            np.zeros((0, model.config.embed_dim))


# -------------------------------------------------------------- training loops


class _Cycler:
    """Endless reshuffled index stream over one domain."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k):
        idx = []
        while len(idx) < k:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            step = min(k - len(idx), self.n - self.pos)
            idx.extend(self.order[self.pos:self.pos + step])
            self.pos += step
        return np.asarray(idx)


def make_rngs(seed):
    """(data-order rng, dropout rng); dropout uses the counter-based Philox generator."""
    data = np.random.default_rng([seed, 1])
    drop = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    return data, drop


def rng_state(*rngs):
    """JSON-friendly bit-generator states, e.g. for storing in a checkpoint."""
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, np.generic):
            return v.item()
        return v
    return [plain(r.bit_generator.state) for r in rngs]


def _eval_trace(model, sources, target_x, config, target_y=None, allow_single_source=False):
    embs = [Tensor(embeddings(model, s.x)) for s in sources]
    emb_t = Tensor(embeddings(model, target_x))
    with no_grad():
        md = moment_distance(embs, emb_t, config.P, allow_single_source=allow_single_source).item()
        disc = (_target_discrepancy(model, emb_t).item() / model.n_domains) if model.paired else 0.0
    acc = None
    if target_y is not None:
        _, pred = predict_target(model, target_x)
        acc = float(np.mean(pred == target_y))
    return md, disc, acc


def train_msda(sources, target_x, gen_config=None, config: TrainConfig | None = None,
               target_y=None, model=None, allow_single_source=False, callback=None):
    """Full three-step adaptation loop.

    ``sources`` is a list of ``(x, y)`` per source domain; ``target_x`` holds
    unlabeled target inputs (``target_y`` is only used for the history trace).
    Returns ``(model, history)`` where each history row has ``epoch``,
    ``ce_loss``, ``md``, ``discrepancy`` and ``target_accuracy``. ``md`` and
    ``discrepancy`` are measured on all data in eval mode at the epoch end.
    """
    config = config or TrainConfig()
    domains = [DomainBatch(np.asarray(x), np.asarray(y), f"source-{i}") for i, (x, y) in enumerate(sources)]
    target = DomainBatch(np.asarray(target_x), None, "target")
    K = len(domains)
    if K < 2 and not (allow_single_source and K == 1):
        raise ArgumentError(f"need at least 2 source domains, got {K}")
    if model is None:
        model = MSDAModel(gen_config, n_domains=K, paired=True, seed=config.seed)
    opt = Adam(model.params, lr=config.lr)
    data_rng, drop_rng = make_rngs(config.seed)
    cyclers = [_Cycler(len(d.x), data_rng) for d in domains]
    tcycler = _Cycler(len(target.x), data_rng)
    B = config.batch_size
    iters = math.ceil(max([len(d.x) for d in domains] + [len(target.x)]) / B)
    history = []
    for epoch in range(1, config.epochs + 1):
        ces = []
        for _ in range(iters):
            batches = []
            for d, c in zip(domains, cyclers):
                idx = c.take(min(B, len(d.x)))
                batches.append(DomainBatch(d.x[idx], d.y[idx], d.domain_id))
            tb = DomainBatch(target.x[tcycler.take(min(B, len(target.x)))], None, "target")
            r1 = step1(model, opt, batches, tb, config, drop_rng, allow_single_source)
            step2(model, opt, batches, tb, config, drop_rng)
            step3(model, opt, tb, config, drop_rng, sources=batches)
            ces.append(r1["ce"])
        md, disc, acc = _eval_trace(model, domains, target.x, config, target_y, allow_single_source)
        row = {"epoch": epoch, "ce_loss": float(np.mean(ces)), "md": md, "discrepancy": disc,
               "target_accuracy": acc}
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
        if callback is not None:
            callback(model, row)
    model.rng_state = rng_state(data_rng, drop_rng)
    return model, history


def train_supervised(x, y, gen_config=None, config: TrainConfig | None = None,
                     target_x=None, target_y=None, model=None, callback=None):
    """Plain cross-entropy training of the generator and one head (no adaptation)."""
    config = config or TrainConfig()
    x, y = np.asarray(x), np.asarray(y)
    if len(x) == 0:
        raise ArgumentError("no training samples")
    if model is None:
        model = MSDAModel(gen_config, n_domains=1, paired=False, seed=config.seed)
    opt = Adam(model.params, lr=config.lr)
    data_rng, drop_rng = make_rngs(config.seed)
    cycler = _Cycler(len(x), data_rng)
    B = min(config.batch_size, len(x))
    iters = math.ceil(len(x) / B)
    history = []
    for epoch in range(1, config.epochs + 1):
        ces = []
        for _ in range(iters):
            idx = cycler.take(B)
            emb = model.embed(x[idx], train=True, rng=drop_rng)
            ce = _source_ce(model, [emb], [y[idx]])
            opt.zero_grad()
            ce.backward()
            opt.step()
            ces.append(ce.item())
        acc = None
        if target_x is not None and target_y is not None:
            _, pred = predict_target(model, target_x)
            acc = float(np.mean(pred == target_y))
        row = {"epoch": epoch, "ce_loss": float(np.mean(ces)), "md": None, "discrepancy": None,
               "target_accuracy": acc}
        history.append(row)
        if callback is not None:
            callback(model, row)
    model.rng_state = rng_state(data_rng, drop_rng)
    return model, history


def with_overrides(config, **kw):
    return replace(config, **kw)
