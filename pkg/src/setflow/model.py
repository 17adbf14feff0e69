"""Set Flow: permutation-equivariant normalizing flow over sets with a global noise vector."""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .flows import DEFAULT_CLAMP, BatchNormBijection, RealNvpBlock, soft_clamp
from .numerics import GradTape, Mlp, gaussian_entropy_total, gaussian_logpdf, mlp_forward
from .numerics import tape as T


class NumericError(FloatingPointError):
    """Non-finite value produced inside the flow."""

    def __init__(self, message: str, stack: int | None = None):
        super().__init__(message)
        self.stack = stack


@dataclass
class ModelConfig:
    entity_dim: int = 2
    global_dim: int = 16
    n_stacks: int = 6
    hidden: tuple[int, ...] = (64, 64)
    deepset_features: int = 64
    deepset_out: int = 32
    pooling: str = "mean"
    clamp: float = DEFAULT_CLAMP
    batchnorm: bool = False
    n_couplings: int = 2
    activation: str = "relu"
    num_classes: int = 0
    label_dim: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if min(self.entity_dim, self.global_dim, self.n_stacks) < 1:
            raise ValueError("entity_dim, global_dim and n_stacks must be >= 1")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if (self.num_classes > 0) != (self.label_dim > 0):
            raise ValueError("num_classes and label_dim must both be set for a conditional model")

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EntitySet:
    """One set: ``entities[s, D]`` plus its global vector ``z[G]``."""

    entities: np.ndarray
    z: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.entities = np.asarray(self.entities, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.entities.ndim != 2 or self.entities.shape[0] < 1:
            raise ValueError("entities must be a non-empty [s, D] array")

    @property
    def size(self) -> int:
        return self.entities.shape[0]


@dataclass
class LogLikBreakdown:
    """Per-set log-likelihood terms. Fields are floats or arrays over a batch of sets."""

    entity_term: np.ndarray
    global_term: np.ndarray
    logdet_entities: np.ndarray
    logdet_global: np.ndarray
    set_size: int
    global_dim: int
    joint: np.ndarray = field(init=False)
    reported_set_ll: np.ndarray = field(init=False)
    per_entity_ll: np.ndarray = field(init=False)

    def __post_init__(self):
        self.joint = self.entity_term + self.global_term
        self.reported_set_ll = self.joint - gaussian_entropy_total(self.global_dim)
        self.per_entity_ll = self.reported_set_ll / self.set_size


class DeepSet:
    """``rho(pool_i phi(x_i))`` with mean or sum pooling over the entity axis."""

    def __init__(self, in_dim: int, features: int, out_dim: int, hidden,
                 rng: np.random.Generator, pooling: str = "mean", activation: str = "relu"):
        self.pooling = pooling
        self.phi = Mlp.build([in_dim, *hidden, features], rng, activation)
        self.rho = Mlp.build([features, *hidden, out_dim], rng, activation)

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {**self.phi.named_parameters(prefix + "phi."),
                **self.rho.named_parameters(prefix + "rho.")}


def deepset_pool(ds: DeepSet, entities, tape: GradTape | None = None):
    """Pool ``entities[..., s, D]`` into ``[..., S_out]``."""
    if T.value(entities).shape[-2] < 1:
        raise ValueError("cannot pool an empty set")
    feats = mlp_forward(ds.phi, entities, tape)
    pooled = T.sum(feats, axis=-2) if ds.pooling == "sum" else T.mean(feats, axis=-2)
    return mlp_forward(ds.rho, pooled, tape)


class SetCouplingStack:
    """One Set-Coupling layer acting on ``(z[G], X[s, D])``.

    1. every entity gets the same affine map, conditioned on ``z`` (and the
       label embedding ``h`` when present);
    2. entities pass independently through a shared Real NVP block (D > 1);
    3. ``z`` gets an affine map conditioned on a Deep Set of the new entities.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D, G, H = cfg.entity_dim, cfg.global_dim, cfg.label_dim
        self.entity_dim, self.global_dim, self.label_dim = D, G, H
        self.clamp = cfg.clamp
        hid = cfg.hidden
        self.s1 = Mlp.build([G + H, *hid, D], rng, cfg.activation, zero_init_last=True)
        self.t1 = Mlp.build([G + H, *hid, D], rng, cfg.activation, zero_init_last=True)
        self.inner = None
        if D > 1:
            self.inner = RealNvpBlock.build(D, hid, rng, cfg.n_couplings, clamp=cfg.clamp,
                                            batchnorm=cfg.batchnorm, activation=cfg.activation)
        self.pool = DeepSet(D, cfg.deepset_features, cfg.deepset_out, hid, rng,
                            cfg.pooling, cfg.activation)
        self.s2 = Mlp.build([cfg.deepset_out, *hid, G], rng, cfg.activation, zero_init_last=True)
        self.t2 = Mlp.build([cfg.deepset_out, *hid, G], rng, cfg.activation, zero_init_last=True)

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        out.update(self.s1.named_parameters(prefix + "s1."))
        out.update(self.t1.named_parameters(prefix + "t1."))
        if self.inner is not None:
            out.update(self.inner.named_parameters(prefix + "inner."))
        out.update(self.pool.named_parameters(prefix + "pool."))
        out.update(self.s2.named_parameters(prefix + "s2."))
        out.update(self.t2.named_parameters(prefix + "t2."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {} if self.inner is None else self.inner.named_buffers(prefix + "inner.")

    def _conditioner(self, z, h):
        if (h is None) != (self.label_dim == 0):
            raise ValueError("conditional/unconditional mismatch: "
                             f"stack expects label_dim={self.label_dim}, got "
                             f"{'no embedding' if h is None else 'an embedding'}")
        return z if h is None else T.concat([z, h], axis=-1)

    def _entity_map(self, z, h, tape):
        cond = self._conditioner(z, h)
        log_scale = soft_clamp(mlp_forward(self.s1, cond, tape), self.clamp)
        shift = mlp_forward(self.t1, cond, tape)
        return log_scale, shift

    def _global_map(self, X, tape):
        pooled = deepset_pool(self.pool, X, tape)
        log_scale = soft_clamp(mlp_forward(self.s2, pooled, tape), self.clamp)
        return log_scale, mlp_forward(self.t2, pooled, tape)

    def forward(self, z, X, h=None, tape=None):
        """Batched: ``z[B, G]``, ``X[B, s, D]``, ``h[B, H]``.

        Returns ``(z', X', logdet_entities[B], logdet_global[B])``.
        """
        B, s, D = T.value(X).shape
        a, b = self._entity_map(z, h, tape)
        a3, b3 = T.reshape(a, (B, 1, D)), T.reshape(b, (B, 1, D))
        Y = T.add(T.mul(X, T.exp(a3)), b3)
        ld_ent = T.mul(float(s), T.sum(a, axis=-1))
        if self.inner is not None:
            flat, ld_inner = self.inner.forward(T.reshape(Y, (B * s, D)), None, tape)
            Y = T.reshape(flat, (B, s, D))
            ld_ent = T.add(ld_ent, T.sum(T.reshape(ld_inner, (B, s)), axis=-1))
        c, d = self._global_map(Y, tape)
        z_new = T.add(T.mul(z, T.exp(c)), d)
        return z_new, Y, ld_ent, T.sum(c, axis=-1)

    def inverse(self, z_new, Y, h=None):
        B, s, D = Y.shape
        c, d = self._global_map(Y, None)
        z = (z_new - d) * np.exp(-c)
        if self.inner is not None:
            flat, _ = self.inner.inverse(Y.reshape(B * s, D))
            Y = flat.reshape(B, s, D)
        a, b = self._entity_map(z, h, None)
        X = (Y - b[:, None, :]) * np.exp(-a[:, None, :])
        return z, X


def _batched(z, X, h):
    """Promote a single set to a batch of one; report whether we did."""
    X = X if isinstance(X, T.Var) else np.asarray(X, dtype=np.float64)
    single = T.value(X).ndim == 2
    if single:
        X = T.reshape(X, (1, *T.value(X).shape))
        z = T.reshape(z, (1, -1))
        if h is not None:
            h = T.reshape(h, (1, -1))
    return z, X, h, single


class SetFlowModel:
    """K stacked Set-Coupling layers (no weight sharing) plus an optional label table."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int | None = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.config = cfg
        self.stacks = [SetCouplingStack(cfg, rng) for _ in range(cfg.n_stacks)]
        self.label_table = None
        if cfg.conditional:
            self.label_table = rng.standard_normal((cfg.num_classes, cfg.label_dim))

    @property
    def entity_dim(self) -> int:
        return self.config.entity_dim

    @property
    def global_dim(self) -> int:
        return self.config.global_dim

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for k, stack in enumerate(self.stacks):
            out.update(stack.named_parameters(f"stacks.{k}."))
        if self.label_table is not None:
            out["label_table"] = self.label_table
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, stack in enumerate(self.stacks):
            out.update(stack.named_buffers(f"stacks.{k}."))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def _batchnorms(self):
        for stack in self.stacks:
            if stack.inner is not None:
                for layer in stack.inner.layers:
                    if isinstance(layer, BatchNormBijection):
                        yield layer

    def train(self, mode: bool = True) -> "SetFlowModel":
        for bn in self._batchnorms():
            bn.training = mode
        return self

    def eval(self) -> "SetFlowModel":
        return self.train(False)

    @contextlib.contextmanager
    def frozen_statistics(self):
        """Within the block, training-mode batch norm does not touch running averages."""
        bns = list(self._batchnorms())
        saved = [bn.update_running for bn in bns]
        for bn in bns:
            bn.update_running = False
        try:
            yield self
        finally:
            for bn, flag in zip(bns, saved):
                bn.update_running = flag

    def label_embeddings(self, labels, tape=None):
        if self.label_table is None:
            if labels is not None:
                raise ValueError("labels supplied to an unconditional model")
            return None
        if labels is None:
            raise ValueError("conditional model needs labels")
        ids = np.asarray(labels, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.num_classes):
            raise ValueError(f"class id out of range [0, {self.config.num_classes})")
        table = tape.param(self.label_table) if tape is not None else self.label_table
        return T.index(table, ids)

    def encode(self, X, z0, labels=None, tape=None, h=None):
        """Run all stacks forward. Batched or single-set inputs.

        Returns ``(z_K, X_K, logdet_entities, logdet_global)``.
        """
        if h is None:
            h = self.label_embeddings(labels, tape)
        z, X, h, single = _batched(z0, X, h)
        ld_e = ld_g = 0.0
        for k, stack in enumerate(self.stacks):
            z, X, e, g = stack.forward(z, X, h, tape)
            ld_e, ld_g = T.add(ld_e, e), T.add(ld_g, g)
            if not (np.all(np.isfinite(T.value(X))) and np.all(np.isfinite(T.value(z)))):
                raise NumericError(f"non-finite values after stack {k}", stack=k)
        if single:
            return z[0], X[0], ld_e[0], ld_g[0]
        return z, X, ld_e, ld_g

    def decode(self, z, E, labels=None, h=None):
        """Exact inverse of :meth:`encode` (noise to data)."""
        if h is None:
            h = self.label_embeddings(labels)
        z, E, h, single = _batched(np.asarray(z, dtype=np.float64), E, h)
        for stack in reversed(self.stacks):
            z, E = stack.inverse(z, E, h)
        if single:
            return z[0], E[0]
        return z, E

    def log_joint_terms(self, X, z0, labels=None, tape=None, h=None):
        """``(entity_term, global_term, logdet_entities, logdet_global)`` of the joint log-density."""
        zK, XK, ld_e, ld_g = self.encode(X, z0, labels, tape, h)
        entity_term = T.add(T.sum(gaussian_logpdf(XK), axis=-1), ld_e)
        global_term = T.add(gaussian_logpdf(zK), ld_g)
        return entity_term, global_term, ld_e, ld_g


def model_loglik(model: SetFlowModel, X, z0, label=None) -> LogLikBreakdown:
    """Exact joint log-likelihood of sets ``X`` augmented with global vectors ``z0``."""
    X = np.asarray(X, dtype=np.float64)
    ent, glob, ld_e, ld_g = model.log_joint_terms(X, z0, label)
    return LogLikBreakdown(ent, glob, ld_e, ld_g, X.shape[-2], model.global_dim)


def embed_label(model: SetFlowModel, class_id: int, tape=None):
    if model.label_table is None:
        raise ValueError("model has no label embedding table")
    if not 0 <= int(class_id) < model.config.num_classes:
        raise ValueError(f"class id {class_id} out of range [0, {model.config.num_classes})")
    return model.label_embeddings(np.array([class_id]), tape)[0]


def model_sample(model: SetFlowModel, s: int, label=None, rng=None, return_noise=False):
    """Draw one set of ``s`` entities by inverting the flow from Gaussian noise."""
    if s < 1:
        raise ValueError("set size must be >= 1")
    rng = np.random.default_rng(rng)
    z = rng.standard_normal(model.global_dim)
    E = rng.standard_normal((s, model.entity_dim))
    labels = None if label is None else np.array([label])
    z0, X = model.decode(z[None], E[None], labels)
    out = EntitySet(X[0], z0[0], label)
    return (out, (z, E)) if return_noise else out


def sample_sets(model: SetFlowModel, n: int, s: int, label=None, rng=None):
    """``n`` sets of size ``s`` in one batch; returns ``(X[n, s, D], z0[n, G])``."""
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((n, model.global_dim))
    E = rng.standard_normal((n, s, model.entity_dim))
    labels = None if label is None else np.full(n, label)
    z0, X = model.decode(z, E, labels)
    return X, z0


def interpolate(model: SetFlowModel, a: EntitySet, b: EntitySet, t: float,
                label_policy: str | int = "mix") -> EntitySet:
    """Decode a convex mix of the noise of two sets.

    Entities are paired by index after encoding. For conditional models
    ``label_policy`` is ``"mix"`` (blend the two embeddings), ``"a"``, ``"b"``
    or an explicit class id.
    """
    if a.entities.shape != b.entities.shape:
        raise ValueError(f"set shapes differ: {a.entities.shape} vs {b.entities.shape}")
    ha = hb = h = None
    if model.label_table is not None:
        ha = embed_label(model, a.label)
        hb = embed_label(model, b.label)
        if label_policy == "mix":
            h = (1.0 - t) * ha + t * hb
        elif label_policy == "a":
            h = ha
        elif label_policy == "b":
            h = hb
        else:
            h = embed_label(model, int(label_policy))
    za, Ea, _, _ = model.encode(a.entities, a.z, h=ha)
    zb, Eb, _, _ = model.encode(b.entities, b.z, h=hb)
    z = (1.0 - t) * za + t * zb
    E = (1.0 - t) * Ea + t * Eb
    z0, X = model.decode(z, E, h=h)
    label = a.label if t < 0.5 else b.label
    return EntitySet(X, z0, label)


@dataclass
class EvalSummary:
    mean: float
    two_sem: float
    n_sets: int
    sem_defined: bool
    per_set: np.ndarray


def reported_per_entity_ll(model: SetFlowModel, test_sets: Iterable, seed: int = 42,
                           workers: int = 1, chunk: int = 256) -> EvalSummary:
    """Mean per-entity reported log-likelihood with a 2*SEM interval.

    ``test_sets`` yields ``[s, D]`` arrays, ``(X, label)`` pairs or
    :class:`EntitySet` (whose ``z`` is ignored). Global vectors are drawn in
    order from ``default_rng(seed)``, one per set.
    """
    sets, labels = [], []
    for item in test_sets:
        if isinstance(item, EntitySet):
            X, lab = item.entities, item.label
        elif isinstance(item, tuple):
            X, lab = item
        else:
            X, lab = item, None
        sets.append(np.asarray(X, dtype=np.float64))
        labels.append(lab)
    if not sets:
        raise ValueError("empty test collection")
    rng = np.random.default_rng(seed)
    zs = rng.standard_normal((len(sets), model.global_dim))

    groups: dict[tuple, list[int]] = {}
    for i, (X, lab) in enumerate(zip(sets, labels)):
        groups.setdefault((X.shape, lab), []).append(i)
    jobs = []
    for (shape, lab), idx in groups.items():
        for j in range(0, len(idx), chunk):
            jobs.append((idx[j:j + chunk], lab))

    def run(job):
        idx, lab = job
        X = np.stack([sets[i] for i in idx])
        lbl = None if lab is None else np.full(len(idx), lab)
        return idx, model_loglik(model, X, zs[idx], lbl).per_entity_ll

    per_set = np.empty(len(sets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for idx, vals in results:
        per_set[idx] = vals

    n = len(per_set)
    if n < 2:
        return EvalSummary(float(per_set.mean()), 0.0, n, False, per_set)
    sem = per_set.std(ddof=1) / np.sqrt(n)
    return EvalSummary(float(per_set.mean()), float(2.0 * sem), n, True, per_set)


stack_forward = SetCouplingStack.forward
stack_inverse = SetCouplingStack.inverse


def randomize_parameters(model, rng, scale: float = 0.5):
    """Overwrite every parameter in place with U(-scale, scale) draws (testing aid)."""
    rng = np.random.default_rng(rng)
    for p in model.named_parameters().values():
        p[...] = rng.uniform(-scale, scale, p.shape)
    return model

