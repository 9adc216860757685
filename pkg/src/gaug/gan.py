"""Conditional-generator contract, truncated latent sampling, best-of-N
generation, and a desk-scale adversarial trainer for embedding-conditioned
generation.

The trainer pits a small generator MLP against a discriminator MLP over
flattened samples concatenated with the conditioning embedding. Gradients
are hand-derived (plain numpy backprop) so they can be validated against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Instance, dataset_labels
from .embeddings import EmbeddingStore, extract_embeddings
from .errors import ConditioningMismatch, NumericalFailure, ValidationError
from .knn import NeighborhoodIndex, build_neighborhoods

# ---------------------------------------------------------------------------
# Latent sampling


@dataclass(frozen=True)
class TruncationPolicy:
    """Latent truncation: resample each coordinate until |z_i| <= sigma.

    ``sigma=None`` disables truncation (plain standard normal). Defaults used
    by the surrounding experiments are 0.8 for embedding-only conditioning and
    1.0 for the class-conditional variant.
    """

    sigma: float | None = 0.8

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def disabled(cls) -> "TruncationPolicy":
        return cls(sigma=None)


def sample_latent(d_z: int, policy: TruncationPolicy,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw one latent vector, truncated coordinate-wise when enabled."""
    if d_z < 1:
        raise ValidationError(f"latent dim must be >= 1, got {d_z}")
    z = rng.standard_normal(d_z)
    if policy.sigma is None:
        return z
    bad = np.abs(z) > policy.sigma
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > policy.sigma
    return z


# ---------------------------------------------------------------------------
# Adapter contracts


@dataclass(frozen=True)
class GeneratorAdapter:
    """Opaque conditional sampler: (z, h[, class]) -> C x H x W sample.

    ``generate_fn`` must be deterministic in its inputs; all randomness comes
    from the latent.
    """

    latent_dim: int
    conditioning_dim: int
    class_conditional: bool
    sample_shape: tuple[int, int, int]
    generate_fn: object

    def generate(self, z: np.ndarray, h: np.ndarray,
                 cls: int | None = None) -> np.ndarray:
        return generate(self, h, z, cls)


@dataclass(frozen=True)
class DiscriminatorAdapter:
    """Scores a (sample, conditioning) pair with a real logit."""

    score_fn: object

    def score(self, sample: np.ndarray, h: np.ndarray) -> float:
        return float(self.score_fn(sample, h))


def generate(adapter: GeneratorAdapter, h: np.ndarray, z: np.ndarray,
             cls: int | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if z.size != adapter.latent_dim:
        raise ConditioningMismatch(
            f"latent dim {z.size} != adapter latent_dim {adapter.latent_dim}")
    if h.size != adapter.conditioning_dim:
        raise ConditioningMismatch(
            f"conditioning dim {h.size} != adapter dim {adapter.conditioning_dim}")
    if adapter.class_conditional and cls is None:
        raise ConditioningMismatch("class-conditional adapter needs a class label")
    if not adapter.class_conditional and cls is not None:
        raise ConditioningMismatch("class label supplied to an unconditional adapter")
    out = adapter.generate_fn(z, h, cls) if adapter.class_conditional \
        else adapter.generate_fn(z, h)
    out = np.asarray(out, dtype=np.float64)
    if out.shape != adapter.sample_shape:
        raise ConditioningMismatch(
            f"generator output shape {out.shape} != {adapter.sample_shape}")
    return out


def best_of_n(adapter: GeneratorAdapter, x_cond: Instance, n: int, extractor,
              policy: TruncationPolicy, rng: np.random.Generator,
              cls: int | None = None) -> np.ndarray:
    """Generate n candidates conditioned on x_cond and keep the one whose
    embedding is most cosine-similar to the conditioning embedding.

    Ties go to the lowest candidate index. Default n in the surrounding
    experiments is 20.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    h = np.asarray(extractor(x_cond.sample), dtype=np.float64).reshape(-1)
    h_unit = h / np.linalg.norm(h)
    best = None
    best_sim = -np.inf
    for _ in range(n):
        z = sample_latent(adapter.latent_dim, policy, rng)
        cand = generate(adapter, h, z, cls)
        e = np.asarray(extractor(cand), dtype=np.float64).reshape(-1)
        sim = float(e @ h_unit / np.linalg.norm(e))
        if best is None or sim > best_sim:
            best, best_sim = cand, sim
    return best


# ---------------------------------------------------------------------------
# Toy networks (numpy MLPs with hand-derived gradients)


class Mlp:
    """Fully-connected net, tanh hidden units, linear output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))
            self.biases.append(np.zeros(n_out))

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a B x n_in batch."""
        acts = [x]
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = acts[-1] @ w + b
            acts.append(np.tanh(pre) if li < len(self.weights) - 1 else pre)
        return acts[-1], acts

    def backward(self, acts, grad_out: np.ndarray):
        """Backprop; returns (weight grads, bias grads, grad wrt input)."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = grad_out
        for li in reversed(range(len(self.weights))):
            a_in = acts[li]
            gw[li] = a_in.T @ g
            gb[li] = g.sum(axis=0)
            g = g @ self.weights[li].T
            if li > 0:
                g = g * (1.0 - acts[li] ** 2)  # tanh'
        return gw, gb, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.weights + self.biases])

    def set_flat(self, vec: np.ndarray) -> None:
        off = 0
        for plist in (self.weights, self.biases):
            for i, p in enumerate(plist):
                plist[i] = vec[off : off + p.size].reshape(p.shape).copy()
                off += p.size


class Adam:
    def __init__(self, n_params: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Trainer


@dataclass
class ToyGanConfig:
    steps: int = 2000
    batch_size: int = 64
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    latent_dim: int = 4
    loss_variant: str = "non_saturating"  # or "saturating" (the literal game)
    seed: int = 0
    neighborhood_k: int = 10
    hidden_g: tuple[int, ...] = (32,)
    hidden_d: tuple[int, ...] = (32,)
    class_conditional: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValidationError("steps must be >= 0 and batch_size >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0 or self.latent_dim < 1:
            raise ValidationError("learning rates and latent_dim must be positive")
        if self.loss_variant not in ("saturating", "non_saturating"):
            raise ValidationError(f"unknown loss_variant {self.loss_variant!r}")


class ToyIcGan:
    """Embedding-conditioned adversarial trainer on flattened toy samples.

    Discriminator input is [sample, h(, onehot class)]; real samples are drawn
    uniformly from the conditioning instance's neighborhood. One discriminator
    update then one generator update per step, on the same minibatch.
    """

    def __init__(self, dataset: list[Instance], store: EmbeddingStore,
                 index: NeighborhoodIndex, cfg: ToyGanConfig):
        self.cfg = cfg
        self.store = store
        self.index = index
        ordered = sorted(dataset, key=lambda inst: inst.id)
        self.sample_shape = ordered[0].sample.shape
        self.samples = np.stack([inst.sample.reshape(-1) for inst in ordered])
        labels = dataset_labels(ordered)
        if cfg.class_conditional:
            if labels is None:
                raise ValidationError("class_conditional=True needs a labelled dataset")
            self.labels = labels
            self.n_classes = int(labels.max()) + 1
        else:
            self.labels = None
            self.n_classes = 0

        m = self.samples.shape[1]
        d = store.dim
        init_rng = np.random.default_rng(cfg.seed)
        self.gen = Mlp([cfg.latent_dim + d + self.n_classes, *cfg.hidden_g, m],
                       init_rng)
        self.disc = Mlp([m + d + self.n_classes, *cfg.hidden_d, 1], init_rng)
        self.opt_g = Adam(self.gen.get_flat().size, cfg.lr_g)
        self.opt_d = Adam(self.disc.get_flat().size, cfg.lr_d)
        self.loss_trace: list[tuple[float, float]] = []
        self.steps_done = 0

    # -- minibatch assembly --------------------------------------------------

    def sample_batch(self, rng: np.random.Generator):
        """(ids, x_real, h, z, onehot) for one step; x_real ~ A_i uniformly."""
        cfg = self.cfg
        ids = rng.integers(self.samples.shape[0], size=cfg.batch_size)
        nb = self.index.neighbors
        j = nb[ids, rng.integers(self.index.k, size=cfg.batch_size)]
        x_real = self.samples[j]
        h = self.store.embeddings[ids].astype(np.float64)
        policy = TruncationPolicy.disabled()  # no truncation during training
        z = np.stack([sample_latent(cfg.latent_dim, policy, rng)
                      for _ in range(cfg.batch_size)])
        onehot = None
        if cfg.class_conditional:
            onehot = np.zeros((cfg.batch_size, self.n_classes))
            onehot[np.arange(cfg.batch_size), self.labels[ids]] = 1.0
        return ids, x_real, h, z, onehot

    def _cond(self, h, onehot):
        return h if onehot is None else np.hstack([h, onehot])

    # -- losses and gradients ------------------------------------------------

    def d_loss_and_grad(self, x_real, h, z, onehot=None):
        """Discriminator loss and flat gradient; the generator is frozen."""
        cond = self._cond(h, onehot)
        b = x_real.shape[0]
        x_fake, _ = self.gen.forward(np.hstack([z, cond]))
        d_real, acts_r = self.disc.forward(np.hstack([x_real, cond]))
        d_fake, acts_f = self.disc.forward(np.hstack([x_fake, cond]))
        # -mean[ln s(d_real) + ln(1 - s(d_fake))] in stable softplus form
        loss = float(np.mean(_softplus(-d_real) + _softplus(d_fake)))
        g_real = (_sigmoid(d_real) - 1.0) / b
        g_fake = _sigmoid(d_fake) / b
        gw_r, gb_r, _ = self.disc.backward(acts_r, g_real)
        gw_f, gb_f, _ = self.disc.backward(acts_f, g_fake)
        grad = np.concatenate(
            [(a + c).ravel() for a, c in zip(gw_r + gb_r, gw_f + gb_f)])
        return loss, grad

    def g_loss_and_grad(self, h, z, onehot=None):
        """Generator loss (per cfg.loss_variant) and flat gradient."""
        cond = self._cond(h, onehot)
        b = h.shape[0]
        m = self.samples.shape[1]
        x_fake, acts_g = self.gen.forward(np.hstack([z, cond]))
        d_fake, acts_d = self.disc.forward(np.hstack([x_fake, cond]))
        if self.cfg.loss_variant == "saturating":
            # literal game: +mean ln(1 - s(d_fake))
            loss = float(np.mean(-_softplus(d_fake)))
            g_logit = -_sigmoid(d_fake) / b
        else:
            loss = float(np.mean(_softplus(-d_fake)))
            g_logit = (_sigmoid(d_fake) - 1.0) / b
        _, _, g_input = self.disc.backward(acts_d, g_logit)
        gw, gb, _ = self.gen.backward(acts_g, g_input[:, :m])
        grad = np.concatenate([p.ravel() for p in gw + gb])
        return loss, grad

    # -- stepping ------------------------------------------------------------

    def train_step(self, rng: np.random.Generator) -> tuple[float, float]:
        ids, x_real, h, z, onehot = self.sample_batch(rng)
        loss_d, grad_d = self.d_loss_and_grad(x_real, h, z, onehot)
        if not np.isfinite(loss_d):
            raise NumericalFailure(
                f"non-finite discriminator loss at step {self.steps_done}, "
                f"batch ids {ids[:8].tolist()}...")
        self.disc.set_flat(self.opt_d.step(self.disc.get_flat(), grad_d))
        loss_g, grad_g = self.g_loss_and_grad(h, z, onehot)
        if not np.isfinite(loss_g):
            raise NumericalFailure(
                f"non-finite generator loss at step {self.steps_done}, "
                f"batch ids {ids[:8].tolist()}...")
        self.gen.set_flat(self.opt_g.step(self.gen.get_flat(), grad_g))
        self.steps_done += 1
        self.loss_trace.append((loss_d, loss_g))
        return loss_d, loss_g

    def adapter(self) -> GeneratorAdapter:
        gen = self.gen
        shape = self.sample_shape
        n_classes = self.n_classes
        cc = self.cfg.class_conditional

        if cc:
            def generate_fn(z, h, cls):
                onehot = np.zeros(n_classes)
                onehot[cls] = 1.0
                out, _ = gen.forward(np.concatenate([z, h, onehot])[None, :])
                return out[0].reshape(shape)
        else:
            def generate_fn(z, h):
                out, _ = gen.forward(np.concatenate([z, h])[None, :])
                return out[0].reshape(shape)

        return GeneratorAdapter(
            latent_dim=self.cfg.latent_dim,
            conditioning_dim=self.store.dim,
            class_conditional=cc,
            sample_shape=shape,
            generate_fn=generate_fn,
        )


def train_icgan(dataset: list[Instance], cfg: ToyGanConfig,
                extractor=None, store: EmbeddingStore | None = None,
                index: NeighborhoodIndex | None = None) -> ToyIcGan:
    """Run cfg.steps adversarial steps; returns the trainer (its ``adapter()``
    wraps the trained generator, ``loss_trace`` holds the per-step losses)."""
    if store is None:
        if extractor is None:
            from .data import flatten_extractor
            extractor = flatten_extractor
        store = extract_embeddings(dataset, extractor)
    if index is None:
        index = build_neighborhoods(store, min(cfg.neighborhood_k, store.count))
    trainer = ToyIcGan(dataset, store, index, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    for _ in range(cfg.steps):
        trainer.train_step(rng)
    return trainer


# ---------------------------------------------------------------------------
# Checkpointing

CHECKPOINT_VERSION = 1


def save_checkpoint(trainer: ToyIcGan, path) -> None:
    cfg = trainer.cfg
    arrays = {}
    for name, net in (("gen", trainer.gen), ("disc", trainer.disc)):
        arrays[f"{name}_sizes"] = np.array(net.sizes, dtype=np.int64)
        arrays[f"{name}_flat"] = net.get_flat()
    np.savez(
        Path(path),
        version=np.int64(CHECKPOINT_VERSION),
        latent_dim=np.int64(cfg.latent_dim),
        conditioning_dim=np.int64(trainer.store.dim),
        class_conditional=np.int64(cfg.class_conditional),
        n_classes=np.int64(trainer.n_classes),
        seed=np.int64(cfg.seed),
        steps_done=np.int64(trainer.steps_done),
        sample_shape=np.array(trainer.sample_shape, dtype=np.int64),
        **arrays,
    )


def load_checkpoint(path, expect_conditioning_dim: int | None = None,
                    expect_class_conditional: bool | None = None,
                    ) -> GeneratorAdapter:
    with np.load(Path(path)) as ck:
        if int(ck["version"]) != CHECKPOINT_VERSION:
            raise ValidationError(
                f"checkpoint version {int(ck['version'])} unsupported")
        cond_dim = int(ck["conditioning_dim"])
        cc = bool(ck["class_conditional"])
        if expect_conditioning_dim is not None and cond_dim != expect_conditioning_dim:
            raise ValidationError(
                f"checkpoint conditioning_dim {cond_dim} != expected "
                f"{expect_conditioning_dim}")
        if expect_class_conditional is not None and cc != expect_class_conditional:
            raise ValidationError("checkpoint class-conditionality mismatch")
        gen = Mlp(ck["gen_sizes"].tolist(), np.random.default_rng(0))
        gen.set_flat(ck["gen_flat"])
        latent_dim = int(ck["latent_dim"])
        n_classes = int(ck["n_classes"])
        shape = tuple(int(s) for s in ck["sample_shape"])

    if cc:
        def generate_fn(z, h, cls):
            onehot = np.zeros(n_classes)
            onehot[cls] = 1.0
            out, _ = gen.forward(np.concatenate([z, h, onehot])[None, :])
            return out[0].reshape(shape)
    else:
        def generate_fn(z, h):
            out, _ = gen.forward(np.concatenate([z, h])[None, :])
            return out[0].reshape(shape)

    return GeneratorAdapter(latent_dim=latent_dim, conditioning_dim=cond_dim,
                            class_conditional=cc, sample_shape=shape,
                            generate_fn=generate_fn)
