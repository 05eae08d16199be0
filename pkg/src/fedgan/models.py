"""Toy GAN model zoo and the per-player gradient estimators.

Both players are written as *ascent* on their own objective, so a local
update is always ``params + rate * grad``:

* discriminator objective: ``mean log D(x) + mean log(1 - D(G(z)))``
* generator objective: ``mean log D(G(z))`` (non-saturating) or
  ``-mean log(1 - D(G(z)))`` (minimax)

``D`` is the sigmoid of the discriminator network's scalar output.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .autodiff import (Activation, ConcatCond, Linear, Net, ParamVector, Record,
                       apply_net, gradients)


class LossKind(str, Enum):
    MINIMAX = "minimax"
    NON_SATURATING = "non_saturating"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.NON_SATURATING

    @classmethod
    def parse(cls, value) -> "LossSpec":
        if isinstance(value, LossSpec):
            return value
        return cls(LossKind(str(value)))


@dataclass(frozen=True)
class GanModel:
    name: str
    generator: Net
    discriminator: Net
    latent_dim: int
    latent_law: str = "uniform"  # "uniform" on [-1, 1]^d, or "normal"
    label_dim: int = 0
    output: str = "linear"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.generator.in_dim != self.latent_dim:
            raise ValueError("generator input must equal latent_dim")
        if self.generator.out_dim != self.discriminator.in_dim:
            raise ValueError("generator output does not feed the discriminator")
        if self.discriminator.cond_dim != self.label_dim or self.generator.cond_dim != self.label_dim:
            raise ValueError("label width disagrees with the networks' conditioning inputs")

    @property
    def conditional(self) -> bool:
        return self.label_dim > 0

    @property
    def data_dim(self) -> int:
        return self.generator.out_dim

    def sample_latent(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.latent_law == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.latent_dim))
        if self.latent_law == "normal":
            return rng.standard_normal((n, self.latent_dim))
        raise ValueError(f"unknown latent law {self.latent_law!r}")

    def latent_from_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube onto the latent law (inverse-CDF transform)."""
        u = np.asarray(u, dtype=np.float64)
        if self.latent_law == "uniform":
            return 2.0 * u - 1.0
        if self.latent_law == "normal":
            return ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
        raise ValueError(f"unknown latent law {self.latent_law!r}")

    def init_params(self, rng: np.random.Generator, scale: float = 0.05,
                    scheme: str = "uniform") -> tuple[ParamVector, ParamVector]:
        """Biases zero; weights uniform(-scale, scale), or with ``scheme="glorot"``
        uniform(-lim, lim) with ``lim = scale * sqrt(6 / (fan_in + fan_out))``.
        Returns (params_d, params_g)."""
        if scheme not in ("uniform", "glorot"):
            raise ValueError(f"unknown init scheme {scheme!r}")
        return (_init(self.discriminator, rng, scale, scheme == "glorot"),
                _init(self.generator, rng, scale, scheme == "glorot"))

    def generate(self, params_g: ParamVector, z: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
        rec = Record()
        cond = None if labels is None else rec.constant(labels)
        out = apply_net(self.generator, params_g, rec.constant(z), rec, "g", cond)
        return rec.values[out]

    def discriminate(self, params_d: ParamVector, x: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
        """Discriminator logits for ``x``."""
        rec = Record()
        cond = None if labels is None else rec.constant(labels)
        out = apply_net(self.discriminator, params_d, rec.constant(x), rec, "d", cond)
        return rec.values[out]


def _init(net: Net, rng: np.random.Generator, scale: float, glorot: bool) -> ParamVector:
    pv = ParamVector.zeros(net.layout)
    for name, t in pv.tensors().items():
        if name.endswith(".weight"):
            lim = scale * np.sqrt(6.0 / (t.shape[0] + t.shape[1])) if glorot else scale
            t[...] = rng.uniform(-lim, lim, size=t.shape)
    return pv


def make_analytic2d() -> GanModel:
    """D(x) = psi * x**2 (a logit), G(z) = theta * z, z ~ U[-1, 1]."""
    gen = Net((Linear(1, 1, bias=False),), in_dim=1)
    disc = Net((Activation("square"), Linear(1, 1, bias=False)), in_dim=1)
    return GanModel("analytic2d", gen, disc, latent_dim=1, latent_law="uniform")


def analytic2d_params(theta: float, psi: float) -> tuple[ParamVector, ParamVector]:
    m = make_analytic2d()
    d = ParamVector(np.array([psi], dtype=np.float64), m.discriminator.layout)
    g = ParamVector(np.array([theta], dtype=np.float64), m.generator.layout)
    return d, g


def _mlp(n_in: int, hidden: int, depth: int, n_out: int, act: Activation,
         cond: int = 0, out_act: Activation | None = None) -> Net:
    layers: list = []
    width = n_in
    if cond:
        layers.append(ConcatCond(cond))
        width += cond
    for _ in range(depth):
        layers += [Linear(width, hidden), act]
        width = hidden
    layers.append(Linear(width, n_out))
    if out_act is not None:
        layers.append(out_act)
    return Net(tuple(layers), in_dim=n_in)


def make_mlp_gan(hidden: int = 64, depth: int = 2, data_dim: int = 2, latent_dim: int = 2,
                 latent_law: str = "normal") -> GanModel:
    if hidden < 1 or depth < 1:
        raise ValueError("hidden and depth must be >= 1")
    gen = _mlp(latent_dim, hidden, depth, data_dim, Activation("relu"))
    disc = _mlp(data_dim, hidden, depth, 1, Activation("leaky_relu", 0.2))
    return GanModel(f"mlp{hidden}x{depth}", gen, disc, latent_dim=latent_dim, latent_law=latent_law)


def make_conditional_gan(label_dim: int, profile_len: int = 24, hidden: int = 64,
                         latent_dim: int = 8, depth: int = 2) -> GanModel:
    """Label-concatenated MLP pair; generator ends in a sigmoid since profiles live in [0, 1]."""
    if label_dim < 1 or profile_len < 2:
        raise ValueError("label_dim >= 1 and profile_len >= 2 required")
    gen = _mlp(latent_dim, hidden, depth, profile_len, Activation("relu"), cond=label_dim,
               out_act=Activation("sigmoid"))
    disc = _mlp(profile_len, hidden, depth, 1, Activation("leaky_relu", 0.2), cond=label_dim)
    return GanModel(f"cgan{hidden}x{depth}", gen, disc, latent_dim=latent_dim,
                    latent_law="normal", label_dim=label_dim, output="sigmoid")


# --------------------------------------------------------------------------
# Gradients


@dataclass(frozen=True)
class GradPair:
    d_grad: ParamVector
    g_grad: ParamVector
    batch_size_used: int
    objective_d: float = float("nan")
    objective_g: float = float("nan")


def gan_grads(model: GanModel, loss: LossSpec, params_d: ParamVector, params_g: ParamVector,
              real: np.ndarray, z: np.ndarray, labels: np.ndarray | None = None,
              fake_labels: np.ndarray | None = None) -> GradPair:
    """Ascent gradients of both objectives at the same (params_d, params_g).

    ``labels`` condition the real batch, ``fake_labels`` the generated one
    (defaults to ``labels``).
    """
    real = np.asarray(real, dtype=np.float64)
    if real.ndim == 1:
        real = real[:, None]
    if len(real) == 0:
        raise ValueError("empty real batch")
    if model.conditional:
        if labels is None:
            raise ValueError("conditional model needs labels")
        fake_labels = labels if fake_labels is None else fake_labels
    kind = LossSpec.parse(loss).kind

    # generator path: z -> G -> D, differentiated w.r.t. both nets
    rec = Record()
    cf = rec.constant(fake_labels) if model.conditional else None
    fake = apply_net(model.generator, params_g, rec.constant(z), rec, "g", cf)
    logit_fake = apply_net(model.discriminator, params_d, fake, rec, "d", cf)
    if kind is LossKind.NON_SATURATING:
        # maximize mean log D(G(z)) == minimize bce(l, 1)
        g_obj = rec.scale(rec.bce_logits(logit_fake, 1.0), -1.0)
    else:
        # maximize -mean log(1 - D(G(z))) == bce(l, 0)
        g_obj = rec.bce_logits(logit_fake, 0.0)
    g_grad = gradients(rec, g_obj)["g"]

    # discriminator objective with the fake batch held fixed
    drec = Record()
    cr = drec.constant(labels) if model.conditional else None
    cf2 = drec.constant(fake_labels) if model.conditional else None
    lr = apply_net(model.discriminator, params_d, drec.constant(real), drec, "d", cr)
    lf = apply_net(model.discriminator, params_d, drec.constant(rec.values[fake]), drec, "d", cf2)
    d_obj = drec.scale(drec.add(drec.bce_logits(lr, 1.0), drec.bce_logits(lf, 0.0)), -1.0)
    d_grad = gradients(drec, d_obj)["d"]
    return GradPair(d_grad, g_grad, len(real), float(drec.values[d_obj]), float(rec.values[g_obj]))


def stochastic_grads(model: GanModel, loss: LossSpec, params_d: ParamVector, params_g: ParamVector,
                     real_batch: np.ndarray, rng: np.random.Generator,
                     labels: np.ndarray | None = None) -> GradPair:
    """Mini-batch estimate: draws a latent batch the same size as ``real_batch``."""
    n = len(real_batch)
    if n == 0:
        raise ValueError("empty real batch")
    z = model.sample_latent(rng, n)
    return gan_grads(model, loss, params_d, params_g, real_batch, z, labels)


class TrueGradOracle:
    """Deterministic stand-in for the exact gradients (g, h).

    Expectations over data use the whole dataset; expectations over the
    latent law use one fixed set of ``n_latent`` scrambled Sobol points
    pushed through the latent inverse CDF, so repeated calls at the same
    point agree bit for bit and the latent quadrature error decays close
    to ``1/n_latent`` rather than ``1/sqrt(n_latent)``.
    """

    def __init__(self, model: GanModel, loss: LossSpec, data: np.ndarray, n_latent: int = 2 ** 16,
                 seed: int = 0, labels: np.ndarray | None = None):
        if n_latent < 1024:
            raise ValueError("n_latent must be >= 1024")
        self.model = model
        self.loss = LossSpec.parse(loss)
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data[:, None]
        self.labels = labels
        rng = np.random.default_rng(seed)
        self.z = model.latent_from_unit(_sobol(model.latent_dim, n_latent, rng))
        self.fake_labels = None
        if model.conditional:
            if labels is None:
                raise ValueError("conditional model needs labels")
            self.fake_labels = labels[rng.integers(0, len(labels), size=n_latent)]

    def __call__(self, params_d: ParamVector, params_g: ParamVector) -> GradPair:
        return gan_grads(self.model, self.loss, params_d, params_g, self.data, self.z,
                         self.labels, self.fake_labels)


def _sobol(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    sampler = qmc.Sobol(dim, scramble=True, seed=rng)
    m = int(np.ceil(np.log2(n)))
    return sampler.random_base2(m)[:n]


def true_grads(model: GanModel, loss: LossSpec, params_d: ParamVector, params_g: ParamVector,
               full_dataset: np.ndarray, n_latent: int = 2 ** 16, rng_fixed: int = 0,
               labels: np.ndarray | None = None) -> GradPair:
    return TrueGradOracle(model, loss, full_dataset, n_latent, rng_fixed, labels)(params_d, params_g)
