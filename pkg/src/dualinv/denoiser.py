"""Noise predictors behind a uniform contract.

Two implementations are provided:

* ``GaussianMixtureDenoiser`` — an analytic oracle. For data drawn from
  an isotropic Gaussian mixture, the posterior-mean noise predictor has
  a closed form, and so does its (symmetric) Jacobian. Class labels act
  as conditioning by restricting the mixture to labelled components.
* ``MlpDenoiser`` — a small tanh network trained with the standard
  denoising objective, gradients supplied by the autodiff tape.

Every denoiser exposes ``predict`` (the noise estimate), ``predict_vjp``
(vector-Jacobian product against the latent, used by the fixed-point
refinement gradient), and supports classifier-free-guidance composition
through ``cfg_predict``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .errors import ContractError, ParameterError, TrainingError
from .latent import Latent, check_same_shape
from .schedule import NoiseSchedule

VAR_GUARD = 1e-12  # lower clamp on (1 - abar_t) at the data end
T_EMBED_FREQS = 8  # sinusoidal frequencies for the network's timestep input


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conditioning:
    kind: str  # "label" | "embedding" | "null"
    label: int = None
    embedding: np.ndarray = None

    def __post_init__(self):
        if self.kind == "label":
            if self.label is None or self.embedding is not None:
                raise ParameterError("label conditioning carries exactly a label")
        elif self.kind == "embedding":
            if self.embedding is None or self.label is not None:
                raise ParameterError("embedding conditioning carries exactly an embedding")
            object.__setattr__(self, "embedding",
                               np.asarray(self.embedding, dtype=np.float64))
        elif self.kind == "null":
            if self.label is not None or self.embedding is not None:
                raise ParameterError("null conditioning carries no payload")
        else:
            raise ParameterError(f"unknown conditioning kind '{self.kind}'")


NULL = Conditioning(kind="null")


def label_cond(label: int) -> Conditioning:
    return Conditioning(kind="label", label=int(label))


# ---------------------------------------------------------------------------
# analytic Gaussian-mixture oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianMixtureDenoiser:
    """Exact posterior-mean noise predictor for isotropic-mixture data.

    ``means`` has shape (n_components, dim); ``labels`` optionally tags
    each component with an integer class so that label conditioning
    restricts prediction to that class's components.
    """

    schedule: NoiseSchedule
    weights: np.ndarray
    means: np.ndarray
    sigma0: float
    labels: np.ndarray = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        if w.ndim != 1 or w.shape[0] != m.shape[0]:
            raise ParameterError("weights and means must agree on component count")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError("weights must be positive and sum to 1")
        if self.sigma0 <= 0.0:
            raise ParameterError(f"sigma0 must be positive, got {self.sigma0}")
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (m.shape[0],):
                raise ParameterError("labels must tag every component")
            object.__setattr__(self, "labels", lab)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _components(self, c: Conditioning):
        if c.kind == "null":
            return self.weights, self.means
        if c.kind == "label":
            if self.labels is None:
                raise ContractError("mixture has no component labels")
            mask = self.labels == c.label
            if not mask.any():
                raise ContractError(f"no mixture component carries label {c.label}")
            w = self.weights[mask]
            return w / w.sum(), self.means[mask]
        raise ContractError("mixture oracle supports null and label conditioning only")

    def _posterior(self, z: np.ndarray, t: int, c: Conditioning):
        """Responsibilities and shared marginal variance at timestep t."""
        w, means = self._components(c)
        abar = self.schedule.alpha_bar[t]
        one_m = max(1.0 - abar, VAR_GUARD)
        s2 = abar * self.sigma0 ** 2 + one_m
        sq = np.sum((z[None, :] - np.sqrt(abar) * means) ** 2, axis=1)
        logits = np.log(w) - sq / (2.0 * s2)
        logits -= logits.max()
        r = np.exp(logits)
        r /= r.sum()
        return r, means, abar, one_m, s2

    def predict(self, z: Latent, t: int, c: Conditioning = NULL) -> Latent:
        if not 0 <= t <= self.schedule.T:
            raise IndexError(f"timestep {t} outside [0, {self.schedule.T}]")
        zf = z.flat
        r, means, abar, one_m, s2 = self._posterior(zf, t, c)
        mix_mean = r @ means
        eps = np.sqrt(one_m) / s2 * (zf - np.sqrt(abar) * mix_mean)
        return z.with_values(eps)

    def predict_vjp(self, z: Latent, t: int, c: Conditioning, u: Latent) -> Latent:
        """u^T (d eps / d z), from the closed-form (symmetric) Jacobian."""
        check_same_shape(z, u, "latent and vjp vector")
        zf, uf = z.flat, u.flat
        r, means, abar, one_m, s2 = self._posterior(zf, t, c)
        mix_mean = r @ means
        # Jacobian = sqrt(1-abar)/s2 * (I - abar/s2 * Cov_r(mu))
        cov_u = (r * (means @ uf)) @ means - mix_mean * (mix_mean @ uf)
        out = np.sqrt(one_m) / s2 * (uf - (abar / s2) * cov_u)
        return u.with_values(out)

    def sample(self, rng: np.random.Generator, label: int = None) -> np.ndarray:
        """One draw of clean data from the mixture (or a labelled subset)."""
        c = NULL if label is None else label_cond(label)
        w, means = self._components(c)
        k = rng.choice(len(w), p=w)
        return means[k] + self.sigma0 * rng.standard_normal(self.dim)


# ---------------------------------------------------------------------------
# small trainable network
# ---------------------------------------------------------------------------

def timestep_embedding(t: int, T: int) -> np.ndarray:
    tau = t / T
    freqs = 2.0 ** np.arange(T_EMBED_FREQS)
    ang = 2.0 * np.pi * freqs * tau
    return np.concatenate([np.sin(ang), np.cos(ang)])


T_EMBED_DIM = 2 * T_EMBED_FREQS


@dataclass(frozen=True)
class MlpDenoiser:
    """Tanh MLP over (latent, timestep embedding, conditioning encoding)."""

    layer_sizes: tuple
    params: np.ndarray
    T: int
    n_labels: int = 0
    cond_dim: int = 0
    latent_shape: tuple = field(default=None)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        p = np.asarray(self.params, dtype=np.float64)
        object.__setattr__(self, "params", p)
        expected = sum(sizes[i + 1] * sizes[i] + sizes[i + 1]
                       for i in range(len(sizes) - 1))
        if p.shape != (expected,):
            raise ParameterError(
                f"parameter count {p.size} does not match layer sizes (need {expected})"
            )
        if not np.all(np.isfinite(p)):
            raise ParameterError("parameters contain non-finite values")
        latent_size = sizes[-1]
        if sizes[0] != latent_size + T_EMBED_DIM + self.cond_dim:
            raise ParameterError("input width must be latent + timestep + conditioning dims")
        if self.latent_shape is None:
            object.__setattr__(self, "latent_shape", (latent_size,))

    @property
    def latent_size(self) -> int:
        return self.layer_sizes[-1]

    def unpack(self, params=None):
        """(W, b) pairs in layer order, views into the flat parameter array."""
        p = self.params if params is None else params
        layers = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = p[offset: offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = p[offset: offset + n_out]
            offset += n_out
            layers.append((w, b))
        return layers

    def encode_conditioning(self, c: Conditioning) -> np.ndarray:
        if c.kind == "null":
            return np.zeros(self.cond_dim)
        if c.kind == "label":
            if not 0 <= c.label < self.n_labels:
                raise ContractError(f"label {c.label} outside the trained range")
            enc = np.zeros(self.cond_dim)
            enc[c.label] = 1.0
            return enc
        if c.kind == "embedding":
            if c.embedding.size != self.cond_dim:
                raise ContractError("embedding width does not match the network")
            return c.embedding
        raise ContractError(f"unsupported conditioning kind '{c.kind}'")

    def _input(self, z: Latent, t: int, c: Conditioning) -> np.ndarray:
        return np.concatenate([z.flat, timestep_embedding(t, self.T),
                               self.encode_conditioning(c)])

    def predict(self, z: Latent, t: int, c: Conditioning = NULL) -> Latent:
        h = self._input(z, t, c)
        layers = self.unpack()
        for i, (w, b) in enumerate(layers):
            h = w @ h + b
            if i < len(layers) - 1:
                h = np.tanh(h)
        return z.with_values(h)

    def forward_on_tape(self, tape: autodiff.Tape, z_node, t: int, c: Conditioning,
                        param_nodes=None):
        """Forward pass with tape nodes; z and optionally parameters are leaves."""
        extras = tape.constant(np.concatenate([timestep_embedding(t, self.T),
                                               self.encode_conditioning(c)]))
        h = tape.concat([z_node, extras])
        if param_nodes is None:
            param_nodes = [(tape.constant(w), tape.constant(b))
                           for w, b in self.unpack()]
        for i, (w, b) in enumerate(param_nodes):
            h = tape.add(tape.matvec(w, h), b)
            if i < len(param_nodes) - 1:
                h = tape.tanh(h)
        return h

    def predict_vjp(self, z: Latent, t: int, c: Conditioning, u: Latent) -> Latent:
        """u^T (d eps/d z), closed form.

        Hand-rolled backward pass over the tanh layers; the tape engine
        checks this in the test suite but is too slow for the inner loop
        of an inversion sweep.
        """
        check_same_shape(z, u, "latent and vjp vector")
        h = self._input(z, t, c)
        layers = self.unpack()
        activations = []
        for i, (w, b) in enumerate(layers):
            h = w @ h + b
            if i < len(layers) - 1:
                h = np.tanh(h)
                activations.append(h)
        g = u.flat
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            if i < len(layers) - 1:
                g = g * (1.0 - activations[i] * activations[i])
            g = w.T @ g
        return u.with_values(g[: z.size])


def init_mlp_denoiser(latent_size: int, hidden=(32,), T: int = 50,
                      n_labels: int = 0, cond_dim: int = None,
                      seed: int = 0) -> MlpDenoiser:
    """Randomly initialised network with Xavier-scaled weights."""
    if cond_dim is None:
        cond_dim = n_labels
    sizes = (latent_size + T_EMBED_DIM + cond_dim, *hidden, latent_size)
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / (n_in + n_out))
        chunks.append(scale * rng.standard_normal(n_out * n_in))
        chunks.append(np.zeros(n_out))
    return MlpDenoiser(layer_sizes=sizes, params=np.concatenate(chunks),
                       T=T, n_labels=n_labels, cond_dim=cond_dim)


def train_mlp_denoiser(dataset, schedule: NoiseSchedule, epochs: int,
                       learning_rate: float, seed: int,
                       denoiser: MlpDenoiser = None, hidden=(32,)):
    """SGD on the denoising objective; deterministic under a fixed seed.

    ``dataset`` is a sequence of (Latent, Conditioning) pairs. Returns
    the trained network and the per-epoch mean-loss trace.
    """
    if not dataset:
        raise ParameterError("dataset must be nonempty")
    z0_first = dataset[0][0]
    if denoiser is None:
        n_labels = 1 + max((c.label for _, c in dataset if c.kind == "label"),
                           default=-1)
        denoiser = init_mlp_denoiser(z0_first.size, hidden=hidden, T=schedule.T,
                                     n_labels=n_labels, seed=seed)
    params = denoiser.params.copy()
    rng = np.random.default_rng(seed)
    trace = []
    d = z0_first.size
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for idx in order:
            z0, c = dataset[idx]
            t = int(rng.integers(1, schedule.T + 1))
            eps = rng.standard_normal(d)
            abar = schedule.alpha_bar[t]
            z_t = z0.with_values(
                (np.sqrt(abar) * z0.flat + np.sqrt(1.0 - abar) * eps).reshape(z0.shape))

            model = MlpDenoiser(denoiser.layer_sizes, params, denoiser.T,
                                denoiser.n_labels, denoiser.cond_dim,
                                denoiser.latent_shape)
            tape = autodiff.Tape()
            param_nodes = [(tape.leaf(w), tape.leaf(b)) for w, b in model.unpack(params)]
            pred = model.forward_on_tape(tape, tape.constant(z_t.flat), t, c,
                                         param_nodes)
            loss = tape.scale(tape.sumsq(tape.sub(pred, tape.constant(eps))), 1.0 / d)
            if not np.isfinite(loss.value):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            grads = autodiff.grad(loss)
            flat_grad = np.concatenate(
                [np.concatenate([grads[w].ravel(), grads[b].ravel()])
                 for w, b in param_nodes])
            params = params - learning_rate * flat_grad
            if not np.all(np.isfinite(params)):
                raise TrainingError(f"parameters diverged at epoch {epoch}", epoch=epoch)
            losses.append(float(loss.value))
        trace.append(float(np.mean(losses)))
    trained = MlpDenoiser(denoiser.layer_sizes, params, denoiser.T,
                          denoiser.n_labels, denoiser.cond_dim,
                          denoiser.latent_shape)
    return trained, trace


# ---------------------------------------------------------------------------
# uniform entry points and guidance composition
# ---------------------------------------------------------------------------

def predict(denoiser, z: Latent, t: int, c: Conditioning = NULL) -> Latent:
    return denoiser.predict(z, t, c)


def predict_vjp(denoiser, z: Latent, t: int, c: Conditioning, u: Latent) -> Latent:
    """u^T (d eps/d z); falls back to central finite differences."""
    if hasattr(denoiser, "predict_vjp"):
        return denoiser.predict_vjp(z, t, c, u)
    return finite_diff_vjp(denoiser, z, t, c, u)


def finite_diff_vjp(denoiser, z: Latent, t: int, c: Conditioning, u: Latent,
                    step: float = 1e-5) -> Latent:
    """Central-difference fallback for denoisers without exact derivatives."""
    check_same_shape(z, u, "latent and vjp vector")
    uf = u.flat
    out = np.zeros(z.size)
    zf = z.flat
    for i in range(z.size):
        zp, zm = zf.copy(), zf.copy()
        zp[i] += step
        zm[i] -= step
        fp = denoiser.predict(z.with_values(zp.reshape(z.shape)), t, c).flat
        fm = denoiser.predict(z.with_values(zm.reshape(z.shape)), t, c).flat
        out[i] = uf @ (fp - fm) / (2.0 * step)
    return u.with_values(out)


def cfg_predict(denoiser, z: Latent, t: int, c: Conditioning,
                scale: float = 1.0) -> Latent:
    """Classifier-free guidance: (1-scale) * eps_null + scale * eps_c, exactly."""
    eps_c = denoiser.predict(z, t, c)
    if scale == 1.0:
        return eps_c
    eps_null = denoiser.predict(z, t, NULL)
    return z.with_values((1.0 - scale) * eps_null.values + scale * eps_c.values)


def cfg_predict_vjp(denoiser, z: Latent, t: int, c: Conditioning, u: Latent,
                    scale: float = 1.0) -> Latent:
    vjp_c = predict_vjp(denoiser, z, t, c, u)
    if scale == 1.0:
        return vjp_c
    vjp_null = predict_vjp(denoiser, z, t, NULL, u)
    return u.with_values((1.0 - scale) * vjp_null.values + scale * vjp_c.values)


# ---------------------------------------------------------------------------
# parameter file format (documented in the README)
# ---------------------------------------------------------------------------

MLP_FORMAT = "dualinv-mlp"
MLP_FORMAT_VERSION = 1


def save_mlp_denoiser(denoiser: MlpDenoiser, path):
    payload = {
        "format": MLP_FORMAT,
        "version": MLP_FORMAT_VERSION,
        "layer_sizes": list(denoiser.layer_sizes),
        "T": denoiser.T,
        "n_labels": denoiser.n_labels,
        "cond_dim": denoiser.cond_dim,
        "latent_shape": list(denoiser.latent_shape),
        "params": denoiser.params.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_mlp_denoiser(path) -> MlpDenoiser:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != MLP_FORMAT or payload.get("version") != MLP_FORMAT_VERSION:
        raise ParameterError(f"{path} is not a v{MLP_FORMAT_VERSION} {MLP_FORMAT} file")
    return MlpDenoiser(
        layer_sizes=tuple(payload["layer_sizes"]),
        params=np.asarray(payload["params"]),
        T=payload["T"],
        n_labels=payload["n_labels"],
        cond_dim=payload["cond_dim"],
        latent_shape=tuple(payload["latent_shape"]),
    )
