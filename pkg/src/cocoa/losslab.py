"""Numerical verification of the training objectives at desk scale.

A tiny linear-softmax autoregressive scorer stands in for the language
model: logits are a single linear map of a fixed feature vector (last
token one-hot, bag-of-context counts, bias), so every gradient has a
closed form and every sequence distribution can be enumerated
exhaustively.

Verified here:
  * sequence log-probabilities sum per-token log-softmax terms and
    normalize over the sequence space;
  * the SFT objective is the batch-mean sequence NLL;
  * the preference objective  -log sigmoid(beta * (lp+ - lp-)) + alpha * (-lp+)
    evaluated in the numerically stable softplus form, with its
    monotonicity and shift-invariance properties;
  * analytic gradients of both objectives against central finite
    differences;
  * the chain-vs-independent gradient identity: training the two steps as
    one chain adds exactly the answer-loss gradient (the credit-assignment
    term) to the independent-training gradient, while with two separate
    parameter sets that term is zero on the first stage's parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

MAX_VOCAB = 8


class LossLabError(ValueError):
    pass


def _softplus(z: float) -> float:
    """ln(1 + e^z) without overflow for large |z|."""
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class ToyModel:
    """Linear-softmax autoregressive scorer over a tiny vocabulary.

    The feature map of a context is:
      [one-hot of the last token | per-token counts / context length | 1.0]
    so feature_dim = 2 * vocab_size + 1 and the parameter vector has
    vocab_size * feature_dim entries (the flattened logit matrix).
    """

    def __init__(self, theta: Sequence[float] | np.ndarray, vocab_size: int):
        if not 2 <= vocab_size <= MAX_VOCAB:
            raise LossLabError(f"vocab_size must be in [2, {MAX_VOCAB}], got {vocab_size}")
        self.vocab_size = vocab_size
        self.feature_dim = 2 * vocab_size + 1
        flat = np.asarray(theta, dtype=float).ravel()
        if flat.size != vocab_size * self.feature_dim:
            raise LossLabError(
                f"theta must have {vocab_size * self.feature_dim} entries, got {flat.size}"
            )
        self._weights = flat.reshape(vocab_size, self.feature_dim).copy()
        self._weights.setflags(write=False)

    @classmethod
    def zeros(cls, vocab_size: int) -> "ToyModel":
        return cls(np.zeros(vocab_size * (2 * vocab_size + 1)), vocab_size)

    @classmethod
    def random(cls, vocab_size: int, rng: np.random.Generator, scale: float = 0.5) -> "ToyModel":
        n = vocab_size * (2 * vocab_size + 1)
        return cls(rng.normal(0.0, scale, size=n), vocab_size)

    @property
    def theta(self) -> np.ndarray:
        return self._weights.ravel().copy()

    @property
    def param_count(self) -> int:
        return self.vocab_size * self.feature_dim

    def with_theta(self, theta: Sequence[float] | np.ndarray) -> "ToyModel":
        return ToyModel(theta, self.vocab_size)

    def _check_tokens(self, tokens: Sequence[int]) -> None:
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise LossLabError(f"token {t} out of vocabulary [0, {self.vocab_size})")

    def features(self, context: Sequence[int]) -> np.ndarray:
        self._check_tokens(context)
        v = self.vocab_size
        f = np.zeros(self.feature_dim)
        if context:
            f[context[-1]] = 1.0
            inv = 1.0 / len(context)
            for t in context:
                f[v + t] += inv
        f[-1] = 1.0
        return f

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        """Log-softmax over next-token logits; sums to one in probability."""
        z = self._weights @ self.features(context)
        zmax = z.max()
        return z - (zmax + math.log(np.exp(z - zmax).sum()))


@dataclass(frozen=True)
class SequenceScore:
    logprob: float
    per_token: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_token", tuple(float(t) for t in self.per_token))


def sequence_logprob(model: ToyModel, x: Sequence[int], y: Sequence[int]) -> SequenceScore:
    """Autoregressive log-probability of y conditioned on the context x."""
    model._check_tokens(x)
    model._check_tokens(y)
    context = list(x)
    per_token: list[float] = []
    for tok in y:
        per_token.append(float(model.log_probs(context)[tok]))
        context.append(tok)
    return SequenceScore(logprob=float(math.fsum(per_token)), per_token=tuple(per_token))


def sft_loss(scores: Sequence[SequenceScore]) -> float:
    """Batch mean of the sequence negative log-likelihoods."""
    if not scores:
        raise LossLabError("sft_loss needs at least one sequence score")
    return -math.fsum(s.logprob for s in scores) / len(scores)


def dpo_loss(logp_pos: float, logp_neg: float, beta: float, alpha: float) -> float:
    """Preference loss with the NLL regularizer on the chosen response.

    softplus(-beta * (logp_pos - logp_neg)) + alpha * (-logp_pos)
    """
    if beta <= 0:
        raise LossLabError(f"beta must be > 0, got {beta}")
    if alpha < 0:
        raise LossLabError(f"alpha must be >= 0, got {alpha}")
    if logp_pos > 0 or logp_neg > 0:
        raise LossLabError("log-probabilities must be <= 0")
    margin = logp_pos - logp_neg
    return _softplus(-beta * margin) + alpha * (-logp_pos)


# ---------------------------------------------------------------------------
# Analytic gradients
# ---------------------------------------------------------------------------

def _nll_gradient(model: ToyModel, x: Sequence[int], y: Sequence[int], out: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of -log p(y|x) w.r.t. the flat parameter vector.

    Per step the log-softmax gradient is (softmax - onehot(token)) outer
    features(context).
    """
    g = out if out is not None else np.zeros(model.param_count)
    context = list(x)
    for tok in y:
        f = model.features(context)
        p = np.exp(model.log_probs(context))
        delta = p.copy()
        delta[tok] -= 1.0
        g += np.outer(delta, f).ravel()
        context.append(tok)
    return g


def sft_loss_value(
    model: ToyModel,
    batch: Sequence[tuple[Sequence[int], Sequence[int]]],
    weights: Optional[Sequence[float]] = None,
) -> float:
    if not batch:
        raise LossLabError("empty batch")
    w = [1.0] * len(batch) if weights is None else list(weights)
    if len(w) != len(batch):
        raise LossLabError("weights must match batch length")
    terms = [-wi * sequence_logprob(model, x, y).logprob for wi, (x, y) in zip(w, batch)]
    return math.fsum(terms) / len(batch)


def gradient_sft(
    model: ToyModel,
    batch: Sequence[tuple[Sequence[int], Sequence[int]]],
    weights: Optional[Sequence[float]] = None,
) -> np.ndarray:
    if not batch:
        raise LossLabError("empty batch")
    w = [1.0] * len(batch) if weights is None else list(weights)
    if len(w) != len(batch):
        raise LossLabError("weights must match batch length")
    g = np.zeros(model.param_count)
    for wi, (x, y) in zip(w, batch):
        g += wi * _nll_gradient(model, x, y)
    return g / len(batch)


def dpo_loss_value(
    model: ToyModel,
    batch: Sequence[tuple[Sequence[int], Sequence[int], Sequence[int]]],
    beta: float,
    alpha: float,
) -> float:
    if not batch:
        raise LossLabError("empty batch")
    terms = []
    for x, y_pos, y_neg in batch:
        lp_pos = sequence_logprob(model, x, y_pos).logprob
        lp_neg = sequence_logprob(model, x, y_neg).logprob
        terms.append(dpo_loss(lp_pos, lp_neg, beta, alpha))
    return math.fsum(terms) / len(batch)


def gradient_dpo(
    model: ToyModel,
    batch: Sequence[tuple[Sequence[int], Sequence[int], Sequence[int]]],
    beta: float,
    alpha: float,
) -> np.ndarray:
    """Analytic gradient of the batch-mean preference loss.

    With margin = lp+ - lp-, the chain rule gives
      dL/dlp+ = -beta * sigmoid(-beta * margin) - alpha
      dL/dlp- = +beta * sigmoid(-beta * margin)
    and each dlp/dtheta is minus the sequence NLL gradient.
    """
    if beta <= 0:
        raise LossLabError(f"beta must be > 0, got {beta}")
    if alpha < 0:
        raise LossLabError(f"alpha must be >= 0, got {alpha}")
    if not batch:
        raise LossLabError("empty batch")
    g = np.zeros(model.param_count)
    for x, y_pos, y_neg in batch:
        lp_pos = sequence_logprob(model, x, y_pos).logprob
        lp_neg = sequence_logprob(model, x, y_neg).logprob
        s = _sigmoid(-beta * (lp_pos - lp_neg))
        g_pos_nll = _nll_gradient(model, x, y_pos)
        g_neg_nll = _nll_gradient(model, x, y_neg)
        # dL/dtheta = -(dL/dlp+) * g_pos_nll - (dL/dlp-) * g_neg_nll
        g += (beta * s + alpha) * g_pos_nll - beta * s * g_neg_nll
    return g / len(batch)


def grad(model: ToyModel, loss: str, batch, **params) -> np.ndarray:
    """Dispatch to the analytic gradient of a named objective."""
    if loss == "sft":
        return gradient_sft(model, batch, weights=params.get("weights"))
    if loss == "dpo":
        return gradient_dpo(model, batch, beta=params["beta"], alpha=params["alpha"])
    raise LossLabError(f"unknown loss {loss!r} (expected 'sft' or 'dpo')")


def finite_difference(f: Callable[[np.ndarray], float], p0: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    p0 = np.asarray(p0, dtype=float)
    g = np.zeros_like(p0)
    for i in range(p0.size):
        step = np.zeros_like(p0)
        step[i] = eps
        g[i] = (f(p0 + step) - f(p0 - step)) / (2.0 * eps)
    return g


# ---------------------------------------------------------------------------
# Chain vs independent training
# ---------------------------------------------------------------------------

def chain_gradients(
    model: ToyModel,
    x: Sequence[int],
    d: Sequence[int],
    s: Sequence[int],
    a_hat: Sequence[int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(g_chain, g_first_stage, g_answer) for the two-step chain objective.

    g_chain is the gradient of -log p(s|x,d) - log p(a|x,d,s) accumulated
    in one pass; g_first_stage and g_answer are the gradients of the two
    terms computed separately. g_answer is the credit-assignment term that
    independent training never sends back to the first stage.
    """
    ctx_first = list(x) + list(d)
    ctx_answer = ctx_first + list(s)
    g_chain = np.zeros(model.param_count)
    _nll_gradient(model, ctx_first, s, out=g_chain)
    _nll_gradient(model, ctx_answer, a_hat, out=g_chain)
    g_first = _nll_gradient(model, ctx_first, s)
    g_answer = _nll_gradient(model, ctx_answer, a_hat)
    return g_chain, g_first, g_answer


def chain_decomposition_residual(
    model: ToyModel,
    x: Sequence[int],
    d: Sequence[int],
    s: Sequence[int],
    a_hat: Sequence[int],
) -> float:
    """Max-norm of g_chain - g_first_stage - g_answer (zero up to float error)."""
    g_chain, g_first, g_answer = chain_gradients(model, x, d, s, a_hat)
    return float(np.max(np.abs(g_chain - g_first - g_answer)))


def independent_objective_value(
    theta_model: ToyModel,
    phi_model: ToyModel,
    x: Sequence[int],
    d: Sequence[int],
    s: Sequence[int],
    a_hat: Sequence[int],
) -> float:
    """-log p_theta(s|x,d) - log p_phi(a|s): two stages, two parameter sets."""
    first = sequence_logprob(theta_model, list(x) + list(d), s).logprob
    second = sequence_logprob(phi_model, s, a_hat).logprob
    return -(first + second)


def independent_objective_gradient(
    theta_model: ToyModel,
    phi_model: ToyModel,
    x: Sequence[int],
    d: Sequence[int],
    s: Sequence[int],
    a_hat: Sequence[int],
) -> np.ndarray:
    """Gradient over the stacked [theta; phi] vector.

    Block-diagonal by construction: the first-stage loss touches only
    theta coordinates and the answer loss only phi coordinates, which is
    the sense in which the credit-assignment term vanishes when the
    stages do not share parameters.
    """
    g_theta = _nll_gradient(theta_model, list(x) + list(d), s)
    g_phi = _nll_gradient(phi_model, list(s), a_hat)
    return np.concatenate([g_theta, g_phi])


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------

def _random_tokens(rng: np.random.Generator, vocab: int, lo: int, hi: int) -> list[int]:
    return rng.integers(0, vocab, size=int(rng.integers(lo, hi + 1))).tolist()


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / denom


def run_verification(
    seed: int = 0,
    fd_configs: int = 50,
    residual_draws: int = 100,
    property_samples: int = 1000,
    fd_eps: float = 1e-5,
) -> dict:
    """Run every check and return a pass/fail report with residual statistics."""
    rng = np.random.default_rng(seed)
    checks: list[dict] = []

    def add(name: str, passed: bool, **stats) -> None:
        checks.append({"name": name, "passed": bool(passed), **stats})

    # Uniform model: every token has probability 1/V.
    uniform = ToyModel.zeros(2)
    got = sequence_logprob(uniform, [], [0, 1, 0]).logprob
    want = 3.0 * math.log(0.5)
    add("uniform_sequence_logprob", abs(got - want) < 1e-12, value=got, expected=want)

    # Autoregressive normalization: enumerated sequence probabilities sum to 1.
    worst_norm = 0.0
    for _ in range(3):
        model = ToyModel.random(3, rng)
        total = 0.0
        for a in range(3):
            for b in range(3):
                for c in range(3):
                    total += math.exp(sequence_logprob(model, [1], [a, b, c]).logprob)
        worst_norm = max(worst_norm, abs(total - 1.0))
    add("enumeration_total_probability", worst_norm < 1e-9, max_abs_error=worst_norm)

    # Closed-form checkpoints of the preference loss.
    ln2_err = abs(dpo_loss(-1.5, -1.5, 0.7, 0.0) - math.log(2.0))
    add("dpo_equal_logprobs_gives_ln2", ln2_err < 1e-12, abs_error=ln2_err)
    worked = abs(dpo_loss(-1.0, -3.0, 0.2, 0.2) - 0.7130152523999527)
    add("dpo_worked_example", worked < 1e-6, abs_error=worked)

    # Monotonicity and shift behaviour, sampled.
    mono_ok = shift_ok = True
    for _ in range(property_samples):
        lp_pos = -float(rng.uniform(0.01, 8.0))
        lp_neg = -float(rng.uniform(0.01, 8.0))
        beta = float(rng.uniform(0.05, 2.0))
        alpha = float(rng.uniform(0.0, 1.0))
        bump = float(rng.uniform(1e-3, 0.5))
        base = dpo_loss(lp_pos, lp_neg, beta, alpha)
        if not dpo_loss(min(lp_pos + bump, 0.0), lp_neg, beta, alpha) < base:
            mono_ok = False
        if not dpo_loss(lp_pos, lp_neg - bump, beta, alpha) < base:
            mono_ok = False
        shift = -float(rng.uniform(1e-3, 2.0))
        plain = dpo_loss(lp_pos + shift, lp_neg + shift, beta, 0.0) - dpo_loss(lp_pos, lp_neg, beta, 0.0)
        if abs(plain) > 1e-9:
            shift_ok = False
        reg = dpo_loss(lp_pos + shift, lp_neg + shift, beta, alpha) - dpo_loss(lp_pos, lp_neg, beta, alpha)
        if abs(reg - (-alpha * shift)) > 1e-9:
            shift_ok = False
    add("dpo_monotonicity", mono_ok, samples=property_samples)
    add("dpo_shift_invariance", shift_ok, samples=property_samples)

    # Analytic vs central finite-difference gradients.
    worst_sft = worst_dpo = 0.0
    for _ in range(fd_configs):
        vocab = int(rng.integers(2, 5))
        model = ToyModel.random(vocab, rng)
        batch = [
            (_random_tokens(rng, vocab, 0, 2), _random_tokens(rng, vocab, 1, 3))
            for _ in range(int(rng.integers(1, 4)))
        ]
        g = gradient_sft(model, batch)
        g_fd = finite_difference(lambda p: sft_loss_value(model.with_theta(p), batch), model.theta, fd_eps)
        worst_sft = max(worst_sft, _relative_error(g, g_fd))

        pref_batch = [
            (
                _random_tokens(rng, vocab, 0, 2),
                _random_tokens(rng, vocab, 1, 3),
                _random_tokens(rng, vocab, 1, 3),
            )
            for _ in range(int(rng.integers(1, 3)))
        ]
        beta = float(rng.uniform(0.1, 1.0))
        alpha = float(rng.uniform(0.0, 0.5))
        g = gradient_dpo(model, pref_batch, beta, alpha)
        g_fd = finite_difference(
            lambda p: dpo_loss_value(model.with_theta(p), pref_batch, beta, alpha), model.theta, fd_eps
        )
        worst_dpo = max(worst_dpo, _relative_error(g, g_fd))
    add("sft_gradient_matches_fd", worst_sft <= 1e-4, max_relative_error=worst_sft, configs=fd_configs)
    add("dpo_gradient_matches_fd", worst_dpo <= 1e-4, max_relative_error=worst_dpo, configs=fd_configs)

    # Chain gradient identity.
    worst_residual = 0.0
    for _ in range(residual_draws):
        vocab = int(rng.integers(2, 7))
        model = ToyModel.random(vocab, rng)
        residual = chain_decomposition_residual(
            model,
            _random_tokens(rng, vocab, 1, 2),
            _random_tokens(rng, vocab, 1, 2),
            _random_tokens(rng, vocab, 1, 3),
            _random_tokens(rng, vocab, 1, 2),
        )
        worst_residual = max(worst_residual, residual)
    add("chain_decomposition_residual", worst_residual <= 1e-10, max_residual=worst_residual, draws=residual_draws)

    # Independent training: the first-stage loss has exactly zero gradient
    # on the second model's coordinates.
    vocab = 3
    theta_model = ToyModel.random(vocab, rng)
    phi_model = ToyModel.random(vocab, rng)
    x, d = [0], [1, 2]
    s, a_hat = [2, 0], [1]
    n_theta = theta_model.param_count

    def first_stage_only(p: np.ndarray) -> float:
        return -sequence_logprob(theta_model.with_theta(p[:n_theta]), list(x) + list(d), s).logprob

    stacked = np.concatenate([theta_model.theta, phi_model.theta])
    fd_block = finite_difference(first_stage_only, stacked, fd_eps)[n_theta:]
    coupling = float(np.max(np.abs(fd_block)))
    add("independent_training_zero_coupling", coupling == 0.0, max_cross_gradient=coupling)

    return {
        "seed": seed,
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
    }
