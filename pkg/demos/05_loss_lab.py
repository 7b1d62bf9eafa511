"""The numeric side: sequence scoring, the two training objectives, and
the chain-vs-independent gradient decomposition, all on a model small
enough to enumerate.
"""
import math

import numpy as np

from cocoa import ToyModel, chain_decomposition_residual, dpo_loss, sequence_logprob, sft_loss
from cocoa.losslab import chain_gradients, finite_difference, gradient_sft, run_verification, sft_loss_value

rng = np.random.default_rng(0)

# With zero weights every next-token distribution is uniform.
uniform = ToyModel.zeros(2)
score = sequence_logprob(uniform, x=[], y=[0, 1, 0])
print(f"uniform 3-token logprob: {score.logprob:.6f} (expect {3 * math.log(0.5):.6f})")

model = ToyModel.random(3, rng)
batch = [([0], [1, 2]), ([2], [0, 1])]
scores = [sequence_logprob(model, x, y) for x, y in batch]
print(f"SFT loss over batch: {sft_loss(scores):.6f}")

# Preference loss: ln 2 at zero margin; the alpha term adds the chosen NLL.
print(f"dpo at zero margin, alpha=0: {dpo_loss(-2.0, -2.0, 0.2, 0.0):.6f} (ln 2 = {math.log(2):.6f})")
print(f"dpo, margin 2, beta=0.2, alpha=0.2: {dpo_loss(-1.0, -3.0, 0.2, 0.2):.6f}")

# Analytic gradients agree with central finite differences.
analytic = gradient_sft(model, batch)
numeric = finite_difference(lambda p: sft_loss_value(model.with_theta(p), batch), model.theta)
print(f"max |analytic - finite difference|: {np.max(np.abs(analytic - numeric)):.2e}")

# Chain training = independent training + the answer-loss gradient.
x, d, s, a_hat = [0], [1, 2], [2, 0], [1]
g_chain, g_first, g_answer = chain_gradients(model, x, d, s, a_hat)
residual = chain_decomposition_residual(model, x, d, s, a_hat)
print(f"credit-assignment term norm: {np.max(np.abs(g_answer)):.4f}")
print(f"decomposition residual:      {residual:.2e}")

report = run_verification(seed=0)
print(f"\nverification suite: {sum(c['passed'] for c in report['checks'])}/{len(report['checks'])} checks passed")
