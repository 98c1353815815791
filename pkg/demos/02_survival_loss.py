"""
Discrete-time survival loss
===========================

Hazards per time bin, the survival curve they imply, and how censoring
changes which terms of the likelihood count.
"""
import numpy as np

from moadnet import survival

np.set_printoptions(precision=4, suppress=True)

# quartile bin edges come from uncensored times only
times = np.array([3.0, 7.0, 12.0, 20.0, 26.0, 31.0, 40.0, 55.0, 90.0])
censor = np.array([0, 0, 1, 0, 0, 1, 0, 0, 1])
bins = survival.discretize_bins(times, censor, n_bins=4)
print("bin edges:", bins.edges)
print("bins:     ", bins.assign(times))

###############################################################################
# All-zero logits give hazard 1/2 in every bin, so survival halves each step.
hazard, surv = survival.hazards_and_survival(np.zeros(4))
print("hazard:", hazard.data, " survival:", surv.data)

###############################################################################
# An event in bin 2 pays for surviving bins 0-1 and for the hazard in bin 2.
# A patient censored in bin 2 only pays for surviving through bin 2.
logits = np.array([-2.0, -1.0, 0.5, 1.0])
print("event in bin 2:   ", survival.nll_loss(logits, [2], [0]).item())
print("censored in bin 2:", survival.nll_loss(logits, [2], [1]).item())

###############################################################################
# Risk is minus the summed survival curve; the c-index checks its ordering.
rng = np.random.default_rng(0)
logit_batch = rng.standard_normal((50, 4))
risk = survival.risk_from_logits(logit_batch)
fake_times = -risk + 0.3 * rng.standard_normal(50)
print("c-index (times inversely tied to risk):",
      survival.concordance_index(risk, fake_times, np.zeros(50)))
