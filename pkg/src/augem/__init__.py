"""augem: EM-based learning of image augmentation policy probabilities.

Estimates which of a discrete set of augmentation policies is most useful
for each training example by treating the policy choice as a latent
variable: a Bayes-rule posterior over a sampled policy subset is pushed
through a temperature-controlled softmin, the resulting weights drive a
weighted SGD step on the classifier, and a windowed moving average tracks
the unconditional policy probabilities.
"""

__version__ = "0.1.0"
