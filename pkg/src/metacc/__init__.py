"""Channel-coding meta-learning benchmark.

Modules: codec (convolutional code, Viterbi/ML decoding), channels (noise
models and exact log-densities), tensor (reverse-mode autodiff), decoder
(convolutional neural decoder), taskdist (task priors, datasets, episodes,
scenario registry), metalearn (meta-training algorithms), infometrics
(diversity and shift estimators with Monte Carlo oracles), bench (experiment
harness and reports), cli (command-line entry point).
"""

__version__ = "0.1.0"
