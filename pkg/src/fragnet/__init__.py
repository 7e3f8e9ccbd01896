"""Bayesian inference of hierarchical block structure in simple undirected
graphs, with multifurcating fragmentation-tree priors, collapsed pooled /
unpooled / flat-partition likelihoods, SPR-based MCMC, simulation, and
link-prediction evaluation."""

__version__ = "0.1.0"

from .errors import (EdgeListError, FormatVersionError, FragnetError,
                     InvariantError, MetricUndefinedError, StaleNodeError)
from .graphstats import BlockStats, Graph, parse_edge_list
from .models import (IRM, MODEL_KINDS, POOLED, UNPOOLED, BetaParams,
                     FlatPartition, beta_bernoulli_logml, log_joint,
                     log_marginal_likelihood, predictive_link_prob,
                     simulate_network)
from .prior import (GibbsParams, SignedLogValue, crp_log_prob,
                    rising_factorial, sample_partition, sample_tree,
                    split_log_prob, tree_log_prior)
from .sampler import ChainConfig, Diagnostics, PosteriorSample, run_chain
from .treecore import (TYPE1, TYPE2, FragTree, candidate_sites,
                       canonical_parse, canonical_serialize, detach,
                       insert_type1, insert_type2, lca, project, to_newick)

__all__ = [
    "BetaParams", "BlockStats", "ChainConfig", "Diagnostics", "EdgeListError",
    "FlatPartition", "FormatVersionError", "FragTree", "FragnetError",
    "GibbsParams", "Graph", "InvariantError", "IRM", "MetricUndefinedError",
    "MODEL_KINDS", "POOLED", "PosteriorSample", "SignedLogValue",
    "StaleNodeError", "TYPE1", "TYPE2", "UNPOOLED", "beta_bernoulli_logml",
    "candidate_sites", "canonical_parse", "canonical_serialize",
    "crp_log_prob", "detach", "insert_type1", "insert_type2", "lca",
    "log_joint", "log_marginal_likelihood", "parse_edge_list",
    "predictive_link_prob", "project", "rising_factorial", "run_chain",
    "sample_partition", "sample_tree", "simulate_network", "split_log_prob",
    "to_newick", "tree_log_prior",
]
