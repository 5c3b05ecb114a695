"""Reversible-jump MCMC over a variable number of plume sources."""

from .chain import ChainAborted, ChainConfig, ChainTrace, initial_sources, initial_state, run_chain
from .moves import (birth, birth_proposal, coalesce, coalesce_parent, coalesce_proposal, death, death_proposal,
                    feasible_pairs, gibbs_background, split_proposal,
                    mh_block_update, split, split_children, split_log_ratio, update_opening_angles,
                    update_sigma, update_wind_bias)
from .state import (ChainState, NumericalRankError, Posterior, Priors, ProposalScales, Switches,
                    log_posterior, make_state, wrap_angle)
from .summary import Summary, deposit, summarize
