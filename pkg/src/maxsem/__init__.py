"""Likelihood-based fitting of max-stable vectors by stochastic EM over latent partitions."""
from .gibbs import GibbsChain, GibbsConfig, conditional_log_weights, gibbs_run
from .likelihood import (FitResult, PairWeighting, full_loglik, full_loglik_bruteforce,
                         logistic_full_loglik_recursive, mle_fit, pairwise_loglik, st_loglik)
from .models import BrownResnickModel, LogisticModel, MaxStableModel, Variogram, make_model
from .mvn import CdfEstimate, QmcRule, mvn_cdf, mvn_logpdf
from .partition import (Partition, PartitionUniverse, bell_number, canonicalize,
                        enumerate_partitions, gibbs_moves)
from .sem import SemConfig, SemTrace, e_step_sample, m_step, q_hat, sem_fit
from .simulate import (Dataset, SiteSet, random_sites, sample_brown_resnick, sample_logistic,
                       sample_positive_stable)

__version__ = "0.1.0"
