"""Equal-distribution tests for grouped multi-dimensional categorical data.

Typical use is auditing an A/B/n traffic split: did every arm receive the
same mix of users?
"""

from .dataset import (CategoricalTable, DataError, GroupedSample, NumericGroups, load_csv,
                      one_hot, pool_and_split)
from .disco import DiscoComponents, d_alpha, disco_components, disco_test, g_alpha
from .multiplicity import (PermutationResult, baseline_marginal_test, by_adjust, holm_adjust,
                           resample_after_selection, resample_minp, resample_single)
from .propensity import (ContingencyTable, fit_multinomial_logit, pearson_chi_square,
                         predict_labels, propensity_test)
from .randchi import (RandChiConfig, RandChiOutcome, coverage_probability, joint_table,
                      randomized_chi_square_test)
from .simgen import ScenarioSpec, bucketize, generate, power_study

__version__ = "0.1.0"
