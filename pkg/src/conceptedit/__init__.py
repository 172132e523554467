"""Top-level package for conceptedit."""

__version__ = '0.1.0+dev'

from .taxonomy import *
from .editplan import *
from .ordering import *
from .pipeline import *
from .metrics import *
from .visualize import *
from .exceptions import *
from . import prec


__all__ = [
    'Taxonomy',
    'CostPolicy',
    'EditKind',
    'INFINITE_COST',
    'parse_taxonomy',
    'load_taxonomy',
    'ConceptAnnotation',
    'Edit',
    'EditSet',
    'min_edit_set',
    'closest_target',
    'apply_edits',
    'load_corpus',
    'OrderingStrategy',
    'ImportanceTable',
    'compute_importance',
    'order_global',
    'order_local_global',
    'RunConfig',
    'RunTrace',
    'ServiceContracts',
    'classify_consistent',
    'run_counterfactual',
    'run_batch',
    'read_traces',
    'write_traces',
    'frechet_distance',
    'rbf_mmd',
    'mean_cosine',
    'build_report',
    'format_report',
    'AmbiguityPlot',
    'plot_ambiguity',
    'ConceptEditError',
]
