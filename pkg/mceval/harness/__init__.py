from .axioms import AXIOMS, CheckConfig, check_axioms
from .cli import main, run_cli
from .config import load_check_config, load_grid_model, load_tree, parse_principle, read_payoff
from .errors import OracleFailure, UsageError
