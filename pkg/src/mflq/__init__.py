"""Mean-field LQ control with regime switching: Riccati solvers, a tree oracle and Monte Carlo checks."""

from .errors import (BlowUpError, DimensionError, MaxIterations, MFLQError, NonConvex,
                     NotStronglyRegular, ProblemFormatError, RangeError, RegularityError,
                     StepTooLargeError, TreeBudgetError)
from .problem import (ChainGenerator, ProblemSpec, SplitCoefficients, coeff_at, load_problem,
                      save_problem, split, validate)
from .chain import RegimePath, occupation_weights, one_step_matrix, simulate_path
from .riccati import (RiccatiSolution, check_strong_regularity, feedback_gains,
                      iterate_strongly_regular, pinv_cutoff, riccati_rhs, solve_bsdre)
from .eta import EtaSolution, solve_eta, value_function
from .tree import (TreeModel, build_tree, cost_exact, feedback_cost, gradient_exact, project_M,
                   solve_open_loop, verify_decoupling)
from .montecarlo import (CostReport, PairedReport, SimConfig, Strategy, compare_strategies,
                         simulate_closed_loop, simulate_strategies)

__version__ = "0.1.0"
