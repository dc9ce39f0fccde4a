"""Learning unbalanced stochastic dynamics from snapshot data."""

from .config import TrainConfig, preset
from .dynamics import SigmaSchedule, TimeGrid, Trajectory, accumulate_action, integrate, sample_sde
from .losses import GrowthPenalty, cfm_score_loss, fp_residual_loss, mass_matching_loss, recon_loss
from .nets import FieldSet, Mlp, MlpSpec, mlp_init
from .synthdata import SnapshotDataset, load_csv, save_csv, simulate_gaussian_mixture, simulate_grn
from .transport import WeightedCloud, wasserstein

__version__ = "0.1.0"
