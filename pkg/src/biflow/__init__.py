"""Bidirectional transport maps for simulation and inference in inverse problems."""

from .bidirectional import BidirectionalMap, DecoupledMap
from .datasets import (
    EmpiricalGaussian,
    ImageBatch,
    MaskOperator,
    affine_bidirectional,
    apply_mask,
    build_pairs,
    downscale,
    embed,
    fit_empirical_gaussian,
    load_idx,
    save_idx,
)
from .diagnostics import MmdEstimate, j_losses, mmd, mmd_test
from .estimators import AffineBidirectional, TransportBidirectional, TriangularTransport
from .exceptions import (
    BadMagic,
    BiflowError,
    BracketNotFound,
    DataError,
    DimensionMismatch,
    DivergedLoss,
    InsufficientSamples,
    NotPositiveDefinite,
    NotSymmetric,
    NumericalError,
    SingularDiagonal,
    TruncatedFile,
)
from .gaussian import GaussianLinearProblem, GaussianMaps, build_maps, condition_sweep, posterior_moments
from .maps import AffineTriangularMap, IdentityMap, InverseMap, MonotoneTriangularMap, load_map, save_map
from .nonlinear import ExactUpperMap, SignTargetMap
from .polynomial import MonotoneComponent, MultiIndexSet
from .sampling import Rng, SampleBatch
from .training import TrainConfig, TrainReport, fit_map, kl_objective

__version__ = "0.1.0"
