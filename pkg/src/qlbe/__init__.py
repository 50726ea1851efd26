"""Numerical toolkit for the quantum linear Boltzmann equation of a tracer in an ideal gas."""

from .errors import (
    ConfigError,
    CutoffTooSmall,
    EnvelopeExceeded,
    FitIllConditioned,
    GridTooSmall,
    NumericalError,
    OffPlane,
    OffShell,
    QLBEError,
    QuadratureNotConverged,
    RoutesDisagree,
    SingularQ,
    StepTooLarge,
    StepUnstable,
    UnsupportedVariant,
    WrongModel,
    ZeroAxis,
)
from .gas import GasSpec, MaxwellBoltzmann, TabulatedIsotropic, boost, mu, rng_stream, sample
from .kinematics import MassPair, MomentumVector, UnitsConvention, decompose_parallel, orthonormal_frame, rel
from .rates import (
    CollisionSystem,
    ComplexRate,
    L_fn,
    L_lim,
    QuadratureBudget,
    energy_shift,
    m_in_cl,
    m_in_direct,
    m_in_quantum,
    m_out_cl,
)
from .scattering import (
    BornGaussian,
    ConstantSWave,
    HardSphere,
    amplitude,
    optical_theorem_residual,
    sigma_tot,
)

__version__ = "0.1.0"
