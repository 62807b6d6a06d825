"""Online data-enabled predictive control with FFT Hankel kernels."""

from ._version import __version__
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    GenerationError,
    KernelError,
    PersistenceError,
)
from .convolution import ScalarHankel, fft_convolve, hankel_transpose_vec, hankel_vec, predicted_flop_cost
from .hankel import (
    BlockHankelView,
    ShiftSpec,
    Signal,
    block_hankel_transpose_vec,
    block_hankel_vec,
    build_hankel,
    is_persistently_exciting,
    shift_up,
    slide_window,
)
from .behavioral import (
    BehavioralModel,
    ConstraintBox,
    advance_measurements,
    apply_H,
    apply_H_transpose,
    assemble_rhs,
)
from .solver import (
    Boxes,
    SaddleParams,
    SolverState,
    TrackingCost,
    contraction_factor,
    default_step_size,
    estimate_saddle_constants,
    online_step,
    saddle_norm,
    static_step,
)
from .plant import DriftSpec, PlantModel, ReferenceSchedule, generate_random_system, simulate, step
from .experiment import (
    ExperimentConfig,
    RunTrace,
    bench_products,
    emit_trace,
    read_trace,
    run_gradient_deepc,
    run_odeepc,
)
