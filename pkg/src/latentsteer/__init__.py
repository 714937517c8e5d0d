"""Universal targeted perturbations that steer a frozen audio encoder.

The package learns a single waveform perturbation, bounded in amplitude,
that pushes the encoder's latent trajectory of arbitrary carrier audio
toward the trajectory of a chosen target command. Everything is
deterministic from integer seeds: carriers, targets, model weights, and
the optimization itself.
"""

from .attack import (
    AttackConfig,
    PerturbationState,
    TrainRecord,
    attack_step,
    cosine_frame_loss,
    cosine_frame_loss_vjp,
    e2e_grad,
    project_linf,
    random_universal,
    run_e2e,
    run_utlsa,
    target_embedding,
    utlsa_grad,
)
from .bench import BenchReport, bench_attack, estimate_peak_bytes, render_bench_table
from .evaluate import (
    EvalReport,
    EvalRow,
    TargetBank,
    calibrate_tau,
    eval_asr,
    macro_average,
    make_target_bank,
    proxy_decode,
    random_baseline,
)
from .features import log_mel, log_mel_vjp, mel_filterbank
from .model import (
    DecoderParams,
    EncoderParams,
    decode_ce,
    encode,
    encode_vjp,
    init_params,
)
from .rng import Rng, fnv1a64
from .signal import (
    DEFAULT_PROFILES,
    CarrierProfile,
    mix,
    pad_or_trim,
    read_wav,
    synth_carrier,
    synth_target,
    write_wav,
)
from .text import encode_command, match_target, normalize_text
from .weights import load_delta, load_weights, params_checksum, save_delta, save_weights

__version__ = "0.1.0"
