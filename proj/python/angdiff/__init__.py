"""Angular diffusion parameterizations, samplers and toy experiments."""

from ._core import (
    GmmOracle,
    Parameterization,
    PrecisionModel,
    Schedule,
    ToyDataset,
    check_well_posed,
    command_defaults,
    command_names,
    convert,
    ddim_step,
    ddpm_posterior,
    draw_mask_ratios,
    eps_pred_step_error_std,
    forward_diffuse,
    guided_output,
    hist_kl,
    inject,
    make_schedule,
    mmd_rbf,
    recover_x_eps,
    round_bf16,
    run_command,
    step_list,
    target,
    theoretical_vloss_overhead,
)

__all__ = [
    "GmmOracle",
    "Parameterization",
    "PrecisionModel",
    "Schedule",
    "ToyDataset",
    "check_well_posed",
    "command_defaults",
    "command_names",
    "convert",
    "ddim_step",
    "ddpm_posterior",
    "draw_mask_ratios",
    "eps_pred_step_error_std",
    "forward_diffuse",
    "guided_output",
    "hist_kl",
    "inject",
    "make_schedule",
    "mmd_rbf",
    "recover_x_eps",
    "round_bf16",
    "run_command",
    "step_list",
    "target",
    "theoretical_vloss_overhead",
]
