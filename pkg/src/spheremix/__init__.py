"""Density estimation on the sphere with mixtures of exponential-map flows.

Fit mixtures of normalizing flows on S2 by soft or hard EM, simulate vMF
cluster data, and score fits by quadrature L1 distance.  All heavy math runs
in double precision; the jax backend is switched to 64-bit here, before any
kernel module is imported.
"""

import jax as _jax

_jax.config.update("jax_enable_x64", True)

from . import (cli, config, events, flow, geometry, mixture, optim,
               quadrature, vmf)
from .config import RunConfig, build_run_config, parse_config_file
from .events import EventDataset, EventParseError, load_events, write_events
from .flow import (ComponentParams, DegenerateJacobianError, LayerParams,
                   component_logdensity, component_pushforward,
                   layer_jacobian_logdet)
from .mixture import (CommitteeDensity, EmConfig, FitReport, MixtureModel,
                      derive_seed, e_step, fit_committee, fit_hard, fit_soft,
                      harden, load_model, mixture_logdensity, prune_empty,
                      save_model, update_weights_hard, update_weights_soft)
from .optim import (FreeParams, SgdConfig, WeightedBatch, decode, encode,
                    gradient, init_free, maximize, objective, unit_batch)
from .quadrature import (DensityField, QuadratureGrid, build_grid,
                         export_density_grid, integrate, l1_distance,
                         write_raster)
from .vmf import (SimSetting, VmfMixture, VmfParams, generate_setting,
                  load_truth, mixture_density, sample_mixture, save_truth,
                  vmf_density, vmf_logdensity, vmf_sample)

__version__ = "0.1.0"
