"""Convolutional VAE with classifier-feature regularization, built on a
minimal reverse-mode autodiff engine, with importance-sampled likelihood
evaluation, generation tooling and the blurred-feature-target experiment.
"""

from .precision import default_dtype, precision, precision_name, set_precision
from .kernels import active_backend, available_backends, set_backend
from .autodiff import (Parameter, ShapeError, Tensor, backward, gradient_check,
                       no_grad, stop_gradient, zero_grad)
from .gaussians import (DiagonalGaussian, kl_to_standard_normal, log_density,
                        make_rng, reparameterize, sample_standard_normal)
from .models import (ArchConfig, ModelBundle, classify, decode, encode,
                     init_bundle)
from .checkpoint import (CheckpointError, load_checkpoint, read_tensor_file,
                         save_checkpoint, write_tensor_file)
from .objectives import (LossBreakdown, NonFiniteLossError, TrainConfig,
                         default_lambdas, discriminative_loss, elbo)
from .optim import AdamState, adam_step, train
from .data import (LabeledImageSet, ShapeSpec, generate_shapes,
                   load_binary_records, minibatches, scale_and_crop,
                   write_image_grid)
from .evaluate import (NllReport, estimate_nll, interpolate, reconstruct,
                       sample_prior)
from .blur_lab import (BlurExperimentConfig, gaussian_blur,
                       high_frequency_energy, run_blur_experiment)

__version__ = "0.1.0"
