"""Central repository for the JSON Schema documents used by c2f-diffusion.

Experiment configs and model checkpoints are validated against these schemas
before any numerical work starts.
"""

from typing import Any, Dict

CHECKPOINT_FORMAT_VERSION = 1

# Experiment configuration (flat key = value file, see models.experiment)
CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        # Diffusion schedule and blur operator
        "n_steps": {"type": "integer", "minimum": 1},
        "beta_start": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta_end": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "kernel_support": {"type": "integer", "minimum": 0},
        "f_type": {"type": "string", "enum": ["zero", "log", "quartic"]},
        "f_end": {"type": "number", "minimum": 0},
        "fine_to_coarse": {"type": "boolean"},
        "unit_score_exponent": {"type": "boolean"},
        # Sampler
        "shifted_indexing": {"type": "boolean"},
        "final_step_noise": {
            "type": "string",
            "enum": ["noise", "no-noise-at-last-step"],
        },
        # Fields and data
        "field_size": {"type": "integer", "minimum": 3},
        "field_ndim": {"type": "integer", "enum": [1, 2]},
        "dataset": {
            "type": "string",
            "enum": ["gaussian", "two-point", "gmm", "images"],
        },
        "dataset_size": {"type": "integer", "minimum": 1},
        "dataset_scale": {"type": "number", "exclusiveMinimum": 0},
        "dataset_components": {"type": "integer", "minimum": 1},
        "dataset_noise": {"type": "number", "minimum": 0},
        "image_dir": {"type": "string"},
        # Model and training
        "model": {"type": "string", "enum": ["oracle", "linear", "mlp"]},
        "samples_per_step": {"type": "integer", "minimum": 2},
        "mlp_hidden": {"type": "integer", "minimum": 1},
        "mlp_embed": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "train_steps": {"type": "integer", "minimum": 0},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        # Outputs
        "n_samples": {"type": "integer", "minimum": 1},
        "n_reference": {"type": "integer", "minimum": 2},
        "n_bands": {"type": "integer", "minimum": 2},
        "stride": {"type": "integer", "minimum": 1},
        "clamp_output": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
    },
}

# Fingerprinted model checkpoint
CHECKPOINT_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["format_version", "model_type", "fingerprint", "parameters"],
    "additionalProperties": False,
    "properties": {
        "format_version": {"type": "integer", "const": CHECKPOINT_FORMAT_VERSION},
        "model_type": {"type": "string", "enum": ["linear", "mlp"]},
        "fingerprint": {
            "type": "object",
            "additionalProperties": {
                "type": ["string", "number", "integer", "boolean"]
            },
        },
        "parameters": {"type": "object"},
    },
}
