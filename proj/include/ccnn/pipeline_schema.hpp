#pragma once

// Published at docs/pipeline_config.schema.json; keep both in sync.

namespace ccnn {

inline constexpr const char* pipeline_config_schema = R"json(
{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "ccnn pipeline configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "workers": {"type": "integer", "minimum": 1},
    "out_dir": {"type": "string"},
    "models": {"type": "array", "minItems": 1, "items": {"enum": ["ccnn", "simple", "deep"]}},
    "cv": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "folds": {"type": "integer", "minimum": 2},
        "grouped": {"type": "boolean"}
      }
    },
    "train": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "default": {"$ref": "#/$defs/train"},
        "ccnn": {"$ref": "#/$defs/train"},
        "simple": {"$ref": "#/$defs/train"},
        "deep": {"$ref": "#/$defs/train"}
      }
    },
    "simulation": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "roi_count": {"type": "integer", "minimum": 2},
        "modified_roi_counts": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "noise_weights": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "replicas_per_class": {"type": "integer", "minimum": 1},
        "timepoints": {"type": "integer", "minimum": 2},
        "factors": {"type": "integer", "minimum": 1},
        "base_healthy": {"type": "string"},
        "base_patient": {"type": "string"}
      }
    },
    "connectivity": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "channel_sets": {
          "type": "array",
          "minItems": 1,
          "items": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": ["correlation", "dtw_distance", "path_length", "corr", "dtw", "path"]}
          }
        },
        "window": {"type": "integer", "minimum": 0},
        "cost": {"enum": ["squared", "absolute"]},
        "path_variant": {"enum": ["excess", "relative"]},
        "znorm": {"type": "boolean"},
        "degenerate": {"enum": ["error", "zero"]}
      }
    },
    "sessions": {"type": "string"}
  },
  "$defs": {
    "train": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "model": {"enum": ["ccnn", "simple", "deep"]},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 0},
        "keep_prob": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "optimizer": {"enum": ["adam", "sgd"]},
        "adam_beta1": {"type": "number", "minimum": 0, "maximum": 1},
        "adam_beta2": {"type": "number", "minimum": 0, "maximum": 1},
        "adam_epsilon": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "dropout_conv": {"type": "boolean"},
        "dropout_hidden": {"type": "boolean"},
        "conv1_filters": {"type": "integer", "minimum": 1},
        "conv2_filters": {"type": "integer", "minimum": 1},
        "first_hidden": {"type": "integer", "minimum": 1},
        "hidden": {"type": "integer", "minimum": 1}
      }
    }
  }
}
)json";

} // namespace ccnn
