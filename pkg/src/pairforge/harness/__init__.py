from .prompts import PROMPT_VERSION, build_prompt, valid_letters
from .client import (
    EvalError,
    ModelEndpoint,
    TransportFailure,
    constant_model,
    key_reading_model,
    query_model,
    run_eval,
    uniform_random_model,
)
from .scoring import (
    Trial,
    ensemble,
    human_also_wrong_fraction,
    label_bucket,
    parse_letter,
    same_wrong_fraction,
    score,
    wrong_set_iou,
)
from .vqascore import CapabilityError, vqascore_eval, yes_probability_from_response

__all__ = [
    "PROMPT_VERSION",
    "build_prompt",
    "valid_letters",
    "EvalError",
    "ModelEndpoint",
    "TransportFailure",
    "constant_model",
    "key_reading_model",
    "query_model",
    "run_eval",
    "uniform_random_model",
    "Trial",
    "ensemble",
    "human_also_wrong_fraction",
    "label_bucket",
    "parse_letter",
    "same_wrong_fraction",
    "score",
    "wrong_set_iou",
    "CapabilityError",
    "vqascore_eval",
    "yes_probability_from_response",
]
