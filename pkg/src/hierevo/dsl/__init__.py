"""Evolvable policy templates: typed expression trees with hyperparameter slots."""

from .expr import (
    Acc,
    ArgFeat,
    ArgFold,
    Binary,
    BoolConst,
    Const,
    DepthLimit,
    Expr,
    Feat,
    HyperParamSlot,
    If,
    MalformedTemplate,
    NodeLimit,
    Param,
    PolicyTemplate,
    SlotMissing,
    SlotOutOfBounds,
    TemplateError,
    Unary,
    check_slots,
    eval_template,
)
from .features import CATALOGS, EGRAPH, INLINE, SHARD, Catalog, FeatureVector, compute_features
from .text import TemplateSyntaxError, canonical, parse_template, print_template
from .variation import crossover, mutate

__all__ = [
    "Acc", "ArgFeat", "ArgFold", "Binary", "BoolConst", "Const", "DepthLimit", "NodeLimit", "Expr", "Feat",
    "HyperParamSlot", "If", "MalformedTemplate", "Param", "PolicyTemplate",
    "SlotMissing", "SlotOutOfBounds", "TemplateError", "Unary", "check_slots",
    "eval_template", "CATALOGS", "EGRAPH", "INLINE", "SHARD", "Catalog",
    "FeatureVector", "compute_features", "TemplateSyntaxError", "canonical",
    "parse_template", "print_template", "crossover", "mutate",
]
