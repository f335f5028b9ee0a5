"""Static query-update independence analysis over DTDs via chain inference."""
from .schema import Dtd, DtdError, parse_dtd, validate
from .xmlstore import Tree, parse_document, serialize_tree
from .lang import LangError, parse_query, parse_update
from .evaluator import UpdateError, apply_update, dynamic_independent, eval_query
from .chains import infer_query, infer_update, infer_query_sets, infer_update_sets
from .finite import k_of, k_pair
from .independence import Result, Verdict, check, check_sets

__all__ = [
    "Dtd",
    "DtdError",
    "LangError",
    "Result",
    "Tree",
    "UpdateError",
    "Verdict",
    "apply_update",
    "check",
    "check_sets",
    "dynamic_independent",
    "eval_query",
    "infer_query",
    "infer_query_sets",
    "infer_update",
    "infer_update_sets",
    "k_of",
    "k_pair",
    "parse_document",
    "parse_dtd",
    "parse_query",
    "parse_update",
    "serialize_tree",
    "validate",
]
