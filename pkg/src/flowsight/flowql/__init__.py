"""SQL-like query language: parse, plan, execute.

    SELECT <kind>[(args)] FROM (time A to B)+ WHERE <conditions>

Conditions combine feature=value atoms with AND/OR and parentheses; the
WHERE clause normalizes to disjunctive normal form and each conjunction
runs as an independent mini-query against the smallest feature set that
covers its constrained features.
"""

from .parser import (  # noqa: F401
    Atom,
    QLSyntaxError,
    QueryPlan,
    Select,
    SemanticError,
    parse,
    render,
    to_dnf,
)
from .planner import explain, plan_fetch  # noqa: F401
from .executor import ResultRow, ResultTable, execute  # noqa: F401
