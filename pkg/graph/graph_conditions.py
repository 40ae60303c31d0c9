"""
Graph Conditions — Routing functions for the LangGraph conditional edges.

Every stage hands off to the next one unless it recorded an error, in which
case the entry ends early and the orchestrator marks its row failed.
"""

from langgraph.graph import END

from models.study import EntryState

STAGE_ORDER = ("configuration", "microscopic", "homogenization", "measurement")


def next_stage(stage: str) -> str:
    index = STAGE_ORDER.index(stage)
    return STAGE_ORDER[index + 1] if index + 1 < len(STAGE_ORDER) else END


def after_stage(stage: str):
    """Build the router used after ``stage``: next stage, or END on error."""

    def route(state: EntryState) -> str:
        if state.get("error"):
            return END
        return next_stage(stage)

    route.__name__ = f"after_{stage}"
    return route


after_configuration = after_stage("configuration")
after_microscopic = after_stage("microscopic")
after_homogenization = after_stage("homogenization")
