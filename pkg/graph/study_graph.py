"""
Study Graph — LangGraph StateGraph for one schedule entry.

configuration → microscopic → homogenization → measurement → END, each
hand-off conditional so that a failed stage ends the entry.
"""

import logging

from langgraph.graph import StateGraph, END

from config.run_config import RunConfig
from config.settings import Settings
from graph.graph_conditions import (
    STAGE_ORDER, after_configuration, after_homogenization, after_microscopic, next_stage,
)
from models.study import EntryState
from stages.configuration_stage import ConfigurationStage
from stages.homogenization_stage import HomogenizationStage
from stages.measurement_stage import MeasurementStage
from stages.microscopic_stage import MicroscopicStage

logger = logging.getLogger(__name__)


def build_study_graph(run_config: RunConfig, settings: Settings):
    """
    Build and compile the per-entry study graph.

    Args:
        run_config: Parsed run file (schedule, quadrature, tolerances …)
        settings: Runtime settings (threads, chunk size)

    Returns:
        Compiled LangGraph StateGraph ready for .invoke()
    """
    # ── Instantiate stages ──────────────────────────────────────
    configuration = ConfigurationStage(run_config)
    microscopic = MicroscopicStage(run_config, settings)
    homogenization = HomogenizationStage(run_config, settings)
    measurement = MeasurementStage(run_config, homogenization)

    # ── Build the StateGraph ────────────────────────────────────
    graph = StateGraph(EntryState)
    graph.add_node("configuration", configuration.process)
    graph.add_node("microscopic", microscopic.process)
    graph.add_node("homogenization", homogenization.process)
    graph.add_node("measurement", measurement.process)

    # ── Define edges ────────────────────────────────────────────
    graph.set_entry_point("configuration")
    for stage, router in (("configuration", after_configuration),
                          ("microscopic", after_microscopic),
                          ("homogenization", after_homogenization)):
        target = next_stage(stage)
        graph.add_conditional_edges(stage, router, {target: target, END: END})
    graph.add_edge("measurement", END)

    # ── Compile ─────────────────────────────────────────────────
    compiled = graph.compile()
    logger.debug("Study graph compiled with %d nodes", len(STAGE_ORDER))
    return compiled
