from typing_extensions import override
from loguru import logger
from modules.planner import ToolId
from modules.tools.base_tool import ExecutionContext, ToolBase
from modules.triple_selection import select_relation_triples


class RelationSelectorTool(ToolBase):
    """
    Keeps the relation triples with the rarest relations, incoming and outgoing.
    """
    tool_id = ToolId.RELATION_SELECTOR
    definition = "Keeps the most distinctive relation triples of an entity, outgoing and incoming."
    usage = "RelationTripleSelector[entity] -> list of (subject, relation, object)"

    @override
    def run(self, context: ExecutionContext):
        if context.executor.triples != "selected":
            logger.debug(f"Relation selection bypassed ({context.executor.triples} triples)")
            return
        context.selected_rel = select_relation_triples(context.source_graph, context.source, context.selection)
        context.candidate_rel = {
            t: select_relation_triples(context.target_graph, t, context.selection)
            for t in context.candidate_set.targets if context.target_graph.has_entity(t)
        }
