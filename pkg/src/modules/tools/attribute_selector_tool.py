from typing_extensions import override
from loguru import logger
from modules.planner import ToolId
from modules.tools.base_tool import ExecutionContext, ToolBase
from modules.triple_selection import select_attribute_triples


class AttributeSelectorTool(ToolBase):
    """
    Keeps the most discriminative attribute triples of the source entity and
    of every candidate. Candidate entropies are measured over the candidate set.
    """
    tool_id = ToolId.ATTRIBUTE_SELECTOR
    definition = "Keeps the informative attribute triples of an entity and drops common or uninformative ones."
    usage = "AttributeTripleSelector[entity] -> list of (entity, attribute, value)"

    @override
    def run(self, context: ExecutionContext):
        if context.executor.triples != "selected":
            logger.debug(f"Attribute selection bypassed ({context.executor.triples} triples)")
            return
        context.selected_attr = select_attribute_triples(context.source_graph, context.source, (), context.selection)
        targets = context.candidate_set.targets
        candidate_scope = context.selection.model_copy(update={"entropy_scope": "candidate_set"})
        context.candidate_attr = {
            t: select_attribute_triples(context.target_graph, t, targets, candidate_scope)
            for t in targets if context.target_graph.has_entity(t)
        }
