from typing_extensions import override
from loguru import logger
from modules.alignment_prompts import render_reflection_prompt
from modules.planner import ToolId
from modules.tools.base_tool import ChatToolBase, ExecutionContext


class ReflectorTool(ChatToolBase):
    """
    Shows the model its initial choice and lets it confirm or revise it.
    """
    tool_id = ToolId.REFLECTOR
    tag = "reflect"
    definition = "Checks the alignment result again and proposes a better match when there is one."
    usage = "Reflector[source_entity, candidates, initial_alignment] -> confirmed or revised target"

    @override
    def run(self, context: ExecutionContext):
        prompt = render_reflection_prompt(context.source, context.source_triples(), context.candidate_blocks(),
                                          context.initial_prediction)
        context.refined_prediction = self.ask_for_candidate(context, prompt)
        if context.refined_prediction != context.initial_prediction:
            logger.debug(f"Reflector revised {context.source}: {context.initial_prediction} -> {context.refined_prediction}")
