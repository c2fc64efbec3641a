from typing_extensions import override
from modules.alignment_prompts import render_alignment_prompt
from modules.planner import ToolId
from modules.tools.base_tool import ChatToolBase, ExecutionContext


class AlignmentTool(ChatToolBase):
    """
    Asks the model which candidate matches the source entity.
    """
    tool_id = ToolId.ALIGNMENT
    tag = "align"
    definition = "Picks the target entity from the candidate list that matches the source entity."
    usage = "EntityAlignmentTool[source_entity, candidates] -> best target entity"

    @override
    def run(self, context: ExecutionContext):
        prompt = render_alignment_prompt(context.source, context.source_triples(), context.candidate_blocks())
        context.initial_prediction = self.ask_for_candidate(context, prompt)
