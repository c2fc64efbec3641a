import json
from loguru import logger
from modules.errors import UnknownTool
from modules.planner import ToolId, ToolPath
from modules.tools.alignment_tool import AlignmentTool
from modules.tools.attribute_selector_tool import AttributeSelectorTool
from modules.tools.base_tool import ExecutionContext, ToolBase
from modules.tools.reflector_tool import ReflectorTool
from modules.tools.relation_selector_tool import RelationSelectorTool


class ToolManager:
    """
    Manages the tool pool: registration, the pool definition shown to the
    planner, and dispatching the steps of a path to their tools.
    """
    def __init__(self):
        """
        Initializes an empty ToolManager.
        """
        self.tools: dict[ToolId, ToolBase] = {}

    def register_tool(self, tool: ToolBase):
        """
        Registers a tool under its tool id, replacing any previous one.

        :param tool: The tool instance to register.
        :type tool: ToolBase
        """
        self.tools[tool.tool_id] = tool

    def get_tool(self, tool_id: ToolId) -> ToolBase:
        """
        Retrieves a registered tool.

        :param tool_id: The tool to look up.
        :type tool_id: ToolId
        :return: The tool instance.
        :rtype: ToolBase
        :raises UnknownTool: If no tool is registered under that id.
        """
        if tool_id not in self.tools:
            raise UnknownTool(str(getattr(tool_id, "value", tool_id)))
        return self.tools[tool_id]

    def tool_pool_text(self) -> str:
        """
        Renders the registered tools as the JSON tool pool definition used in
        the planning prompt, in :class:`ToolId` order.
        """
        pool = [self.tools[t].describe() for t in ToolId if t in self.tools]
        return json.dumps(pool, indent=2, ensure_ascii=False)

    def run_path(self, path: ToolPath, context: ExecutionContext):
        """
        Runs every step of a path on the context, in order.

        :param path: The validated tool path.
        :type path: ToolPath
        :param context: State of the entity being aligned.
        :type context: ExecutionContext
        """
        for step in path.steps:
            logger.trace(f"{context.source}: running {step.value}")
            self.get_tool(step).run(context)


def default_tool_manager() -> ToolManager:
    """
    A manager holding the four standard tools.
    """
    manager = ToolManager()
    for tool in (AttributeSelectorTool(), RelationSelectorTool(), AlignmentTool(), ReflectorTool()):
        manager.register_tool(tool)
    return manager
