"""
Prompt templates for planning, alignment, reflection and path rewriting.
"""

from string import Formatter
from typing import Any
from modules.errors import MissingPlaceholder

PLANNING_TEMPLATE = """You plan tool calls for an entity alignment agent.

Rules:
1. Start with one or two filtering tools (AttributeTripleSelector, RelationTripleSelector).
2. Then call EntityAlignmentTool to pick the matching target entity.
3. Add Reflector at the end only when the best candidate similarities are close together.

Tools:
{tool_pool}

Entity: {entity_iri}
Statistics:
- Attribute triples: {attr_cnt_all}
- Attribute types: {attr_cnt}
- Relation triples: {rel_cnt_all}
- Relation types: {rel_cnt}
- Has name attribute: {signal_attr}
- Candidate similarities: top1={top1_score}, top2={top2_score}, top3={top3_score}

Answer with numbered tool names only, one per line:
1. <ToolName>
2. <ToolName>
3. <ToolName> (optional)
4. <ToolName> (optional)"""

ALIGNMENT_TEMPLATE = """Find the entity of another knowledge graph that denotes the same real-world object as the source entity.
Entities are described by (subject, predicate, object) triples. Candidates are listed from most to least similar.

Entity: {source_iri}
Triples:
{source_triples}

Candidates:
{candidate_blocks}

Reply with the IRI of the best matching candidate in brackets:
[IRI]"""

REFLECTION_TEMPLATE = """You already picked a match for the source entity below from a list of candidate entities of another knowledge graph.
Check that choice again.

Entity: {source_iri}
Triples:
{source_triples}

Candidates:
{candidate_blocks}

Initial choice: {initial_choice}

If the initial choice is the best match, repeat it. Otherwise give the better candidate.
Reply with the IRI in brackets:
[IRI]"""

REWRITE_TEMPLATE = """You improve the tool path used to align one entity, based on the reward it earned.

Entity: {entity}
Candidate similarities: {top1_score}, {top2_score}, {top3_score}
Previous tools: {old_tools}
Reward: {reward}

Tools:
- AttributeTripleSelector
- RelationTripleSelector
- EntityAlignmentTool
- Reflector (only when similarities are close)

Write a better tool sequence.
Answer with numbered tool names only, one per line:
1. <ToolName>
2. <ToolName>
3. <ToolName> (optional)
4. <ToolName> (optional)"""

REPAIR_NOTE = ("\n\nYour previous answer was not a valid tool path ({reason}). Use one or two selectors, "
               "then EntityAlignmentTool, then optionally Reflector, one numbered line each.")

ANSWER_NOTE = "\n\nYour previous reply did not contain a candidate IRI. Reply with exactly one candidate IRI in brackets."


def placeholders(template: str) -> list[str]:
    """
    Names of the ``{placeholder}`` fields of a template, in order of appearance.
    """
    return [name for _, name, _, _ in Formatter().parse(template) if name]


def fill_template(template: str, **values: Any) -> str:
    """
    Substitutes every placeholder of a template.

    :param template: A ``str.format`` style template.
    :type template: str
    :return: The rendered text.
    :rtype: str
    :raises MissingPlaceholder: If a placeholder has no value or its value is None.
    """
    for name in placeholders(template):
        if values.get(name) is None:
            raise MissingPlaceholder(name)
    return template.format(**values)
