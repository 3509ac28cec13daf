"""Prompt templates for the LLM-backed manager, answer agent and judge.

The instruction blocks are kept byte-for-byte so that stub scripts keyed on
the rendered prompt stay valid; only the slot suffixes are ours.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

MANAGER_INSTRUCTIONS = """\
You are a smart memory manager which controls the memory of a system.
You can perform four operations: (1) add into the memory, (2) update the
memory, (3) delete from the memory, and (4) no change.

Based on the above four operations, the memory will change.

Compare newly retrieved facts with the existing memory. For each new fact,
decide whether to:
- ADD: Add it to the memory as a new element
- UPDATE: Update an existing memory element
- DELETE: Delete an existing memory element
- NONE: Make no change (if the fact is already present or irrelevant)

1. **Add**: If the retrieved facts contain new information not present
in the memory, then you have to add it by generating a new ID in the id field.

- Example:
    Old Memory:
        [
            {"id" : "0", "text" : "User is a software engineer"}
        ]
    Retrieved facts: ["Name is John"]

    New Memory:
        {
            "memory" : [
                {"id" : "0", "text" : "User is a software engineer", "event" : "NONE"},
                {"id" : "1", "text" : "Name is John", "event" : "ADD"}
            ]
        }
2. **Update**: If the retrieved facts contain information that is already
present in the memory but the information is totally different, then
you have to update it.

If the retrieved fact contains information that conveys the same thing as
the memory, keep the version with more detail.

Example (a) – if the memory contains "User likes to play cricket" and the
retrieved fact is "Loves to play cricket with friends", then update the
memory with the retrieved fact.

Example (b) – if the memory contains "Likes cheese pizza" and the
retrieved fact is "Loves cheese pizza", then do NOT update it because they
convey the same information.

Important: When updating, keep the same ID and preserve old_memory.

- Example:
    Old Memory:
        [
            {"id" : "0", "text" : "I really like cheese pizza"},
            {"id" : "2", "text" : "User likes to play cricket"}
        ]
    Retrieved facts: ["Loves chicken pizza", "Loves to play cricket with friends"]

    New Memory:
        {
        "memory" : [
            {"id" : "0", "text" : "Loves cheese and chicken pizza", "event" : "UPDATE",
             "old_memory" : "I really like cheese pizza"},
            {"id" : "2", "text" : "Loves to play cricket with friends", "event" : "UPDATE",
             "old_memory" : "User likes to play cricket"}
        ]
        }
3. **Delete**: If the retrieved facts contain information that contradicts
the memory, delete it. When deleting, return the same IDs — do not generate new IDs.

- Example:
    Old Memory:
        [
            {"id" : "1", "text" : "Loves cheese pizza"}
        ]
    Retrieved facts: ["Dislikes cheese pizza"]

    New Memory:
        {
        "memory" : [
            {"id" : "1", "text" : "Loves cheese pizza", "event" : "DELETE"}
        ]
        }

4. **No Change**: If the retrieved facts are already present, make no change.

- Example:
    Old Memory:
        [
            {"id" : "0", "text" : "Name is John"}
        ]
    Retrieved facts: ["Name is John"]

    New Memory:
        {
        "memory" : [
            {"id" : "0", "text" : "Name is John", "event" : "NONE"}
        ]
        }
"""

# The two worked outputs used as parser fixtures.
MANAGER_ADD_EXAMPLE_OUTPUT = """\
{
    "memory" : [
        {"id" : "0", "text" : "User is a software engineer", "event" : "NONE"},
        {"id" : "1", "text" : "Name is John", "event" : "ADD"}
    ]
}"""

MANAGER_UPDATE_EXAMPLE_OUTPUT = """\
{
"memory" : [
    {"id" : "0", "text" : "Loves cheese and chicken pizza", "event" : "UPDATE",
     "old_memory" : "I really like cheese pizza"},
    {"id" : "2", "text" : "Loves to play cricket with friends", "event" : "UPDATE",
     "old_memory" : "User likes to play cricket"}
]
}"""

MANAGER_DELETE_EXAMPLE_OUTPUT = """\
{
"memory" : [
    {"id" : "1", "text" : "Loves cheese pizza", "event" : "DELETE"}
]
}"""

MANAGER_NONE_EXAMPLE_OUTPUT = """\
{
"memory" : [
    {"id" : "0", "text" : "Name is John", "event" : "NONE"}
]
}"""

ANSWER_INSTRUCTIONS = """\
You are an intelligent memory assistant tasked with retrieving
accurate information from conversation memories.

# CONTEXT:
You have access to memories from two speakers in a conversation.
These memories contain timestamped information that may be relevant
to answering the question.

# INSTRUCTIONS:
1. Carefully analyze all provided memories from both speakers
2. Pay special attention to the timestamps to determine the answer
3. If the question asks about a specific event or fact, look for direct evidence
4. If the memories contain contradictory information, prioritize the most recent memory
5. If there is a question about time references (like "last year", "two months ago"),
   calculate the actual date based on the memory timestamp.
6. Always convert relative time references to specific dates, months, or years.
7. Focus only on the content of the memories. Do not confuse character names
8. The answer should be less than 5-6 words.
9. IMPORTANT: Select memories you found that are useful for answering the questions,
and output it before you answer questions.
10. IMPORTANT: Output the final answer after **Answer:**

# APPROACH (Think step by step):
1. Examine all relevant memories
2. Examine the timestamps carefully
3. Look for explicit mentions that answer the question
4. Convert relative references if needed
5. Formulate a concise answer
6. Double-check the answer correctness
7. Ensure the final answer is specific
8. First output the memories that you found are important before you answer questions
"""

JUDGE_TEMPLATE = """\
Your task is to label an answer to a question as 'CORRECT' or 'WRONG'.
You will be given the following data:
    (1) a question (posed by one user to another user),
    (2) a 'gold' (ground truth) answer,
    (3) a generated answer,
which you will score as CORRECT or WRONG.

The point of the question is to ask about something one user should know about the other user based on their
prior conversations.

The gold answer will usually be a concise and short answer that includes the referenced topic, for example:
Question: Do you remember what I got the last time I went to Hawaii?
Gold answer: A shell necklace

The generated answer might be longer, but you should be generous with your grading — as long as it touches
on the same topic as the gold answer, it should be counted as CORRECT.

For time-related questions, the gold answer will be a specific date, month, or year. The generated answer
might include relative references (e.g., "last Tuesday"), but you should be generous — if it refers to
the same time period as the gold answer, mark it CORRECT, even if the format differs (e.g., "May 7th" vs.
"7 May").

Now it's time for the real question:
Question: {question}
Gold answer: {gold_answer}
Generated answer: {generated_answer}

First, provide a short (one sentence) explanation of your reasoning, then finish with CORRECT or WRONG.
Do NOT include both CORRECT and WRONG in your response, or it will break the evaluation script.

Return the label in JSON format with the key as "label".
"""


def _memory_list(records: Iterable[dict]) -> str:
    rows = [json.dumps({"id": r["id"], "text": r["text"]}, ensure_ascii=False) for r in records]
    if not rows:
        return "[]"
    return "[\n" + ",\n".join(f"    {row}" for row in rows) + "\n]"


def render_manager_prompt(old_memory: Sequence[dict], facts: Sequence[str]) -> str:
    """Instructions followed by the current memory and the new facts."""
    return (
        MANAGER_INSTRUCTIONS
        + "\nOld Memory:\n"
        + _memory_list(old_memory)
        + "\nRetrieved facts: "
        + json.dumps(list(facts), ensure_ascii=False)
        + "\n\nNew Memory:\n"
    )


def render_answer_prompt(question: str, sections: Sequence[tuple[str, Sequence[tuple[str | None, str]]]]) -> str:
    """``sections`` is ``[(speaker, [(timestamp, text), ...]), ...]`` in display order."""
    parts = [ANSWER_INSTRUCTIONS]
    for speaker, memories in sections:
        lines = [f"Memories for user {speaker}:"]
        for timestamp, text in memories:
            lines.append(f"- {timestamp}: {text}" if timestamp else f"- {text}")
        parts.append("\n".join(lines) + "\n")
    parts.append(f"Question: {question}\n")
    return "\n".join(parts)


def render_judge_prompt(question: str, gold_answer: str, generated_answer: str) -> str:
    return JUDGE_TEMPLATE.format(question=question, gold_answer=gold_answer, generated_answer=generated_answer)
