"""Deterministic, model-free stand-in for the T2I model and every agent role.

Prompts follow a small closed grammar (see :mod:`.grammar`); the mock T2I model
renders them into :class:`SceneSpec` records with seeded, prompt-sensitive
corruption (see :mod:`.scene`), and the mock agents answer questions about those
scenes exactly.
"""
from .agents import SyntheticAgents, SyntheticT2I, scene_png
from .grammar import GrammarError, parse_prompt
from .oracle import UnsupportedAspect, caption_scene, compare_caption, defect_key, mock_vqa_answer
from .scene import (
    Constraint,
    ObjectSpec,
    SceneSpec,
    SyntheticTask,
    constraints,
    corruption_probability,
    default_profile,
    intended_scene,
    render_scene,
    task_from_prompt,
)
from .tactics import full_mitigation
from .tasks import BAOZI_PROMPT, baozi_task, generate_tasks

__all__ = [name for name in dir() if not name.startswith("_")]
