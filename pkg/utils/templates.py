"""
Text Templates
==============
Centralised Jinja2 templates for every human-readable dump the CLI prints:
message files, scene summaries and round summaries.

OUTPUT RULES:
1. Fixed field order so dumps diff cleanly between runs
2. Floats at fixed precision (6 decimals for values, 4 for metrics)
3. One record per line below the header block
"""

from functools import lru_cache

from jinja2 import Environment, StrictUndefined


# Message dump - one header block, then one line per cell
MESSAGE_DUMP_TEMPLATE = """\
SPARSE MESSAGE v{{ version }}
agent_id:            {{ msg.agent_id }}
grid:                {{ msg.height }} x {{ msg.width }}
channels_compressed: {{ msg.channels_compressed }}
cell_count:          {{ msg.cell_count }}
size:                {{ total_bytes }} bytes ({{ size_bits }} bits)
flags:               all set
{% for cell in cells -%}
cell {{ cell.index }} (y={{ cell.y }}, x={{ cell.x }}): {{ cell["values"] | map("fmt6") | join(" ") }}
{% endfor -%}
{% if hidden > 0 -%}
... {{ hidden }} more cells
{% endif -%}
"""

# Scene summary - geometry first, then agents
SCENE_SUMMARY_TEMPLATE = """\
SCENE seed={{ scene.seed }}
extent:     {{ scene.height }} x {{ scene.width }} cells at {{ scene.meters_per_cell }} m/cell
objects:    {{ scene.objects | length }}
{% for obj in scene.objects -%}
  target {{ loop.index0 }}: rows {{ obj.y0 }}-{{ obj.y1 - 1 }}, cols {{ obj.x0 }}-{{ obj.x1 - 1 }}
{% endfor -%}
occluders:  {{ scene.occluders | length }}
{% for occ in scene.occluders -%}
  occluder {{ loop.index0 }}: rows {{ occ.y0 }}-{{ occ.y1 - 1 }}, cols {{ occ.x0 }}-{{ occ.x1 - 1 }}
{% endfor -%}
agents:     {{ scene.agents | length }}
{% for agent in scene.agents -%}
  agent {{ loop.index0 }}: y={{ "%.2f" | format(agent.y) }} x={{ "%.2f" | format(agent.x) }} heading={{ "%.3f" | format(agent.heading) }}
{% endfor -%}
"""

# Round summary - per agent fused vs no-fusion metrics
ROUND_SUMMARY_TEMPLATE = """\
ROUND seed={{ seed }} epoch={{ epoch }} strategy={{ strategy }} ratio={{ ratio }}
{% for row in rows -%}
agent {{ row.agent }}: recall {{ "%.4f" | format(row.recall) }} (baseline {{ "%.4f" | format(row.baseline_recall) }}), precision {{ "%.4f" | format(row.precision) }}, iou {{ "%.4f" | format(row.iou) }}, sent {{ row.bits_sent }} bits, received {{ row.bits_received }} bits, rejected {{ row.rejected_msgs }}
{% endfor -%}
"""

TEMPLATES = {
    "message_dump": MESSAGE_DUMP_TEMPLATE,
    "scene_summary": SCENE_SUMMARY_TEMPLATE,
    "round_summary": ROUND_SUMMARY_TEMPLATE,
}


@lru_cache(maxsize=1)
def _environment() -> Environment:
    env = Environment(undefined=StrictUndefined, keep_trailing_newline=True, autoescape=False)
    env.filters["fmt6"] = lambda value: f"{value:.6f}"
    return env


def get_template(name: str):
    """Compiled template by name"""
    try:
        source = TEMPLATES[name]
    except KeyError:
        raise KeyError(f"unknown template: {name}") from None
    return _environment().from_string(source)


def render_template(name: str, **context) -> str:
    return get_template(name).render(**context)
