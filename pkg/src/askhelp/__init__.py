"""Grid-world object navigation with an ask-for-help action and a likelihood-map
measure of what the agent still does not know."""

__version__ = "0.1.0"
