"""Earthquake damage assessment from social-media posts with multimodal language models.

Modules: ``corpus`` (loading, term filtering), ``geo`` (gazetteer, distances),
``mllm`` (provider-agnostic chat client), ``prompts`` (templates, response
parsing), ``assess`` (pipeline, city aggregation), ``validate`` (statistics).
"""

__version__ = "0.1.0"
