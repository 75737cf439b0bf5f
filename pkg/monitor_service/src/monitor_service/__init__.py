"""Learned monitors for the step-level cascade.

Two binary sequence classifiers (stuck and milestone) are fine-tuned on
labeled rolling-window datasets and served over the monitor wire protocol
(POST /score). Milestone inputs are conditioned on the task description;
stuck inputs are not.
"""

__version__ = "0.1.0"
