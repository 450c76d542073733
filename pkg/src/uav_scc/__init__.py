"""QoS-oriented sensing, communication and control co-design for UAV-anchored
UE positioning: models, scheduling policies and a seeded slot simulator."""

__version__ = "0.1.0"
