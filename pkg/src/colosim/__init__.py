"""colosim: trace-driven simulator for co-located online/offline LLM serving.

Models a cluster split into latency-relaxed and latency-strict instances,
replays online traces against uniform-QPS offline streams, and predicts
iteration latency with a roofline operator model.
"""

__version__ = "0.1.0"
