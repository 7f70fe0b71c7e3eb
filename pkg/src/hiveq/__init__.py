"""hiveq: containerized distributed value-based multi-agent RL.

Collection containers (k actors + local prioritized buffer + local learner
behind a non-blocking multi-queue manager) feed the top fraction of their
prioritized trajectories to a central QMIX-style learner, which broadcasts
the shared lower layers back while each container's policy head is pushed
to stay diverse from the container average.
"""

__version__ = "0.1.0"
