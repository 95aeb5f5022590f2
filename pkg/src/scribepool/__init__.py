"""scribepool: batched real-time transcription serving for many clients.

One shared speech engine, one scheduler cycle: every client that has new
audio contributes a clip to a single batched inference call, and the
results flow back through per-client hypothesis buffers that confirm
text only once two consecutive passes agree on it.
"""

from .engine import (
    ASREngine,
    EngineRequest,
    ExternalEngine,
    LatencyModel,
    MockEngine,
    MockScript,
    PerturbConfig,
)
from .hypothesis import HypothesisBuffer
from .scheduler import CycleMetrics, ReadinessPolicy, Scheduler
from .server import StreamServer
from .service import ClientService
from .transport import ProtocolError, TranscriptUpdate
from .types import (
    AudioChunk,
    ClipDescriptor,
    SAMPLE_RATE,
    Segment,
    StreamError,
    WordToken,
)

__version__ = "0.1.0"

__all__ = [
    "ASREngine",
    "AudioChunk",
    "ClientService",
    "ClipDescriptor",
    "CycleMetrics",
    "EngineRequest",
    "ExternalEngine",
    "HypothesisBuffer",
    "LatencyModel",
    "MockEngine",
    "MockScript",
    "PerturbConfig",
    "ProtocolError",
    "ReadinessPolicy",
    "SAMPLE_RATE",
    "Scheduler",
    "Segment",
    "StreamError",
    "StreamServer",
    "TranscriptUpdate",
    "WordToken",
    "__version__",
]
