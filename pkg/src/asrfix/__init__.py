"""asrfix: correction pipeline for game-voice ASR transcripts.

Modules:
    metrics    text normalization, alignment, CER/SER scoring
    kb         terminology knowledge base (mining, retrieval, persistence)
    prompts    n-best correction prompts and SFT export
    llm        LLM gateway: backends, response parsing, fallback, mocks
    simulate   simulated ASR error channels
    audio      mono 16-bit PCM clips and WAV I/O
    augment    text expansion, mock TTS, noise mixing, dataset manifests
    corpus     utterance corpus JSONL interchange
    pipeline   the correction pipeline and evaluation harness
    service    FastAPI correction service
    cli        command-line entry points
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
