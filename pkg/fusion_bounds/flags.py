import os
from typing import Optional


class Flags:
    @classmethod
    def verbose(cls) -> bool:
        return os.getenv("FUSION_BOUNDS_VERBOSE", "") == "y"

    @classmethod
    def threads(cls) -> Optional[int]:
        value = os.getenv("FUSION_BOUNDS_THREADS", None)
        if value is None or value.strip() == "":
            return None
        return int(value)

    @classmethod
    def resolve_threads(cls, requested: Optional[int]) -> int:
        if requested is not None:
            return max(1, requested)
        from_env = cls.threads()
        if from_env is not None:
            return max(1, from_env)
        return os.cpu_count() or 1
