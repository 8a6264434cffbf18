"""
Batch worker for seeded episodes
Runs independent episodes serially or across a process pool
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

R = TypeVar("R")


class BatchWorker:
    """Maps an episode function over seeds with at most `jobs` concurrent processes"""

    def __init__(self, jobs: int = 1):
        """
        Initialize batch worker

        Args:
            jobs: Maximum number of concurrent episodes (1 runs in-process)
        """
        if jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {jobs}")
        self.jobs = jobs

    def map(self, episode: Callable[[int], R], seeds: Sequence[int]) -> List[R]:
        """
        Run one episode per seed

        Args:
            episode: Picklable callable taking a seed
            seeds: Seeds to run, results come back in the same order

        Returns:
            List of episode results
        """
        seeds = list(seeds)
        if self.jobs == 1 or len(seeds) <= 1:
            logger.info(f"Running {len(seeds)} episodes serially")
            return [episode(seed) for seed in seeds]

        workers = min(self.jobs, len(seeds))
        logger.info(f"Running {len(seeds)} episodes on {workers} processes")
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(episode, seeds))
