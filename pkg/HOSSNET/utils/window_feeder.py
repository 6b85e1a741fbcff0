import logging
import threading
from queue import Empty, Full, Queue
from typing import Any, Callable, Iterator, List, Optional, Sequence

_DONE = object()


class WindowFeeder:
    """
    Prepares training batches on a worker thread and hands them to the single
    training thread through a bounded queue.

    Batches arrive in exactly the order of ``batches``; the worker only
    overlaps batch assembly with the optimizer step.
    """

    def __init__(
        self,
        make_batch: Callable[[Sequence[int]], Any],
        batches: Sequence[Sequence[int]],
        max_prepared: int = 2,
    ):
        if max_prepared < 1:
            raise ValueError(f"max_prepared must be >= 1, got {max_prepared}")

        self.make_batch = make_batch
        self.batches: List[Sequence[int]] = list(batches)
        self.running: bool = False
        self.batch_queue: Queue = Queue(maxsize=max_prepared)
        self.worker_thread: Optional[threading.Thread] = None

    def _put(self, item) -> bool:
        while self.running:
            try:
                self.batch_queue.put(item, timeout=0.1)
                return True
            except Full:
                continue
        return False

    def _produce(self):
        """Assemble every batch in order, then post the end marker."""
        for indices in self.batches:
            if not self.running:
                return
            try:
                batch = self.make_batch(indices)
            except Exception as e:
                logging.error(f"Failed to assemble batch {list(indices)}: {e}")
                self._put(e)
                return
            if not self._put(batch):
                return
        self._put(_DONE)

    def start(self):
        self.running = True
        self.worker_thread = threading.Thread(target=self._produce, daemon=True)
        self.worker_thread.start()

    def stop(self):
        """Stop the worker and drop batches that were never consumed."""
        self.running = False
        try:
            while True:
                self.batch_queue.get_nowait()
        except Empty:
            pass
        if self.worker_thread is not None:
            self.worker_thread.join(timeout=5)
            self.worker_thread = None

    def __iter__(self) -> Iterator[Any]:
        if not self.running:
            self.start()
        try:
            while True:
                item = self.batch_queue.get()
                if item is _DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.stop()
