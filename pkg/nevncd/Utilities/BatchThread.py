import queue
import threading


class BatchThread(threading.Thread):
    """
    Thread for preparing the JointBatches of one epoch, one step ahead of the optimizer
    The optimizer thread owns the parameters; this thread only touches the sampler and its own rng.
    An exception raised while sampling is handed over in place of the batch and re-raised by next().
    """

    def __init__(self, sampler, rng, steps: int):
        """
        :param sampler: JointSampler
        :param rng: numpy Generator of the epoch
        :param steps: number of batches to prepare
        """
        super(BatchThread, self).__init__(daemon=True)

        # VARIABLES --------------------------------------------------------------------------------
        self.sampler = sampler
        self.rng = rng
        self.steps = steps
        self.batches = queue.Queue(maxsize=1)
        self._stopEvent = threading.Event()

    def run(self):
        for _ in range(self.steps):
            if self._stopEvent.is_set():
                return
            try:
                batch = self.sampler.makeBatch(self.rng)
            except Exception as e:
                self.batches.put(e)
                return
            self.batches.put(batch)

    def next(self):
        """
        :return: the next JointBatch, in sampling order
        """
        item = self.batches.get()
        if isinstance(item, Exception):
            raise item
        return item

    def abort(self):
        """
        Stops the thread after the batch it is preparing
        """
        self._stopEvent.set()
        # free a producer blocked on a full queue
        try:
            self.batches.get_nowait()
        except queue.Empty:
            pass
        self.join()


class BatchSequence:
    """
    Iterates the batches of one epoch, either prepared by a BatchThread or drawn inline
    Both paths draw from the same rng in the same order, so they yield identical batches
    """

    def __init__(self, sampler, rng, steps: int, prefetch: bool = True):
        self.sampler = sampler
        self.rng = rng
        self.steps = steps
        self.thread = BatchThread(sampler, rng, steps) if prefetch else None

    def __enter__(self):
        if self.thread is not None:
            self.thread.start()
        return self

    def __exit__(self, excType, excValue, traceback):
        if self.thread is not None and self.thread.is_alive():
            self.thread.abort()
        return False

    def __iter__(self):
        for _ in range(self.steps):
            if self.thread is not None:
                yield self.thread.next()
            else:
                yield self.sampler.makeBatch(self.rng)
