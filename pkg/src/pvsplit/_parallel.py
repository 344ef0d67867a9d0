"""Order-preserving thread fan-out; the compiled kernels release the GIL."""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(threads=None) -> int:
    if threads is None:
        threads = int(os.environ.get("PVSPLIT_THREADS", os.cpu_count() or 1))
    return max(1, int(threads))


def pmap(fn, items, threads=None):
    items = list(items)
    n = min(worker_count(threads), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
