"""Order-preserving map over a process pool, used for per-file work."""

from concurrent.futures import ProcessPoolExecutor

from tqdm import tqdm


def parallel_map(fn, items, jobs=1, desc=None):
    """fn(item) for every item, results in input order; jobs <= 1 runs inline"""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=desc is None, leave=False)]

    chunksize = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = pool.map(fn, items, chunksize=chunksize)
        return list(tqdm(results, total=len(items), desc=desc, disable=desc is None, leave=False))
