"""Dataset persistence, verification and statistics."""

from dexgen.dataset.stats import (
    PCAResult,
    StatsReport,
    compute_stats,
    hull_contains,
    pca,
    projections_csv,
    projections_svg,
)
from dexgen.dataset.store import (
    DIGEST_ALGORITHM,
    FORMAT_VERSION,
    DatasetError,
    DatasetWriter,
    EpisodeRecord,
    iter_episodes,
    load_demo,
    parse_episode,
    read_dataset,
    read_episode,
    read_manifest,
    read_sources,
    replay_check,
    save_demo,
    verify,
    write_dataset,
)


def stats(root) -> StatsReport:
    """Statistics of a dataset directory, with its source demos as the reference set."""
    manifest = read_manifest(root)
    return compute_stats(iter_episodes(root, manifest), read_sources(root, manifest))


__all__ = [
    "DIGEST_ALGORITHM",
    "FORMAT_VERSION",
    "DatasetError",
    "DatasetWriter",
    "EpisodeRecord",
    "PCAResult",
    "StatsReport",
    "compute_stats",
    "hull_contains",
    "iter_episodes",
    "load_demo",
    "parse_episode",
    "pca",
    "projections_csv",
    "projections_svg",
    "read_dataset",
    "read_episode",
    "read_manifest",
    "read_sources",
    "replay_check",
    "save_demo",
    "stats",
    "verify",
    "write_dataset",
]
