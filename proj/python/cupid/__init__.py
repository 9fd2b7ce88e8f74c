"""Python bindings for the cupid corpus curation engine."""

from ._cupid import (
    Corpus,
    CupidError,
    CurationManifest,
    ManifestRow,
    build_similarity_matrix,
    cli_main,
    curate_avg_sim,
    curate_heuristic,
    curate_knn,
    decode_video,
    exclude_overlap,
    ingest_shard,
    make_uniform_windows,
    merge_consecutive_subtitles,
    nce_loss,
    nce_loss_grad,
    negative_set,
    pair_similarity,
    rank_queries,
    split_steps,
    stream_column_means,
    stream_row_topk,
    summarize,
    tokenize_title,
    write_manifest,
    write_shard,
)

__version__ = "0.1.0"
__all__ = [name for name in dir() if not name.startswith("_")]
