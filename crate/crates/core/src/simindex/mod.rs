//! Rank-based comparison of two representation spaces.
//!
//! For every point, neighbors are ranked by distance in each space. The
//! information imbalance `Delta(A -> B)` is the normalized mean B-rank of
//! each point's A-nearest-neighbor; the similarity score is one minus the
//! mean of both directions. Because the score only depends on the first
//! neighbor in each space, the score path never builds full rank matrices:
//! it finds the nearest neighbor and counts how many points precede it in
//! the other space, O(N) per row. [`rank_matrix`] is kept for inspection and
//! as the reference the fast path is checked against.
//!
//! With perfectly matching neighborhoods every first neighbor has rank 1,
//! so the largest attainable score at finite N is `1 - 2/N`.

mod curve;
mod distance;
mod rank;

pub use curve::{
    curves_to_csv, derived_subsample_seed, half_subsamples, non_identity_permutation,
    score_distances, score_with_error, shuffle_control, similarity, similarity_curve, Condition,
    CurvePoint, SimilarityCurve, CURVE_CSV_HEADER, SUBSAMPLE_COUNT,
};
pub use distance::{euclidean_distances, pairwise_distances, DistanceMatrix, UNIT_NORM_TOLERANCE};
pub use rank::{
    imbalance_on, information_imbalance, rank_matrix, similarity_on, tie_key, top_k_neighbors,
    RankMatrix,
};
