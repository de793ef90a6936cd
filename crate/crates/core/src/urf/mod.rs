//! Unsupervised random forests and random-forest activation patterns.
//!
//! A forest is trained to tell extracted features from a contrast sample
//! drawn from their column marginals. Every node then gets a path index, and
//! the similarity of two samples is the positional agreement of their
//! terminal indices averaged over trees.

mod forest;
mod matrix;
mod rfap;
mod tree;

pub use forest::{synthesize_contrast, train_urf, Forest, UrfParams};
pub use matrix::SimilarityMatrix;
pub use rfap::{
    breiman_proximity, path_similarity_oracle, rfap_encode, rfap_similarity, similarity_matrix,
    RfapVector,
};
pub use tree::{index_tree, Tree, TreeNode};
