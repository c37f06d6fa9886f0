//! Corpus model, file format, cold-start split protocols and the synthetic
//! cascade generator.

mod corpus;
mod featurize;
mod sample;
mod split;
mod synthetic;
mod tree;

pub use corpus::{load_dataset, read_corpus, save_dataset, write_corpus, CorpusManifest};
pub use featurize::HashedFeaturizer;
pub(crate) use featurize::fnv1a_hex;
pub use sample::{make_training_copies, strip_propagation, Label, NewsSample};
pub use split::{
    events, split_event_aware, split_general, split_general_with, train_count, DatasetSplit, SplitDescriptor,
};
pub use synthetic::{generate_synthetic, summarize, CorpusSummary, SyntheticConfig};
pub use tree::{PropagationTree, TreeNode};
