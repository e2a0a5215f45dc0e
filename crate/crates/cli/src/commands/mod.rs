pub mod explain;
pub mod flip;
pub mod render;
pub mod train;

pub use explain::{cmd_explain, explain_image, ExplainOutcome, Explanation};
pub use flip::{cmd_flip, flip_image, FlipOutcome, FlipSetup, FlipSummary};
pub use render::{cmd_render, read_aggregate_csv, RenderOutcome};
pub use train::{cmd_train, TrainOutcome};
