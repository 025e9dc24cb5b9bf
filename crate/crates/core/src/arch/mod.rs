//! Union branches, union blocks and the full Union-net.

mod block;
mod net;
mod report;
mod unit;
mod weights;

pub use block::{BlockCache, BranchCache, UnionBlock, UnionBranch, BRANCH_DEPTHS};
pub use net::{
    ForwardCache, GradientBundle, NetConfig, ParamRef, SkipTaps, UnionNet, BLOCK_COUNT,
    DEFAULT_WIDTH, MAX_WIDTH,
};
pub use report::{model_report, receptive_field, ModelReport};
pub use unit::{ConvUnit, UnitCache, UnitGrads};
pub(crate) use weights::write_weights;
pub use weights::{
    decode_weights, decode_weights_into, encode_weights, load_weights, load_weights_into,
    save_weights, WEIGHT_MAGIC, WEIGHT_VERSION,
};
