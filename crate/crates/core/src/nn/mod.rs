//! Small neural-network toolkit on top of `candle-core`: parameter storage,
//! the layers shared by generator and discriminator, and Adam.

pub mod layers;
pub mod optim;
pub mod params;

pub use layers::{conv2d, leaky_relu, luma, max_pool2x2, sigmoid, softmax, upsample2x, BatchNorm2d, Conv2d, ConvOpts, ConvTranspose2d, RunMode};
pub use optim::Adam;
pub use params::{seeded_rng, Init, ParamStore};
