mod activation;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resize;
mod shape;
mod softmax;

pub use activation::Activation;
pub use conv::{conv2d_forward, conv_out_extent, conv_transpose2d_forward};
pub use linalg::matmul;
pub use resize::{bicubic_resize, bilinear_resize_forward, keys_kernel};
pub use shape::concat_channels;
pub use softmax::softmax_rows;

pub(crate) use linalg::{matmul_nt, matmul_raw};
pub(crate) use softmax::softmax_in_place;
