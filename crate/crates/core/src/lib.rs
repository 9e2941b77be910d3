#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eigdist;
pub mod error;
pub mod quantizer;
pub mod randmat;
pub mod schemes;
pub mod sim;
pub mod special;
pub mod tradeoff;
