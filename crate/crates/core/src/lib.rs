//! Evolution of convolutional network structures with an asynchronous
//! master/worker search.

pub mod dataset;
pub mod genome;
pub mod mutation;
pub mod protocol;
pub mod search;
pub mod train;
