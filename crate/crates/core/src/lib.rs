pub mod data;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod glove;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod tree;
pub mod vocab;
