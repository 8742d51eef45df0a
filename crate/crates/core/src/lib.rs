pub mod corpus;
pub mod eval;
pub mod hpo;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod training;
