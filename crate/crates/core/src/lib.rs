pub mod corpus;
pub mod doctaet;
pub mod evaluator;
pub mod nli;
pub mod pipeline;
pub mod scorer;
pub mod synthetic;
pub mod tei;
pub mod text;
