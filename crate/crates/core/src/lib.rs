pub mod corpus;
pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod evaluation;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;
