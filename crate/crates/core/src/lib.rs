pub mod codec;
pub mod data;
pub mod evaluation;
pub mod networks;
pub mod stc;
pub mod tensor;
pub mod tooling;
pub mod training;
