pub mod gradcheck;
pub mod pipeline_ref;
pub mod reference;
