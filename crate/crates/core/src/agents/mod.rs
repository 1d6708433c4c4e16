//! Agent populations.

pub mod cross;
pub mod fw;
pub mod lls;
