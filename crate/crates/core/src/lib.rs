pub mod analytics;
pub mod annsim;
pub mod campaign;
pub mod cropgeom;
pub mod maskcore;
pub(crate) mod par;
pub mod ranker;
pub mod refine;
pub mod rgb;
pub mod synth;
