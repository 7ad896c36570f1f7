//! Three-class (HC / PD / SWEDD) classification from several imaging
//! modalities: DTI scalar maps, ADASYN oversampling, small CNNs trained from
//! scratch and decision-level fusion of their probability outputs.

pub mod adasyn;
pub mod cnn;
pub mod datamodel;
pub mod dti;
pub mod eval;
pub mod fusion;
