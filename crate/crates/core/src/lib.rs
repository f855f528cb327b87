pub mod graph;
pub mod keypoints;
pub mod tensor;
pub mod network;
pub mod harness;
