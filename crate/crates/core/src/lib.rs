//! Interactive stock cluster analysis: data-driven correlation networks fused
//! with knowledge-driven multi-view clustering.

pub mod corrnet;
pub mod ingest;
pub mod knowledge;
pub mod mvclust;
pub mod prism;
pub mod session;
pub mod store;
pub mod synth;
