//! Downlink coverage manifolds over explicit city geometry.

pub mod geometry;
pub mod ingest;
pub mod rng;
pub mod channel;
pub mod losmodel;
pub mod simcore;
pub mod lsq;
pub mod quad;
pub mod sgcov;
pub mod mlcov;
pub mod manifold;
