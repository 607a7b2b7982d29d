//! Core library for assessing pictorial realism of painted skies.
//!
//! The pipeline has two branches. The classification branch segments each
//! painting into sky and non-sky, blacks out the non-sky region, and runs a
//! feature-fusion CNN (classic stream plus frozen multi-scale edge features)
//! to predict the cloud type, optionally refined with pseudo-label
//! semi-supervised training. The style branch trains a toy content–style
//! disentangler per collection and compares collections through normalized
//! style distances (`D_style`), Information-Over-Bias ratios, and `R_style`.
//! A statistics module supplies the hypothesis tests used to compare corpora,
//! and `pipeline` ties everything together behind a cached, reproducible run.
//!
//! Data-parallel inner loops (batch image work, convolution panels, pairwise
//! distances) run on rayon when the default `parallel` feature is enabled and
//! fall back to plain iterators without it; see [`parallel`].

pub mod blockio;
pub mod corpus;
pub mod edgefeat;
pub mod fixtures;
pub mod fusionnet;
pub mod imgio;
pub mod parallel;
pub mod nn;
pub mod pipeline;
pub mod skyseg;
pub mod stats;
pub mod styledist;
