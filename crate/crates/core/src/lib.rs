//! Filter-level pruning for convolutional networks.
//!
//! A filter of one conv layer is removed when the *next* layer can do without
//! the channel it produces. Channels are chosen greedily to keep the next
//! layer's response on sampled positions, the remaining channels are rescaled
//! by least squares, and the network is edited in place.
//!
//! ```no_run
//! use thinner::{data, pipeline, zoo, ModelGraph};
//!
//! let arch = zoo::toy_chain([3, 16, 16], [16, 16, 16], 4)?;
//! let model = ModelGraph::init(arch, 0)?;
//! let set = data::generate_synthetic(&data::SyntheticSpec::new(4, 50, [3, 16, 16]), 1)?;
//! let schedule = pipeline::uniform_schedule(&["conv1", "conv2"], 0.5);
//! let (pruned, report) =
//!     pipeline::prune_network(&model, Some(&set), &schedule, pipeline::Method::Thinet, &Default::default())?;
//! println!("{} -> {} params", report.params_before, report.params_after);
//! # let _ = pruned;
//! # Ok::<(), thinner::Error>(())
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod finetune;
pub mod graph;
pub mod io;
pub mod lsq;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod selection;
pub mod surgery;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use graph::{Architecture, LayerKind, LayerSpec, ModelGraph};
pub use tensor::{Scalar, Shape, Tensor};
