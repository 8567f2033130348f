//! Dense tensor numerics with tape-based reverse-mode differentiation.
//!
//! Everything is generic over the element type through [`Scalar`]; the
//! aliases at the crate root pin the 64-bit variants used by the rest of the
//! workspace.
//!
//! ```
//! use numkit::{Tape, Tensor};
//!
//! let x = Tensor::<f64>::from_f64(vec![1, 2], &[3.0, -1.0]).unwrap();
//! let mut tape = Tape::new();
//! let v = tape.variable(x);
//! let sq = tape.square(v);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(v).data(), &[6.0, -2.0]);
//! ```

mod adam;
mod backward;
mod checkpoint;
mod error;
mod gradcheck;
mod kernels;
pub mod nn;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use backward::Gradients;
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use error::{NumError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

/// 64-bit tensor.
pub type Tensor64 = Tensor<f64>;
/// 64-bit tape.
pub type Tape64<'a> = Tape<'a, f64>;
/// 64-bit parameter store.
pub type ParamStore64 = ParamStore<f64>;
/// 64-bit Adam state.
pub type AdamState64 = AdamState<f64>;
