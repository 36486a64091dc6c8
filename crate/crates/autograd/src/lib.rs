//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! ```
//! use sfas_autograd::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap().with_grad());
//! let loss = x.square().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod element;
mod error;
pub mod gradcheck;
mod init;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use init::xavier_uniform;
pub use ops::{sigmoid, softplus};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
