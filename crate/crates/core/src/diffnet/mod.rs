//! Reverse-mode differentiation, InfoNCE and Adam.

pub mod adam;
pub mod check;
pub mod loss;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState, GroupSettings};
pub use check::{check_gradients, rel_err, GradCheck};
pub use loss::{choose_negatives, info_nce, info_nce_rows, info_nce_value, Negatives};
pub use tape::{sigmoid, Tape, Var};
