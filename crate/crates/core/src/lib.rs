//! Model-robust experimental designs for calibrating computer models, and the
//! two-step calibration used to evaluate them.

pub mod design;
pub mod calibrate;
pub mod doe;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod reduce;
pub mod rng;
pub mod simulate;
pub mod sobol;
pub mod spacefill;
pub mod surrogate;

pub use design::{Design, DesignPoint, Role};
pub use error::{Error, Result};
pub use model::{ComputerModel, Interval};
