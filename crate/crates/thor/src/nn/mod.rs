//! Minimal neural-network machinery for the epsilon predictor: conv/linear
//! layers with hand-written backprop, a small U-shaped network with FiLM
//! time conditioning, and an Adam optimizer. Everything is f64 and strictly
//! deterministic.

mod adam;
mod layers;
mod unet;

pub use adam::Adam;
pub use layers::{Conv2d, Film, Linear};
pub use unet::{sinusoidal_embedding, Unet, UnetCache};

/// Mutable view over one parameter tensor and its gradient accumulator.
pub struct ParamMut<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Read-only view used for serialization.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a [f64],
}

pub trait ParamVisitor {
    /// Visits every parameter in a fixed deterministic order.
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>));
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>));
}
