//! Scalar diffraction: angular-spectrum propagation and the linear hologram
//! operator used by the inverse problem.

mod fft;
mod field;
mod operator;
mod propagation;

pub use fft::{signed_index, Fft2};
pub use field::{ComplexField2D, VolumeGeometry};
pub use operator::{adjoint, data_gradient, forward, ForwardModel};
pub use propagation::{
    is_fully_propagating, propagate, propagate_with, transfer_function, transfer_kernel,
};
