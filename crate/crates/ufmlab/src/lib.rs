//! Laboratory for deep linear and deep ReLU unconstrained feature models:
//! full-batch training to convergence, assembly of every layer-wise matrix
//! of interest (Hessian, its class/cross/within decomposition, gradient
//! covariance, backpropagation-error moments, weight and feature Grams), and
//! verification of the closed-form spectral structure that deep neural
//! collapse induces at the optimum.

pub mod analysis;
pub mod experiment;

pub mod model;
pub mod numerics;
pub mod theory;
pub mod training;
