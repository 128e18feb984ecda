//! Quadrotor rigid-body model, rotor allocation and rotor-failure reduction.

mod allocation;
mod params;
mod rigid_body;

pub use allocation::{build_allocation_matrix, embed_reduced, reduce_allocation, AllocationModel, ReducedAllocation};
pub use params::QuadrotorParams;
pub use rigid_body::{
    gyroscopic_moment, state_derivative, step_dynamics, RigidBodyState, RotorCommand, StateDerivative,
};
