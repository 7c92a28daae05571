//! Plant models: the two-link exoskeleton leg, the 1-DOF manipulator,
//! joint friction, Euler discretisation and Jacobians.

mod friction;
mod jacobian;
mod one_dof;
mod plant;
mod two_link;

pub use friction::{sgn, stribeck_friction, StribeckParams};
pub use jacobian::{numerical_jacobian, REL_STEP};
pub use one_dof::{one_dof_transition, OneDofParams};
pub use plant::{ExoPlant, LinearPlant, OneDofPlant, PlantModel};
pub use two_link::{
    exo_transition, forward_dynamics, inverse_dynamics, mass_condition, rk4_step, total_energy,
    two_link_terms, JointVec, TwoLinkParams, TwoLinkTerms, MASS_COND_CAP,
};
pub(crate) use two_link::checked_inverse;
