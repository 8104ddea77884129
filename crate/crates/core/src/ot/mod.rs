//! Exact discrete optimal transport: assignment and transportation solvers,
//! plain, conditional and relaxed distances, plan conversions and a
//! Kantorovich–Rubinstein duality certificate for the conditional distance.

pub mod assignment;
pub mod cost;
pub mod distance;
pub mod dual;
pub mod lp;
pub mod plan;
pub mod transport;

pub use assignment::{solve_assignment, Assignment};
pub use cost::{cost_matrix, joint_cost_matrix, CostSpec};
pub use distance::{conditional_wasserstein, relaxed_wasserstein, wasserstein, ConditionCost, OtSolution};
pub use dual::{dual_certificate, ConditionPotential, DualCertificate};
pub use plan::{plan3_to_plan4, plan4_to_plan3, y_leakage, Plan3, Plan3Entry, Plan4, PlanRecord};
pub use transport::{solve_transport, PlanEntry, TransportPlan};

#[cfg(test)]
mod tests;
