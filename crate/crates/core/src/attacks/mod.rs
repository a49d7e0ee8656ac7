//! Maximum-damage input attacks and likelihood degradation probes.
//!
//! The attack maximises the expected distance between reconstructions of a
//! perturbed input and the clean reference reconstruction, under an L2 budget.
//! Targets restrict which encoder outputs see the perturbation.

mod metrics;
mod objective;
mod pgd;

pub use metrics::{damage_distribution, degradation, noise_sensitivity, NoisePoint};
pub use objective::{damage, damage_and_gradient, AttackTarget};
pub use pgd::{attack_with_warm_start, budget_sweep, margin_attack, max_damage_attack, AttackConfig, AttackResult};
