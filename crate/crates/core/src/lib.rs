//! Desk-scale model of brute-force attacks on hash-addressed wallets, and of
//! a consensus-level defense that freezes stolen funds when a victim proves
//! key ownership with a colliding public key.
//!
//! The crate is a dependency chain: [`crypto`] (address pipeline, one-time
//! signatures), [`script`] (a tiny stack VM for output locks), [`ledger`]
//! (UTXO chain state), [`evidence`] (the freeze protocol), [`attacker`]
//! (search strategies over the address index) and [`analysis`] (success
//! probabilities, exact and bounded).

pub mod analysis;
pub mod attacker;
pub mod crypto;
pub mod evidence;
pub mod ledger;
pub mod script;
