//! Deterministic simulator and formal-model checker for implicit rowhammer:
//! hammering DRAM rows that hold page tables through the hardware page walk.

pub mod attack;
pub mod cache;
pub mod cli;
pub mod config;
pub mod dram;
pub mod eviction;
pub mod memgraph;
pub mod mmu;
pub mod report;
pub mod tlb;
