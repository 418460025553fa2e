//! Agentic C/C++-to-HDL design pipeline.
//!
//! Turns a C/C++ algorithm into a functionally verified Verilog design by
//! driving a code-generating language model through a staged flow:
//!
//! 1. decompose the program into submodules and check the decomposition by
//!    re-integrating and diffing against the original testbench;
//! 2. generate per-submodule specs and HDL, repairing syntax failures with
//!    retrieval-augmented rule matching over a compiler-error rule library;
//! 3. differentially verify each submodule against an HLS-synthesized golden
//!    reference and repair functional mismatches with step-wise reasoning
//!    prompts;
//! 4. integrate the verified submodules into a top-level design with boundary
//!    instrumentation, localizing integration faults by backward slicing;
//! 5. report pass rates, area/power comparisons, and line counts.
//!
//! Every external tool sits behind an adapter with a real command-template
//! binding and a deterministic mock binding, so the whole flow runs offline
//! in tests.

pub mod decomposer;
pub mod diff_verify;
pub mod gateway;
pub mod hdlgen;
pub mod integrator;
pub mod metrics;
pub mod pipeline;
pub mod rag;
pub mod toolchain;
pub mod trace;
pub mod workspace;
