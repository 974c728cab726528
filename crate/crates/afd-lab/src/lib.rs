//! Deterministic workbench for asynchronous failure detectors.
//!
//! The modules follow the pipeline: [`ioa`] runs composed automata under a
//! fair scheduler, [`afd`] checks detector traces, [`observation`] builds
//! DAGs of detector outputs, [`tree`] and [`gadget`] analyse the execution
//! trees they induce, and [`extraction`] turns the analysis into an emulated
//! Ω. [`harness`] drives whole scenarios and [`dot`] renders Graphviz.

pub mod afd;
pub mod consensus;
pub mod dot;
pub mod extraction;
pub mod gadget;
pub mod harness;
pub mod ioa;
pub mod observation;
pub mod system;
pub mod text;
pub mod tree;

// The book's snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/automata.md")]
    mod automata {}
    #[doc = include_str!("../../../book/src/detectors.md")]
    mod detectors {}
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
