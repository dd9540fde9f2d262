pub mod counters;
pub mod grammar;
pub mod pda;
pub mod reach;
pub mod chart;
pub mod token;
pub mod oracle;
pub mod decode;
pub mod prob;
pub mod condition;
pub mod rewrite;
pub mod perf;
pub mod selftest;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grammars.md")]
    mod grammars {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/forests.md")]
    mod forests {}
    #[doc = include_str!("../../../book/src/conditioning.md")]
    mod conditioning {}
    #[doc = include_str!("../../../book/src/rewriting.md")]
    mod rewriting {}
    #[doc = include_str!("../../../book/src/performance.md")]
    mod performance {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
