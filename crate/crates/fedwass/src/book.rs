//! Compiles the guide's code blocks as doc-tests so the book and the API
//! cannot drift apart.

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        pub mod $name {}
    };
}

chapter!(introduction, "../../../book/src/introduction.md");
chapter!(measures, "../../../book/src/measures.md");
chapter!(solvers, "../../../book/src/solvers.md");
chapter!(geodesics, "../../../book/src/geodesics.md");
chapter!(augmentation, "../../../book/src/augmentation.md");
chapter!(protocol, "../../../book/src/protocol.md");
chapter!(valuation, "../../../book/src/valuation.md");
chapter!(cli, "../../../book/src/cli.md");
