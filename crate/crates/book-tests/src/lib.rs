//! Compiles and runs the code listings in `book/src` as doctests, so the
//! guide cannot drift from the API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("../../../book/src/acquisition.md")]
pub mod acquisition {}
#[doc = include_str!("../../../book/src/escalation.md")]
pub mod escalation {}
#[doc = include_str!("../../../book/src/trials.md")]
pub mod trials {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
