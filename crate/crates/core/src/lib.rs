//! Release-testing toolkit.
//!
//! Two halves:
//!
//! * automated behavior-driven testing: [`lang`] parses and binds scenarios,
//!   [`netsim`] simulates a network of application instances on a virtual
//!   clock, and [`orchestrator`] runs scenarios against fresh simulations;
//! * manual testing: [`lifecycle`] is the role-restricted test-case state
//!   machine and [`session`] plans and tracks phased test sessions.

pub mod lang;
pub mod lifecycle;
pub mod netsim;
pub mod orchestrator;
pub mod session;
