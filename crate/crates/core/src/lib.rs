//! Discrete active-inference model of translation effort and relevance.
//!
//! A translator works through a source text token by token. Habitual
//! (s-mode) processing emits default targets cheaply; a free-energy monitor
//! hands surprising tokens to deliberate (i-mode) processing, which pays for
//! belief updating and for departing from habit. Relevance is the negative
//! free energy of the whole session.

pub mod agent;
pub mod belief;
pub mod config;
pub mod field;
pub mod free_energy;
pub mod scenarios;
pub mod tu_stream;
pub mod validate;
pub mod world;
