//! File format, fixtures, DOT export, random generation and the command
//! line front end.

pub mod app;
pub mod dot;
pub mod fixtures;
pub mod gen;
pub mod io;
