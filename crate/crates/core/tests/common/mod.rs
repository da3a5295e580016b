#![allow(dead_code)]

pub mod pseudospin;
