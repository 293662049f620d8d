#![allow(dead_code)]

pub mod gradient;
