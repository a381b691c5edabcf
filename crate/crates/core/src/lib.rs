pub mod audit;
pub mod blocks;
pub mod cluster;
pub mod cost;
pub mod dynamics;
pub mod extractor;
pub mod field;
pub mod ncrypt;
pub mod prf;
pub mod repair;
pub mod spacemac;
pub mod wire;
