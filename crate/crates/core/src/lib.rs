pub mod attack;
pub mod harness;
pub mod hex;
pub mod mem;
pub mod os;
pub mod par;
pub mod soc;
pub mod xmpu;

#[cfg(test)]
mod testkit;
